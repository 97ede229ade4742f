#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <qbayes/tensor.hpp>

namespace qbayes {

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ParamRef {
  std::string name;
  Mat* value = nullptr;
  const Mat* grad = nullptr;
};

// Bias-corrected Adam over a fixed list of parameter tensors. The learning
// rate is mutable between steps so a schedule can drive it.
class Adam {
 public:
  Adam(std::vector<ParamRef> params, AdamConfig cfg = {});

  void step();
  double& lr() { return cfg_.lr; }
  int steps_taken() const { return t_; }

 private:
  std::vector<ParamRef> params_;
  AdamConfig cfg_;
  std::vector<Mat> m_, v_;
  int t_ = 0;
};

inline double lr_schedule(double lr0, double decay, int epoch) {
  return lr0 * std::pow(decay, epoch);
}

}  // namespace qbayes
