#include <qbayes/adam.hpp>

#include <stdexcept>

namespace qbayes {

Adam::Adam(std::vector<ParamRef> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const ParamRef& p : params_) {
    if (p.value == nullptr || p.grad == nullptr)
      throw std::invalid_argument("adam parameter '" + p.name + "' lacks value or gradient storage");
    m_.push_back(Mat::Zero(p.value->rows(), p.value->cols()));
    v_.push_back(Mat::Zero(p.value->rows(), p.value->cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Mat& g = *params_[i].grad;
    if (!g.allFinite())
      throw std::runtime_error("non-finite gradient for parameter '" + params_[i].name + "'");
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    params_[i].value->array() -=
        cfg_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
  }
}

}  // namespace qbayes
