#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <qbayes/tensor.hpp>

namespace qbayes::ad {

struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Op {
  Input,
  Param,
  MatMul,       // optional transpose on either operand
  Add,
  Sub,
  Mul,          // elementwise
  Scale,        // constant * tensor
  AddRowVec,    // (n x m) + broadcast (1 x m)
  Celu,
  Relu,
  Sigmoid,
  Tanh,
  RowMax,       // (n x m) -> (n x 1); gradient routed to the argmax only,
                // ties broken toward the lowest column index
  Mean,         // -> (1 x 1)
  Sum,          // -> (1 x 1)
  ColMean,      // (n x m) -> (1 x m)
  GroupRowSum,  // (g*b x m) -> (b x m); each output row sums a contiguous
                // group of g input rows, accumulated in value-sorted order so
                // the result is invariant to permutations within a group
  Transpose,
  ConcatCols,
};

using NodeId = int;

struct Node {
  Op op;
  NodeId a = -1, b = -1;
  double scale = 0.0;  // Scale payload
  int group = 0;       // GroupRowSum payload
  bool trans_a = false, trans_b = false;
  int rows = 0, cols = 0;
  std::string name;  // inputs and params only
  bool requires_grad = false;
  const Mat* bound = nullptr;  // external storage for Input/Param
  Mat value;
  Mat grad;
  std::vector<int> argmax;  // RowMax cache
};

// Define-by-run tape over row-major double matrices. Shapes are fixed at
// construction; inputs and params are bound to external storage, so a graph
// can be built once and re-run as the bound values change.
class Graph {
 public:
  NodeId input(const std::string& name, int rows, int cols, bool needs_grad = false);
  NodeId param(const std::string& name, int rows, int cols);

  NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  NodeId add_rowvec(NodeId a, NodeId row);
  NodeId celu(NodeId a);
  NodeId relu(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  NodeId row_max(NodeId a);
  NodeId mean(NodeId a);
  NodeId sum(NodeId a);
  NodeId col_mean(NodeId a);
  NodeId group_row_sum(NodeId a, int group_size);
  NodeId transpose(NodeId a);
  NodeId concat_cols(NodeId a, NodeId b);

  void bind(const std::string& name, const Mat* storage);
  void bind(NodeId id, const Mat* storage);

  void forward();
  void backward(NodeId output);

  const Mat& value(NodeId id) const;
  const Mat& grad(NodeId id) const;
  const Mat& grad(const std::string& name) const;
  NodeId find(const std::string& name) const;

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  bool forward_done() const { return forward_done_; }

 private:
  NodeId push(Node n);
  const Mat& val(const Node& n) const;
  NodeId unary(Op op, NodeId a);
  void check(NodeId id) const;

  std::vector<Node> nodes_;
  bool forward_done_ = false;
  bool backward_done_ = false;
};

// Convenience wrappers matching the bind-then-run calling convention.
const Mat& forward(Graph& g, const std::vector<std::pair<std::string, const Mat*>>& inputs);
void backward(Graph& g, NodeId output);

}  // namespace qbayes::ad
