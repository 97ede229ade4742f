#include <qbayes/graph.hpp>

#include <algorithm>
#include <cmath>

namespace qbayes::ad {

namespace {

std::string shape_str(int r, int c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

[[noreturn]] void fail(const std::string& what) { throw GraphError(what); }

}  // namespace

NodeId Graph::push(Node n) {
  n.value.setZero(n.rows, n.cols);
  nodes_.push_back(std::move(n));
  forward_done_ = false;
  backward_done_ = false;
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::check(NodeId id) const {
  if (id < 0 || id >= size()) fail("node id " + std::to_string(id) + " out of range");
}

NodeId Graph::input(const std::string& name, int rows, int cols, bool needs_grad) {
  if (rows <= 0 || cols <= 0) fail("input '" + name + "' has empty shape " + shape_str(rows, cols));
  Node n;
  n.op = Op::Input;
  n.rows = rows;
  n.cols = cols;
  n.name = name;
  n.requires_grad = needs_grad;
  return push(std::move(n));
}

NodeId Graph::param(const std::string& name, int rows, int cols) {
  if (rows <= 0 || cols <= 0) fail("param '" + name + "' has empty shape " + shape_str(rows, cols));
  Node n;
  n.op = Op::Param;
  n.rows = rows;
  n.cols = cols;
  n.name = name;
  n.requires_grad = true;
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
  check(a);
  check(b);
  const Node& na = nodes_[a];
  const Node& nb = nodes_[b];
  const int ar = trans_a ? na.cols : na.rows;
  const int ak = trans_a ? na.rows : na.cols;
  const int bk = trans_b ? nb.cols : nb.rows;
  const int bc = trans_b ? nb.rows : nb.cols;
  if (ak != bk)
    fail("matmul inner mismatch: " + shape_str(na.rows, na.cols) + (trans_a ? "^T" : "") +
         " * " + shape_str(nb.rows, nb.cols) + (trans_b ? "^T" : ""));
  Node n;
  n.op = Op::MatMul;
  n.a = a;
  n.b = b;
  n.trans_a = trans_a;
  n.trans_b = trans_b;
  n.rows = ar;
  n.cols = bc;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  check(a);
  check(b);
  const Node& na = nodes_[a];
  const Node& nb = nodes_[b];
  if (na.rows != nb.rows || na.cols != nb.cols)
    fail("add shape mismatch: " + shape_str(na.rows, na.cols) + " vs " + shape_str(nb.rows, nb.cols));
  Node n;
  n.op = Op::Add;
  n.a = a;
  n.b = b;
  n.rows = na.rows;
  n.cols = na.cols;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
  check(a);
  check(b);
  const Node& na = nodes_[a];
  const Node& nb = nodes_[b];
  if (na.rows != nb.rows || na.cols != nb.cols)
    fail("sub shape mismatch: " + shape_str(na.rows, na.cols) + " vs " + shape_str(nb.rows, nb.cols));
  Node n;
  n.op = Op::Sub;
  n.a = a;
  n.b = b;
  n.rows = na.rows;
  n.cols = na.cols;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  check(a);
  check(b);
  const Node& na = nodes_[a];
  const Node& nb = nodes_[b];
  if (na.rows != nb.rows || na.cols != nb.cols)
    fail("mul shape mismatch: " + shape_str(na.rows, na.cols) + " vs " + shape_str(nb.rows, nb.cols));
  Node n;
  n.op = Op::Mul;
  n.a = a;
  n.b = b;
  n.rows = na.rows;
  n.cols = na.cols;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double c) {
  check(a);
  Node n;
  n.op = Op::Scale;
  n.a = a;
  n.scale = c;
  n.rows = nodes_[a].rows;
  n.cols = nodes_[a].cols;
  n.requires_grad = nodes_[a].requires_grad;
  return push(std::move(n));
}

NodeId Graph::add_rowvec(NodeId a, NodeId row) {
  check(a);
  check(row);
  const Node& na = nodes_[a];
  const Node& nr = nodes_[row];
  if (nr.rows != 1 || nr.cols != na.cols)
    fail("add_rowvec expects (1x" + std::to_string(na.cols) + ") broadcast, got " +
         shape_str(nr.rows, nr.cols) + " against " + shape_str(na.rows, na.cols));
  Node n;
  n.op = Op::AddRowVec;
  n.a = a;
  n.b = row;
  n.rows = na.rows;
  n.cols = na.cols;
  n.requires_grad = na.requires_grad || nr.requires_grad;
  return push(std::move(n));
}

NodeId Graph::unary(Op op, NodeId a) {
  check(a);
  Node n;
  n.op = op;
  n.a = a;
  n.rows = nodes_[a].rows;
  n.cols = nodes_[a].cols;
  n.requires_grad = nodes_[a].requires_grad;
  return push(std::move(n));
}

NodeId Graph::celu(NodeId a) { return unary(Op::Celu, a); }
NodeId Graph::relu(NodeId a) { return unary(Op::Relu, a); }
NodeId Graph::sigmoid(NodeId a) { return unary(Op::Sigmoid, a); }
NodeId Graph::tanh(NodeId a) { return unary(Op::Tanh, a); }

NodeId Graph::row_max(NodeId a) {
  check(a);
  Node n;
  n.op = Op::RowMax;
  n.a = a;
  n.rows = nodes_[a].rows;
  n.cols = 1;
  n.requires_grad = nodes_[a].requires_grad;
  n.argmax.assign(n.rows, 0);
  return push(std::move(n));
}

NodeId Graph::mean(NodeId a) {
  check(a);
  Node n;
  n.op = Op::Mean;
  n.a = a;
  n.rows = 1;
  n.cols = 1;
  n.requires_grad = nodes_[a].requires_grad;
  return push(std::move(n));
}

NodeId Graph::sum(NodeId a) {
  check(a);
  Node n;
  n.op = Op::Sum;
  n.a = a;
  n.rows = 1;
  n.cols = 1;
  n.requires_grad = nodes_[a].requires_grad;
  return push(std::move(n));
}

NodeId Graph::col_mean(NodeId a) {
  check(a);
  Node n;
  n.op = Op::ColMean;
  n.a = a;
  n.rows = 1;
  n.cols = nodes_[a].cols;
  n.requires_grad = nodes_[a].requires_grad;
  return push(std::move(n));
}

NodeId Graph::group_row_sum(NodeId a, int group_size) {
  check(a);
  const Node& na = nodes_[a];
  if (group_size <= 0 || na.rows % group_size != 0)
    fail("group_row_sum: group size " + std::to_string(group_size) + " does not divide " +
         std::to_string(na.rows) + " rows");
  Node n;
  n.op = Op::GroupRowSum;
  n.a = a;
  n.group = group_size;
  n.rows = na.rows / group_size;
  n.cols = na.cols;
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

NodeId Graph::transpose(NodeId a) {
  check(a);
  Node n;
  n.op = Op::Transpose;
  n.a = a;
  n.rows = nodes_[a].cols;
  n.cols = nodes_[a].rows;
  n.requires_grad = nodes_[a].requires_grad;
  return push(std::move(n));
}

NodeId Graph::concat_cols(NodeId a, NodeId b) {
  check(a);
  check(b);
  const Node& na = nodes_[a];
  const Node& nb = nodes_[b];
  if (na.rows != nb.rows)
    fail("concat_cols row mismatch: " + shape_str(na.rows, na.cols) + " vs " +
         shape_str(nb.rows, nb.cols));
  Node n;
  n.op = Op::ConcatCols;
  n.a = a;
  n.b = b;
  n.rows = na.rows;
  n.cols = na.cols + nb.cols;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

void Graph::bind(const std::string& name, const Mat* storage) { bind(find(name), storage); }

void Graph::bind(NodeId id, const Mat* storage) {
  check(id);
  Node& n = nodes_[id];
  if (n.op != Op::Input && n.op != Op::Param)
    fail("bind target '" + std::to_string(id) + "' is not an input or param");
  if (storage == nullptr) fail("bind of '" + n.name + "' to null storage");
  if (storage->rows() != n.rows || storage->cols() != n.cols)
    fail("bind of '" + n.name + "' expects " + shape_str(n.rows, n.cols) + ", got " +
         shape_str(static_cast<int>(storage->rows()), static_cast<int>(storage->cols())));
  n.bound = storage;
}

NodeId Graph::find(const std::string& name) const {
  for (int i = 0; i < size(); ++i)
    if (!nodes_[i].name.empty() && nodes_[i].name == name) return i;
  fail("no node named '" + name + "'");
}

const Mat& Graph::val(const Node& n) const {
  if (n.op == Op::Input || n.op == Op::Param) return *n.bound;
  return n.value;
}

void Graph::forward() {
  for (Node& n : nodes_) {
    switch (n.op) {
      case Op::Input:
      case Op::Param: {
        if (n.bound == nullptr) fail("'" + n.name + "' is unbound at forward");
        if (n.bound->rows() != n.rows || n.bound->cols() != n.cols)
          fail("'" + n.name + "' bound storage changed shape");
        if (!n.bound->allFinite()) fail("'" + n.name + "' holds non-finite values");
        break;
      }
      case Op::MatMul: {
        const Mat& A = val(nodes_[n.a]);
        const Mat& B = val(nodes_[n.b]);
        if (!n.trans_a && !n.trans_b)
          n.value.noalias() = A * B;
        else if (n.trans_a && !n.trans_b)
          n.value.noalias() = A.transpose() * B;
        else if (!n.trans_a && n.trans_b)
          n.value.noalias() = A * B.transpose();
        else
          n.value.noalias() = A.transpose() * B.transpose();
        break;
      }
      case Op::Add:
        n.value = val(nodes_[n.a]) + val(nodes_[n.b]);
        break;
      case Op::Sub:
        n.value = val(nodes_[n.a]) - val(nodes_[n.b]);
        break;
      case Op::Mul:
        n.value = val(nodes_[n.a]).cwiseProduct(val(nodes_[n.b]));
        break;
      case Op::Scale:
        n.value = n.scale * val(nodes_[n.a]);
        break;
      case Op::AddRowVec:
        n.value = val(nodes_[n.a]).rowwise() + val(nodes_[n.b]).row(0);
        break;
      case Op::Celu: {
        const Mat& A = val(nodes_[n.a]);
        n.value = A.unaryExpr([](double x) { return x >= 0.0 ? x : std::expm1(x); });
        break;
      }
      case Op::Relu:
        n.value = val(nodes_[n.a]).cwiseMax(0.0);
        break;
      case Op::Sigmoid: {
        const Mat& A = val(nodes_[n.a]);
        n.value = A.unaryExpr([](double x) {
          if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
          const double e = std::exp(x);
          return e / (1.0 + e);
        });
        break;
      }
      case Op::Tanh:
        n.value = val(nodes_[n.a]).array().tanh();
        break;
      case Op::RowMax: {
        const Mat& A = val(nodes_[n.a]);
        for (int r = 0; r < A.rows(); ++r) {
          int best = 0;
          double bv = A(r, 0);
          for (int c = 1; c < A.cols(); ++c)
            if (A(r, c) > bv) {
              bv = A(r, c);
              best = c;
            }
          n.value(r, 0) = bv;
          n.argmax[r] = best;
        }
        break;
      }
      case Op::Mean:
        n.value(0, 0) = val(nodes_[n.a]).mean();
        break;
      case Op::Sum:
        n.value(0, 0) = val(nodes_[n.a]).sum();
        break;
      case Op::ColMean:
        n.value = val(nodes_[n.a]).colwise().mean();
        break;
      case Op::GroupRowSum: {
        const Mat& A = val(nodes_[n.a]);
        const int g = n.group;
        if (g == 1) {
          n.value = A;
          break;
        }
        std::vector<double> buf(g);
        for (int r = 0; r < n.rows; ++r)
          for (int c = 0; c < n.cols; ++c) {
            for (int k = 0; k < g; ++k) buf[k] = A(r * g + k, c);
            std::sort(buf.begin(), buf.end());
            double s = 0.0;
            for (double v : buf) s += v;
            n.value(r, c) = s;
          }
        break;
      }
      case Op::Transpose:
        n.value = val(nodes_[n.a]).transpose();
        break;
      case Op::ConcatCols: {
        const Mat& A = val(nodes_[n.a]);
        const Mat& B = val(nodes_[n.b]);
        n.value.leftCols(A.cols()) = A;
        n.value.rightCols(B.cols()) = B;
        break;
      }
    }
  }
  forward_done_ = true;
}

void Graph::backward(NodeId output) {
  check(output);
  if (!forward_done_) fail("backward called before forward");
  const Node& out = nodes_[output];
  if (out.rows != 1 || out.cols != 1)
    fail("backward output must be scalar, got " + shape_str(out.rows, out.cols));

  for (Node& n : nodes_)
    if (n.requires_grad) n.grad.setZero(n.rows, n.cols);
  if (!nodes_[output].requires_grad)
    fail("backward output does not depend on any gradient-tracked node");
  nodes_[output].grad(0, 0) = 1.0;

  for (NodeId id = output; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) continue;
    const Mat& G = n.grad;
    Node* pa = n.a >= 0 ? &nodes_[n.a] : nullptr;
    Node* pb = n.b >= 0 ? &nodes_[n.b] : nullptr;
    const bool ga = pa && pa->requires_grad;
    const bool gb = pb && pb->requires_grad;
    switch (n.op) {
      case Op::Input:
      case Op::Param:
        break;
      case Op::MatMul: {
        const Mat& A = val(*pa);
        const Mat& B = val(*pb);
        if (ga) {
          Mat gA;
          if (!n.trans_b)
            gA.noalias() = G * B.transpose();
          else
            gA.noalias() = G * B;
          if (!n.trans_a)
            pa->grad += gA;
          else
            pa->grad += gA.transpose();
        }
        if (gb) {
          Mat gB;
          if (!n.trans_a)
            gB.noalias() = A.transpose() * G;
          else
            gB.noalias() = A * G;
          if (!n.trans_b)
            pb->grad += gB;
          else
            pb->grad += gB.transpose();
        }
        break;
      }
      case Op::Add:
        if (ga) pa->grad += G;
        if (gb) pb->grad += G;
        break;
      case Op::Sub:
        if (ga) pa->grad += G;
        if (gb) pb->grad -= G;
        break;
      case Op::Mul:
        if (ga) pa->grad += G.cwiseProduct(val(*pb));
        if (gb) pb->grad += G.cwiseProduct(val(*pa));
        break;
      case Op::Scale:
        if (ga) pa->grad += n.scale * G;
        break;
      case Op::AddRowVec:
        if (ga) pa->grad += G;
        if (gb) pb->grad += G.colwise().sum();
        break;
      case Op::Celu:
        if (ga) {
          const Mat& A = val(*pa);
          pa->grad.array() +=
              G.array() * A.unaryExpr([](double x) { return x >= 0.0 ? 1.0 : std::exp(x); }).array();
        }
        break;
      case Op::Relu:
        if (ga) {
          const Mat& A = val(*pa);
          pa->grad.array() +=
              G.array() * A.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; }).array();
        }
        break;
      case Op::Sigmoid:
        if (ga) pa->grad.array() += G.array() * (n.value.array() * (1.0 - n.value.array()));
        break;
      case Op::Tanh:
        if (ga) pa->grad.array() += G.array() * (1.0 - n.value.array().square());
        break;
      case Op::RowMax:
        if (ga)
          for (int r = 0; r < n.rows; ++r) pa->grad(r, n.argmax[r]) += G(r, 0);
        break;
      case Op::Mean:
        if (ga) pa->grad.array() += G(0, 0) / static_cast<double>(pa->rows * pa->cols);
        break;
      case Op::Sum:
        if (ga) pa->grad.array() += G(0, 0);
        break;
      case Op::ColMean:
        if (ga) pa->grad.rowwise() += (G.row(0) / static_cast<double>(pa->rows));
        break;
      case Op::GroupRowSum:
        if (ga)
          for (int r = 0; r < pa->rows; ++r) pa->grad.row(r) += G.row(r / n.group);
        break;
      case Op::Transpose:
        if (ga) pa->grad += G.transpose();
        break;
      case Op::ConcatCols:
        if (ga) pa->grad += G.leftCols(pa->cols);
        if (gb) pb->grad += G.rightCols(pb->cols);
        break;
    }
  }
  backward_done_ = true;
}

const Mat& Graph::value(NodeId id) const {
  check(id);
  if (!forward_done_) fail("value read before forward");
  return val(nodes_[id]);
}

const Mat& Graph::grad(NodeId id) const {
  check(id);
  if (!backward_done_) fail("gradient read before backward");
  const Node& n = nodes_[id];
  if (!n.requires_grad) fail("node " + std::to_string(id) + " does not track gradients");
  return n.grad;
}

const Mat& Graph::grad(const std::string& name) const { return grad(find(name)); }

const Mat& forward(Graph& g, const std::vector<std::pair<std::string, const Mat*>>& inputs) {
  for (const auto& [name, storage] : inputs) g.bind(name, storage);
  g.forward();
  return g.value(g.size() - 1);
}

void backward(Graph& g, NodeId output) { g.backward(output); }

}  // namespace qbayes::ad
