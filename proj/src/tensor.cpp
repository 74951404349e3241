#include "mttu/tensor.hpp"

#include <cmath>
#include <numeric>
#include <unordered_set>

namespace mttu {

namespace {
bool g_check_finite = true;
}

int shape_numel(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("nonpositive extent in shape");
    n *= d;
  }
  return n;
}

void set_check_finite(bool enabled) { g_check_finite = enabled; }
bool check_finite_enabled() { return g_check_finite; }

void check_finite(const TensorNode& n) {
  if (!g_check_finite) return;
  for (double v : n.value) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by op '") +
                         n.op + "'");
    }
  }
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  int n = shape_numel(shape);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value.assign(static_cast<size_t>(n), 0.0);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& x : t.values()) x = v;
  return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data,
                    bool requires_grad) {
  int n = shape_numel(shape);
  if (static_cast<size_t>(n) != data.size())
    throw DimensionError("data length does not match shape");
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor");
  return node_->value[0];
}

namespace {

void topo_visit(TensorNode* n, std::unordered_set<TensorNode*>& seen,
                std::vector<TensorNode*>& order) {
  // Iterative DFS; graphs can be deep (per-pixel chains stay shallow but
  // a long loss composition should not hit stack limits).
  struct Frame {
    TensorNode* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  if (seen.count(n)) return;
  seen.insert(n);
  stack.push_back({n, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (!seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
}

}  // namespace

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw ContractError("backward() requires a scalar loss");
  std::unordered_set<TensorNode*> seen;
  std::vector<TensorNode*> order;
  topo_visit(loss.node().get(), seen, order);

  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;

  // order is post-order: parents precede children; walk in reverse.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

}  // namespace mttu
