#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace mttu {

// Shape/contract violations (caller bugs).
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf detected after a primitive; the step must halt.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // accumulates into parents
  const char* op = "leaf";

  int size() const { return static_cast<int>(value.size()); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Dense row-major tensor handle. Values are immutable once produced by a
// primitive; only grad buffers mutate afterwards. Copy is a cheap shared
// handle onto the same node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
  static Tensor scalar(double v);
  static Tensor from(std::vector<int> shape, std::vector<double> data,
                     bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int size() const { return node_->size(); }

  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }
  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<double>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  }

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// A named learnable tensor. Names are unique within a model and stable
// across save/load.
struct Parameter {
  std::string name;
  Tensor tensor;
};

int shape_numel(const std::vector<int>& shape);

// When enabled (default) every primitive scans its output for NaN/Inf and
// throws NumericError naming the op.
void set_check_finite(bool enabled);
bool check_finite_enabled();
void check_finite(const TensorNode& n);

// Reverse-mode sweep from a scalar loss. Grads accumulate; callers reset
// Parameter grads between optimization steps.
void backward(const Tensor& loss);

}  // namespace mttu
