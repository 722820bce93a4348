#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

// Minimal reverse-mode differentiable tensor engine. Values are float64,
// row-major. Only the operator set the motion network needs is provided.
namespace hmc::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  const char* op = "leaf";

  std::vector<double>& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i < 0 ? i + rank() : i)); }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->value.size(); }
  double item() const;

  std::vector<double>& value() { return node_->value; }
  const std::vector<double>& value() const { return node_->value; }
  // Gradient buffer; allocated (zero) on first access.
  std::vector<double>& grad() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Populates gradients of every node reachable from `loss` that requires grad.
// Gradients accumulate; callers zero parameter gradients between steps.
// Throws Errc::NonScalarLoss.
void backward(const Tensor& loss);

// Number of distinct nodes visited by the last backward pass on this thread.
std::size_t last_backward_node_count();

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

// ---- ops (forward + backward each) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// (M,K)x(K,N) or batched (B,M,K)x(B,K,N)
Tensor matmul(const Tensor& a, const Tensor& b);
// x (B,Cin,D,H,W), w (Cout,Cin,k,k,k), bias (Cout) or undefined; zero padding.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
// x (B,in), w (out,in), bias (out) or undefined
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);

struct BatchNormStats {
  Tensor running_mean;  // (C)
  Tensor running_var;   // (C)
};
// Per-channel normalisation over every axis but 1. In training mode uses batch
// statistics and updates running stats with `momentum`; in eval mode applies
// the running stats as a fixed affine map.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, bool training,
                 double momentum = 0.1, double eps = 1e-5);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, int dim0, int dim1);
Tensor concat(std::span<const Tensor> xs, int axis);
Tensor slice(const Tensor& x, int axis, int start, int length);
// (B,1,...) -> (B,C,...) by repetition along axis 1
Tensor broadcast_channels(const Tensor& x, int channels);
Tensor mean(const Tensor& x);
// mean over all elements of w[j] * (pred - target)^2, with j the index along
// the last axis; empty weights means all ones. `target` gets no gradient
// unless it requires one.
Tensor mse_loss(const Tensor& pred, const Tensor& target, std::span<const double> last_axis_weights = {});

}  // namespace hmc::nn
