#pragma once

// Dense float64 tensors with a dynamically recorded reverse-mode tape.
//
// Every op returns a fresh node holding its parents and a backward rule when
// any input requires a gradient. backward() orders the reachable nodes
// topologically and runs each rule exactly once, so two forward passes over
// the same parameters build independent graphs that only meet at the leaves.
// A graph must be used from one thread at a time; separate graphs may run
// concurrently.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mcsformer::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  std::span<double> grad_buffer();  // allocates zeros on first use
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }

  std::span<const double> data() const { return node_->value; }
  /// In-place access for optimizer updates between steps.
  std::span<double> mutable_data() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  /// Same values, no history.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Nodes reachable from `root` that take part in differentiation, parents
/// before children.
std::vector<Node*> topological_order(const Tensor& root);

/// Accumulates d(loss)/d(node) into every reachable node that requires a
/// gradient. Throws NonScalarLoss unless the loss holds one element.
void backward(const Tensor& loss);

// Elementwise (identical shapes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& x);
/// tanh-approximated GELU.
Tensor gelu(const Tensor& x);

/// x + b where b's shape equals the trailing dims of x (bias-add broadcast).
Tensor add_bias(const Tensor& x, const Tensor& b);

/// [M,K] x [K,N].
Tensor matmul(const Tensor& a, const Tensor& b);
/// [B,M,K] x [B,K,N].
Tensor bmm(const Tensor& a, const Tensor& b);
/// x[..., K] * w[K, N] (+ b[N]).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor transpose(const Tensor& x);  // rank-2
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_axis(const Tensor& x, std::size_t axis);

/// Views x as rows of its last dimension and picks rows by index (repeats
/// allowed). Result shape [index.size(), last_dim].
Tensor gather_rows(const Tensor& x, std::vector<std::size_t> index);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor softmax(const Tensor& x);  // last axis

/// Normalizes over the last axis, then applies gamma * x_hat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

/// Inverted dropout with a counter-based mask: element i is dropped when
/// hash(key, i) falls below p. Identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, bool training, std::uint64_t key);

/// Cross-correlation x[N,C,H,W] * w[F,C,KH,KW] + b[F].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t pad = 1,
              std::size_t stride = 1);

/// Non-overlapping k x k max pooling; ties route the gradient to the first
/// maximum in row-major window order.
Tensor maxpool2d(const Tensor& x, std::size_t k = 2, std::size_t stride = 2);

/// Stateless 64-bit mixer used for dropout masks and seeded streams.
std::uint64_t mix64(std::uint64_t x);

}  // namespace mcsformer::ad
