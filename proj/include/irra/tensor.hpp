#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace irra {

using Shape = std::vector<std::size_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the autodiff graph. `backward` reads this node's grad and
// accumulates into the grads of `inputs`; it is empty for leaves.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense row-major float64 array that records the operations producing it.
///
/// A Tensor is a cheap handle: copies share the same underlying node. Values
/// are immutable once produced by an operation; leaves (parameters, inputs)
/// may be mutated in place through `mutable_values()` by optimizers and
/// finite-difference probes.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor identity(std::size_t n, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Extent along `axis`; negative axes count from the back.
  std::size_t dim(std::ptrdiff_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat_index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Copy of the values with no history.
  Tensor detach() const;

  /// Values viewed as a (size / last_dim) x last_dim matrix.
  ConstMatrixMap matrix() const;

  const detail::Node* node_ptr() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered record of every node reachable from a root.
///
/// The order is built by an iterative depth-first post-order walk, so inputs
/// always precede their consumers; reverse iteration is a valid reverse-mode
/// schedule and visits each node once.
class GradientTape {
 public:
  explicit GradientTape(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  const std::vector<detail::Node*>& order() const { return order_; }

  /// Runs every recorded backward rule in reverse order.
  void replay_backward() const;

 private:
  std::vector<detail::Node*> order_;
};

/// Accumulates d(loss)/d(x) into every reachable tensor that requires grad.
/// Throws ContractError when `loss` is not a scalar.
void backward(const Tensor& loss);

namespace detail {

using BackwardFn = std::function<void(Node&)>;

/// Builds an op result. History is kept only when some input requires grad.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   BackwardFn backward);

inline bool needs_grad(const std::shared_ptr<Node>& n) { return n && n->requires_grad; }

}  // namespace detail

}  // namespace irra
