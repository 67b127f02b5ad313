#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cdis {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  // True when the value depends on a requires_grad leaf through a recorded
  // operation, i.e. gradients must flow through it.
  bool tracked = false;
  std::int64_t node_id = -1;
  std::uint64_t tape_id = 0;
};

}  // namespace detail

/// Dense row-major array of doubles with an optional differentiation record.
///
/// Tensor is a shared handle: copies alias the same storage, which is what
/// lets a parameter be consumed by several operations and still receive the
/// summed gradient. Use detach() for an independent value.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// Leaf tensor with requires_grad set.
  static Tensor parameter(Shape shape, std::vector<double> data);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access; bypasses the tape (optimizer updates, test setup).
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double at(std::size_t i) const { return node_->data.at(i); }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool tracked() const { return node_->tracked; }
  std::int64_t node_id() const { return node_->node_id; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Same values, fresh storage, no history.
  Tensor detach() const;
  bool aliases(const Tensor& other) const { return node_ == other.node_; }

  // Access for the tape and op implementations.
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node);
  std::shared_ptr<detail::TensorNode> node_;
  friend class GradTape;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered record of the operations executed in one forward pass.
///
/// Operations record themselves on the tape made active by a Scope on the
/// current thread. A tape supports exactly one backward() call; recording
/// into or differentiating a consumed tape raises StateError.
class GradTape {
 public:
  // gin[i] is the gradient buffer of input i, or nullptr if input i does not
  // need a gradient. Implementations accumulate (+=) into it.
  using BackwardFn = std::function<void(std::span<const double> gout,
                                        std::span<std::vector<double>* const> gin)>;

  GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  class Scope {
   public:
    explicit Scope(GradTape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    GradTape* previous_;
  };

  static GradTape* active();

  /// Builds the result tensor of an operation and records it if any input is
  /// tracked and a tape is active.
  static Tensor emit(std::string_view op, const std::vector<Tensor>& inputs, Shape shape,
                     std::vector<double> data, BackwardFn backward);

  void backward(const Tensor& loss);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return records_.size(); }
  std::uint64_t id() const { return id_; }

 private:
  struct Record {
    std::string op;
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::shared_ptr<detail::TensorNode> output;
    BackwardFn backward;
  };

  std::vector<Record> records_;
  std::uint64_t id_;
  bool consumed_ = false;
};

/// Populates grad on every requires_grad tensor in loss's ancestry.
void backward(const Tensor& loss, GradTape& tape);

namespace debug {

/// Test hook: scales the incoming gradient of every recorded operation named
/// `op` by `factor` during backward, simulating a wrong derivative rule.
void inject_backward_fault(std::string op, double factor);
void clear_backward_fault();

}  // namespace debug

}  // namespace cdis
