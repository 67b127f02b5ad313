#include "cdis/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "cdis/error.hpp"

namespace cdis {
namespace {

thread_local GradTape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_next_tape_id{1};

struct Fault {
  std::string op;
  double factor = 1.0;
};
Fault g_fault;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : Tensor(Shape{0}, {}) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : node_(std::make_shared<detail::TensorNode>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
}

Tensor::Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t(std::move(shape), std::move(data));
  t.set_requires_grad(true);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
  }
  return node_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2 || row >= dim(0) || col >= dim(1)) {
    throw DimensionError("index (" + std::to_string(row) + "," + std::to_string(col) +
                         ") invalid for shape " + shape_str(shape()));
  }
  return node_->data[row * dim(1) + col];
}

void Tensor::set_requires_grad(bool on) {
  if (node_->node_id >= 0) {
    throw StateError("requires_grad can only be set on leaf tensors");
  }
  node_->requires_grad = on;
  node_->tracked = on;
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data); }

// ---------------------------------------------------------------------------

GradTape::GradTape() : id_(g_next_tape_id.fetch_add(1)) {}

GradTape::Scope::Scope(GradTape& tape) : previous_(g_active_tape) {
  if (tape.consumed_) throw StateError("cannot activate a consumed tape");
  g_active_tape = &tape;
}

GradTape::Scope::~Scope() { g_active_tape = previous_; }

GradTape* GradTape::active() { return g_active_tape; }

Tensor GradTape::emit(std::string_view op, const std::vector<Tensor>& inputs, Shape shape,
                      std::vector<double> data, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  GradTape* tape = g_active_tape;
  if (tape == nullptr) return out;

  bool any_tracked = false;
  for (const auto& in : inputs) {
    const auto& n = in.node();
    if (!n->tracked) continue;
    if (n->node_id >= 0 && n->tape_id != tape->id_) {
      throw StateError(std::string(op) + ": input was recorded on a different tape");
    }
    any_tracked = true;
  }
  if (!any_tracked) return out;
  if (tape->consumed_) throw StateError("recording on a consumed tape");

  Record rec;
  rec.op = std::string(op);
  rec.inputs.reserve(inputs.size());
  for (const auto& in : inputs) rec.inputs.push_back(in.node());
  rec.output = out.node();
  rec.backward = std::move(backward);
  out.node_->tracked = true;
  out.node_->node_id = static_cast<std::int64_t>(tape->records_.size());
  out.node_->tape_id = tape->id_;
  tape->records_.push_back(std::move(rec));
  return out;
}

void GradTape::backward(const Tensor& loss) {
  if (consumed_) throw StateError("tape already consumed by a previous backward()");
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  const auto& ln = loss.node();
  if (!ln->tracked) {
    throw ContractError("loss does not depend on any requires_grad tensor");
  }
  consumed_ = true;
  if (ln->node_id < 0) {
    // The loss is itself a leaf.
    if (ln->grad.empty()) ln->grad.assign(1, 0.0);
    ln->grad[0] += 1.0;
    return;
  }
  if (ln->tape_id != id_) throw ContractError("loss was not recorded on this tape");

  ln->grad.assign(1, 1.0);
  std::vector<std::vector<double>*> gin;
  std::vector<double> scaled;
  for (auto idx = ln->node_id; idx >= 0; --idx) {
    auto& rec = records_[static_cast<std::size_t>(idx)];
    if (rec.output->grad.empty()) continue;
    gin.clear();
    for (auto& in : rec.inputs) {
      if (!in->tracked) {
        gin.push_back(nullptr);
        continue;
      }
      if (in->grad.empty()) in->grad.assign(in->data.size(), 0.0);
      gin.push_back(&in->grad);
    }
    std::span<const double> gout = rec.output->grad;
    if (!g_fault.op.empty() && g_fault.op == rec.op) {
      scaled.assign(gout.begin(), gout.end());
      for (auto& g : scaled) g *= g_fault.factor;
      gout = scaled;
    }
    rec.backward(gout, gin);
  }
  // Saved activations are no longer needed.
  for (auto& rec : records_) rec.backward = nullptr;
}

void backward(const Tensor& loss, GradTape& tape) { tape.backward(loss); }

namespace debug {

void inject_backward_fault(std::string op, double factor) {
  g_fault.op = std::move(op);
  g_fault.factor = factor;
}

void clear_backward_fault() { g_fault = Fault{}; }

}  // namespace debug

}  // namespace cdis
