#include "iwadv/autodiff/tensor.hpp"

#include <sstream>
#include <unordered_map>

namespace iwadv::ad {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::vector(std::vector<double> values) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values));
}

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::size() const { return shape().empty() ? 1 : numel(shape()); }

std::span<const double> Tensor::values() const {
  shape();
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  shape();
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t flat_index) const { return values()[flat_index]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  shape();
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return node_ && node_->grad_ready; }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_) return;
  node_->grad.clear();
  node_->grad_ready = false;
}

void Tape::record(detail::NodePtr output, std::vector<detail::NodePtr> inputs, BackwardFn fn) {
  if (consumed_) throw std::logic_error("recording onto a tape that was already swept; reset() it");
  output->requires_grad = true;
  entries_.push_back({std::move(output), std::move(inputs), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("backward sweep replayed without reset");
  if (loss.size() != 1) {
    throw ShapeError("backward needs a single-element loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("loss does not depend on any tensor that requires grad");
  }
  consumed_ = true;
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output->grad_ready) continue;
    it->fn(it->output->grad);
  }
}

void Tape::reset() {
  entries_.clear();
  consumed_ = false;
}

bool Tape::topologically_ordered() const {
  std::unordered_map<const detail::Node*, std::size_t> producer;
  for (std::size_t i = 0; i < entries_.size(); ++i) producer[entries_[i].output.get()] = i;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    for (const auto& in : entries_[i].inputs) {
      auto found = producer.find(in.get());
      if (found != producer.end() && found->second >= i) return false;
    }
  }
  return true;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  for (const auto* t : inputs) {
    if (t && t->requires_grad()) return true;
  }
  return false;
}

Tensor custom_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                 BackwardFn fn) {
  Tensor out(std::move(shape), std::move(values));
  if (!g_active_tape) return out;
  std::vector<detail::NodePtr> nodes;
  bool any = false;
  nodes.reserve(inputs.size());
  for (const auto& t : inputs) {
    if (!t.defined()) continue;
    any = any || t.requires_grad();
    nodes.push_back(t.node());
  }
  if (!any) return out;
  g_active_tape->record(out.node(), std::move(nodes), std::move(fn));
  return out;
}

}  // namespace iwadv::ad
