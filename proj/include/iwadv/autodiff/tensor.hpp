#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace iwadv::ad {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an op is evaluated outside its numeric domain (log of a
/// non-positive value, division by zero, non-finite output).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool grad_ready = false;
  bool requires_grad = false;

  std::span<double> grad_buffer() {
    if (!grad_ready) {
      grad.assign(value.size(), 0.0);
      grad_ready = true;
    }
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

/// Dense row-major array of doubles with an optional gradient slot.
///
/// Copies are shallow: two Tensor handles may refer to the same storage,
/// which is how parameters are shared between a network and its optimizer.
/// Values are treated as immutable once the tensor has been used as an op
/// input; only parameter leaves are updated in place, between tapes.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor vector(std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat_index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  const detail::NodePtr& node() const { return node_; }
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

 private:
  detail::NodePtr node_;
};

using BackwardFn = std::function<void(std::span<const double> output_grad)>;

/// Ordered record of differentiable ops. Entries are appended as ops execute,
/// so each entry follows the entries that produced its inputs.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(detail::NodePtr output, std::vector<detail::NodePtr> inputs, BackwardFn fn);

  /// Reverse sweep from a single-element tensor. A tape can be swept once;
  /// call reset() before recording again.
  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  /// True when every entry's inputs were produced by earlier entries (or are leaves).
  bool topologically_ordered() const;

 private:
  struct Entry {
    detail::NodePtr output;
    std::vector<detail::NodePtr> inputs;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

/// The tape ops record into on this thread, or nullptr when recording is off.
Tape* active_tape();

/// Makes `tape` the active tape for the current thread until destruction.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Disables recording on the current thread until destruction.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// Builds an op result. When a tape is active and any input requires grad the
/// op is recorded with `fn`; otherwise `fn` is dropped.
Tensor custom_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                 BackwardFn fn);

/// Cheap pre-check so ops can skip building closures.
bool should_record(std::initializer_list<const Tensor*> inputs);

}  // namespace iwadv::ad
