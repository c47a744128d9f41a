#pragma once

// Dense tensors with a reverse-mode tape.
//
// A Tensor<T> is a shared handle to contiguous row-major storage. Every
// primitive that consumes a tensor with requires_grad() records one Op on the
// thread-local Tape<T>; ops are appended in creation order, so the tape is
// always topologically sorted. backward() walks it once in reverse.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <type_traits>
#include <vector>

namespace ukan {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool& check_finite_flag() {
  thread_local bool enabled = false;
  return enabled;
}

inline std::uint64_t& flop_counter() {
  thread_local std::uint64_t flops = 0;
  return flops;
}

inline void add_flops(std::uint64_t n) { flop_counter() += n; }

}  // namespace detail

/// Debug mode: every primitive throws NonFiniteError if it produces NaN/Inf.
inline void set_check_finite(bool on) { detail::check_finite_flag() = on; }
inline bool check_finite_enabled() { return detail::check_finite_flag(); }

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables tape recording for the enclosing scope (inference, sampling).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Counts floating point operations issued by primitives within its scope.
class FlopScope {
 public:
  FlopScope() : start_(detail::flop_counter()) {}
  std::uint64_t count() const { return detail::flop_counter() - start_; }

 private:
  std::uint64_t start_;
};

template <class T>
struct TensorImpl {
  static constexpr std::size_t kNoOp = std::numeric_limits<std::size_t>::max();

  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty means "no gradient yet"
  bool requires_grad = false;
  std::size_t op_index = kNoOp;
  std::uint64_t tape_generation = 0;
};

template <class T>
class Tensor {
 public:
  using value_type = T;
  using Impl = TensorImpl<T>;

  Tensor() = default;

  explicit Tensor(Shape shape) : Tensor(std::move(shape), false) {}

  // Template parameter keeps a braced one-value list like {1.0} from binding here.
  template <class B, class = std::enable_if_t<std::is_same_v<B, bool>>>
  Tensor(Shape shape, B requires_grad) : impl_(std::make_shared<Impl>()) {
    impl_->data.assign(numel_of(shape), T{0});
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    if (numel_of(shape) != data.size()) {
      throw ShapeError("tensor: shape " + to_string(shape) + " needs " +
                       std::to_string(numel_of(shape)) + " values, got " +
                       std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }

  static Tensor scalar(T value) { return Tensor(Shape{1}, {value}); }

  bool defined() const { return static_cast<bool>(impl_); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  Shape strides() const {
    Shape s(rank(), 1);
    for (std::size_t i = rank(); i-- > 1;) s[i - 1] = s[i] * impl_->shape[i];
    return s;
  }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::vector<T> to_vector() const { return impl_->data; }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item: tensor of shape " + to_string(shape()) +
                       " is not a scalar");
    }
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  /// A fresh leaf holding a copy of the data, detached from any graph.
  Tensor detach() const { return Tensor(shape(), impl_->data, false); }

  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

template <class T>
class Tape {
 public:
  using Impl = TensorImpl<T>;
  using BackwardFn = std::function<void(std::span<const T> grad_out)>;

  struct Op {
    std::string name;
    std::vector<std::shared_ptr<Impl>> inputs;
    std::shared_ptr<Impl> output;
    BackwardFn backward;
  };

  static Tape& current() {
    thread_local Tape tape;
    return tape;
  }

  const std::vector<Op>& ops() const { return ops_; }
  std::size_t size() const { return ops_.size(); }
  std::uint64_t generation() const { return generation_; }

  void record(std::string_view name, std::vector<std::shared_ptr<Impl>> inputs,
              const std::shared_ptr<Impl>& output, BackwardFn backward) {
    output->op_index = ops_.size();
    output->tape_generation = generation_;
    ops_.push_back(
        Op{std::string(name), std::move(inputs), output, std::move(backward)});
  }

  /// Drops all recorded ops; tensors produced before the clear are no longer
  /// on a graph.
  void clear() {
    ops_.clear();
    ++generation_;
  }

  bool on_tape(const Impl& impl) const {
    return impl.tape_generation == generation_ && impl.op_index < ops_.size() &&
           ops_[impl.op_index].output.get() == &impl;
  }

  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw GraphError("backward: loss must be a scalar tensor, got shape " +
                       (loss.defined() ? to_string(loss.shape()) : "<empty>"));
    }
    Impl& root = *loss.impl();
    if (!on_tape(root)) {
      throw GraphError("backward: loss was not produced on the current graph");
    }
    seed_root(root);
    for (std::size_t i = root.op_index + 1; i-- > 0;) {
      Op& op = ops_[i];
      if (op.output->grad.empty()) continue;
      op.backward(op.output->grad);
    }
  }

 private:
  static void seed_root(Impl& root) {
    if (root.grad.empty()) root.grad.assign(1, T{0});
    root.grad[0] += T{1};
  }

  std::vector<Op> ops_;
  std::uint64_t generation_ = 1;
};

template <class T>
void backward(const Tensor<T>& loss) {
  Tape<T>::current().backward(loss);
}

template <class T>
void clear_tape() {
  Tape<T>::current().clear();
}

namespace detail {

/// Gradient buffer of an input, allocated on first use.
template <class T>
std::span<T> grad_buffer(TensorImpl<T>& impl) {
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), T{0});
  return impl.grad;
}

template <class T>
void check_finite(std::string_view op, std::span<const T> values) {
  if (!check_finite_enabled()) return;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << op << ": non-finite output at flat index " << i << " (" << values[i]
         << ')';
      throw NonFiniteError(os.str());
    }
  }
}

/// Records `out` on the tape when any input requires a gradient and recording
/// is on. Inputs may include undefined handles (absent optional operands).
template <class T, class Backward>
void record_if_needed(std::string_view op, Tensor<T>& out,
                      std::initializer_list<const Tensor<T>*> inputs,
                      Backward&& backward) {
  if (!grad_enabled()) return;
  bool needs = false;
  for (const auto* in : inputs) needs = needs || (in->defined() && in->requires_grad());
  if (!needs) return;
  std::vector<std::shared_ptr<TensorImpl<T>>> impls;
  impls.reserve(inputs.size());
  for (const auto* in : inputs) {
    if (in->defined()) impls.push_back(in->impl());
  }
  out.set_requires_grad(true);
  Tape<T>::current().record(op, std::move(impls), out.impl(),
                            std::forward<Backward>(backward));
}

/// Builds the output of a primitive and records it if needed.
template <class T, class Backward>
Tensor<T> make_result(std::string_view op, Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs,
                      Backward&& backward) {
  check_finite<T>(op, data);
  Tensor<T> out(std::move(shape), std::move(data));
  record_if_needed(op, out, inputs, std::forward<Backward>(backward));
  return out;
}

}  // namespace detail

}  // namespace ukan
