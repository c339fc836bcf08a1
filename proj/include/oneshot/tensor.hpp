#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace oneshot {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

namespace detail {

// Eigen's SIMD reductions pick their summation order from the buffer address.
// A fixed alignment keeps results independent of where malloc put the data,
// which otherwise differs between threads.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  bool operator==(const AlignedAllocator&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::uint64_t tape_id = 0;      // 0 for leaves
  std::size_t entry_index = 0;    // position on the producing tape

  std::span<double> grad_buffer();
};

}  // namespace detail

/// Dense row-major n-dimensional array of doubles.
///
/// A Tensor is a cheap handle: copies share storage, which is how layers share
/// parameters. Use clone() for an independent copy. Values are only changed
/// through ops, optimizers, and loaders via mutable_values().
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return node_->tape_id == 0; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Accumulated gradient; empty span when none has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();

  Tensor detach() const;
  Tensor clone() const;
  bool shares_storage_with(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& handle() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;

  friend class Tape;
};

/// Record of differentiable operations for one forward pass.
///
/// Ops append an entry when at least one input requires a gradient. Entries are
/// appended in evaluation order, so the tape is topologically sorted by
/// construction. A tape is confined to one thread at a time.
class Tape {
 public:
  /// Receives the gradient w.r.t. the recorded output and accumulates into inputs.
  using BackwardFn = std::function<void(std::span<const double> output_grad)>;

  Tape();
  /// An inference tape never records; outputs never require gradients.
  static Tape inference();

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }
  std::uint64_t id() const { return id_; }

  /// True when some input requires a gradient and the tape is recording.
  bool should_record(std::initializer_list<const Tensor*> inputs) const;

  /// Attaches `output` to this tape. Call only when should_record() is true.
  void record(std::string_view op, std::vector<Tensor> inputs, Tensor& output, BackwardFn backward);

  /// Propagates d(loss)/d(node) to every node on the tape. Leaf gradients
  /// accumulate across calls; intermediate gradients are recomputed each call.
  void backward(const Tensor& loss);

  /// Entries are produced in evaluation order: every input is a leaf or the output of an earlier entry.
  bool topologically_ordered() const;
  /// Number of backward closures executed by the most recent backward().
  std::size_t last_backward_visits() const { return last_visits_; }
  std::string_view op_name(std::size_t entry) const { return entries_.at(entry).op; }

 private:
  struct Entry {
    std::string_view op;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    std::shared_ptr<detail::Node> output;
    BackwardFn backward;
  };

  std::uint64_t id_;
  bool recording_ = true;
  std::vector<Entry> entries_;
  std::size_t last_visits_ = 0;
};

/// Gradient buffer of `t` if it participates in autodiff, otherwise an empty span.
std::span<double> grad_target(const Tensor& t);

/// Throws NumericError naming `op` when any value is NaN or infinite.
void require_finite(std::string_view op, std::span<const double> values);

}  // namespace oneshot
