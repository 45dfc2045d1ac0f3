#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace dragsaw {

template <typename T, std::size_t Alignment>
struct AlignedAllocator {
  using value_type = T;
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Alignment>;
  };

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Alignment>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{Alignment}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{Alignment}); }

  template <typename U>
  bool operator==(const AlignedAllocator<U, Alignment>&) const noexcept {
    return true;
  }
};

/// Storage for tensor values and gradients. 64-byte alignment keeps vectorized
/// kernels on the same code path from run to run.
using Buffer = std::vector<double, AlignedAllocator<double, 64>>;
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

using InputList = std::vector<std::shared_ptr<TensorImpl>>;
using BackwardFn = std::function<void(const TensorImpl& out, const InputList& inputs)>;

/// Backward rule of one recorded primitive. `backward` reads the output's
/// gradient and accumulates into the inputs' gradients.
struct GradFn {
  std::string op;
  InputList inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<GradFn> grad_fn;

  /// Returns the gradient buffer, allocating zeros on first use.
  std::span<double> grad_buffer();
};

/// Dense row-major double tensor with optional reverse-mode gradient.
/// Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor from(Shape shape, Buffer values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  bool is_leaf() const;
  bool all_finite() const;

  /// Reverse pass from this scalar. Gradients accumulate into every
  /// requires_grad tensor reachable from it.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;

  TensorImpl& impl() const;
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Topologically ordered view of the graph that produced a tensor.
class ComputationGraph {
 public:
  struct NodeRecord {
    std::string op;
    std::vector<const TensorImpl*> inputs;
    const TensorImpl* output;
  };

  static ComputationGraph trace(const Tensor& root);

  /// Nodes in topological order: every node's inputs appear before it.
  const std::vector<NodeRecord>& nodes() const { return records_; }

  /// Runs every backward rule in reverse topological order.
  void run_backward() const;

 private:
  std::vector<std::shared_ptr<TensorImpl>> order_;
  std::vector<NodeRecord> records_;
};

bool grad_enabled();

/// Disables graph recording for its lifetime (evaluation, parameter updates).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// Creates the output of a primitive. When grad mode is on and any input
/// requires grad, the output records `backward`.
Tensor make_result(Shape shape, Buffer data, const std::string& op,
                   std::vector<Tensor> inputs,
                   BackwardFn backward);

bool any_requires_grad(std::initializer_list<const Tensor*> inputs);

}  // namespace detail

}  // namespace dragsaw
