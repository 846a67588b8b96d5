#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ssat {

/// Dense row-major f32 tensor. Copies are shallow: two Tensor values may
/// share the same storage (reshape produces such a view). The shape of a
/// constructed tensor never changes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, float value);
  static Tensor from_data(std::vector<int> shape, std::vector<float> data,
                          bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  int dim(int i) const { return shape()[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape().size()); }
  int64_t numel() const;

  float* data();
  const float* data() const;
  std::span<float> values();
  std::span<const float> values() const;

  /// Value of a one-element tensor.
  float item() const;

  /// Optional double-precision shadow of the values. Forward ops propagate
  /// it when any input carries one; the finite-difference oracle enables it
  /// on its probe so numeric derivatives are not limited to f32 resolution.
  /// Normal training and inference never allocate it.
  bool has_hp() const;
  void enable_hp();
  double* hp_data();
  const double* hp_data() const;
  /// Shadow value of a one-element tensor, or the widened f32 value.
  double item_hp() const;

  bool requires_grad() const;
  void set_requires_grad(bool v);

  /// nullptr until a backward pass (or ensure_grad) touched this tensor.
  /// Gradient state lives in the shared storage, so these are const on the
  /// handle (backward closures hold const copies).
  const float* grad() const;
  bool has_grad() const;
  std::span<float> grad_span() const;
  /// Allocates a zeroed gradient buffer if absent.
  void ensure_grad() const;
  void zero_grad() const;
  /// Drops the gradient buffer ("absent" state).
  void clear_grad() const;
  void accumulate_grad(std::span<const float> g) const;

  /// New tensor viewing the same data (and gradient) buffers.
  Tensor reshape(std::vector<int> new_shape) const;

  /// Deep copy of the values; gradient state is not copied.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

/// Reverse-mode tape. Ops record backward closures while a Graph is active
/// (see Recording); Graph::backward replays them once, newest first, then
/// the graph is consumed.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  static Graph* current();

  void record(std::function<void()> backward_fn);
  size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss)=1 and propagates to every recorded tensor.
  void backward(Tensor& loss);

  class Recording {
   public:
    explicit Recording(Graph& g);
    ~Recording();
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    Graph* prev_;
  };

  /// Suspends recording within scope (forward passes whose gradients are
  /// never needed, e.g. clean logits of a frozen target).
  class NoGrad {
   public:
    NoGrad();
    ~NoGrad();
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

   private:
    Graph* prev_;
  };

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

/// Reads tensor values as double: the shadow when present, else the exact
/// widening of the stored f32 values. Op bodies use it to propagate shadows.
struct HpView {
  const float* f;
  const double* d;
  explicit HpView(const Tensor& t)
      : f(t.data()), d(t.has_hp() ? t.hp_data() : nullptr) {}
  double operator[](int64_t i) const {
    return d ? d[i] : static_cast<double>(f[i]);
  }
};

enum class ElementwiseOp { Add, Sub, Mul, Tanh, Relu, ScaleByConstant };

// Elementwise primitives. Binary ops require identical shapes; the only
// broadcasting anywhere is the scalar constant of scale().
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);  // subgradient 0 at exactly 0
Tensor scale(const Tensor& a, float c);
/// Clamp to [lo, hi]; gradient passes where lo <= x <= hi, zero outside.
Tensor clamp(const Tensor& a, float lo, float hi);
/// Sum of all elements, as a shape-{1} scalar.
Tensor sum(const Tensor& a);

/// Dispatcher over the named primitives. `b` must be given for binary ops,
/// `constant` for ScaleByConstant.
Tensor elementwise(ElementwiseOp op, const Tensor& a,
                   const Tensor* b = nullptr, float constant = 0.0f);

/// Runs the backward pass of the graph that produced `loss` (must be scalar).
void backward(Tensor& loss);

/// Max relative error between the analytic gradient of f at `input` and a
/// central-difference estimate with step eps. f must be scalar-valued and
/// must not mutate its argument's values.
float grad_check(const std::function<Tensor(const Tensor&)>& f,
                 const Tensor& input, float eps);

}  // namespace ssat
