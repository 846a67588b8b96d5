#include "ssat/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ssat {

namespace {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

thread_local Graph* g_current_graph = nullptr;

}  // namespace

struct Tensor::Impl {
  std::vector<int> shape;
  // shared so reshape views observe later (lazy) gradient allocation
  std::shared_ptr<std::vector<float>> data;
  std::shared_ptr<std::vector<float>> grad;
  // double shadow; empty unless a finite-difference probe is upstream
  std::shared_ptr<std::vector<double>> hp;
  bool requires_grad = false;
};

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  int64_t n = shape_numel(shape);
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::make_shared<std::vector<float>>(static_cast<size_t>(n), 0.0f);
  t.impl_->grad = std::make_shared<std::vector<float>>();
  t.impl_->hp = std::make_shared<std::vector<double>>();
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(std::vector<int> shape, float value) {
  Tensor t = zeros(std::move(shape));
  for (float& v : *t.impl_->data) v = value;
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data,
                         bool requires_grad) {
  int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("from_data: " + std::to_string(data.size()) +
                                " values for shape " + shape_str(shape));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::make_shared<std::vector<float>>(std::move(data));
  t.impl_->grad = std::make_shared<std::vector<float>>();
  t.impl_->hp = std::make_shared<std::vector<double>>();
  t.impl_->requires_grad = requires_grad;
  return t;
}

const std::vector<int>& Tensor::shape() const { return impl_->shape; }

int64_t Tensor::numel() const { return static_cast<int64_t>(impl_->data->size()); }

float* Tensor::data() { return impl_->data->data(); }
const float* Tensor::data() const { return impl_->data->data(); }

std::span<float> Tensor::values() { return {impl_->data->data(), impl_->data->size()}; }
std::span<const float> Tensor::values() const {
  return {impl_->data->data(), impl_->data->size()};
}

float Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
  }
  return (*impl_->data)[0];
}

bool Tensor::has_hp() const { return impl_ && !impl_->hp->empty(); }

void Tensor::enable_hp() {
  if (impl_->hp->empty()) {
    impl_->hp->assign(impl_->data->begin(), impl_->data->end());
  }
}

double* Tensor::hp_data() { return impl_->hp->data(); }
const double* Tensor::hp_data() const { return impl_->hp->data(); }

double Tensor::item_hp() const {
  if (numel() != 1) {
    throw std::invalid_argument("item_hp() on tensor of shape " + shape_str(shape()));
  }
  return has_hp() ? (*impl_->hp)[0] : static_cast<double>((*impl_->data)[0]);
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool v) { impl_->requires_grad = v; }

const float* Tensor::grad() const {
  return impl_->grad->empty() ? nullptr : impl_->grad->data();
}

bool Tensor::has_grad() const { return !impl_->grad->empty(); }

std::span<float> Tensor::grad_span() const {
  ensure_grad();
  return {impl_->grad->data(), impl_->grad->size()};
}

void Tensor::ensure_grad() const {
  if (impl_->grad->empty()) impl_->grad->assign(impl_->data->size(), 0.0f);
}

void Tensor::zero_grad() const {
  if (!impl_->grad->empty()) std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0f);
}

void Tensor::clear_grad() const { impl_->grad->clear(); }

void Tensor::accumulate_grad(std::span<const float> g) const {
  ensure_grad();
  if (g.size() != impl_->grad->size()) {
    throw std::invalid_argument("gradient size mismatch");
  }
  float* dst = impl_->grad->data();
  for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

Tensor Tensor::reshape(std::vector<int> new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw std::invalid_argument("reshape " + shape_str(shape()) + " -> " +
                                shape_str(new_shape) + " changes element count");
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(new_shape);
  t.impl_->data = impl_->data;  // view: shared data, gradient, shadow
  t.impl_->grad = impl_->grad;
  t.impl_->hp = impl_->hp;
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = std::make_shared<std::vector<float>>(*impl_->data);
  t.impl_->grad = std::make_shared<std::vector<float>>();
  t.impl_->hp = std::make_shared<std::vector<double>>(*impl_->hp);
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

bool Tensor::same_storage(const Tensor& other) const {
  return impl_ && other.impl_ && impl_->data == other.impl_->data;
}

// ---------------------------------------------------------------------------
// Graph

Graph* Graph::current() { return g_current_graph; }

void Graph::record(std::function<void()> backward_fn) {
  nodes_.push_back(std::move(backward_fn));
}

void Graph::backward(Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward requires a scalar loss");
  }
  if (consumed_) {
    throw std::logic_error("backward called twice on the same graph");
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("loss was not produced by a recorded graph");
  }
  loss.ensure_grad();
  loss.grad_span()[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  nodes_.clear();
  consumed_ = true;
}

Graph::Recording::Recording(Graph& g) : prev_(g_current_graph) {
  g_current_graph = &g;
}
Graph::Recording::~Recording() { g_current_graph = prev_; }

Graph::NoGrad::NoGrad() : prev_(g_current_graph) { g_current_graph = nullptr; }
Graph::NoGrad::~NoGrad() { g_current_graph = prev_; }

void backward(Tensor& loss) {
  Graph* g = Graph::current();
  if (!g) throw std::logic_error("backward: no active graph");
  g->backward(loss);
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

bool should_record(const Tensor& a) {
  return Graph::current() != nullptr && a.requires_grad();
}
bool should_record(const Tensor& a, const Tensor& b) {
  return Graph::current() != nullptr && (a.requires_grad() || b.requires_grad());
}

// Mirrors an elementwise op on the double shadow when any input carries one.
template <typename F>
void shadow_unary(const Tensor& a, Tensor& out, F f) {
  if (!a.has_hp()) return;
  out.enable_hp();
  const double* pa = a.hp_data();
  double* po = out.hp_data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
}

template <typename F>
void shadow_binary(const Tensor& a, const Tensor& b, Tensor& out, F f) {
  if (!a.has_hp() && !b.has_hp()) return;
  out.enable_hp();
  HpView ha(a), hb(b);
  double* po = out.hp_data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = f(ha[i], hb[i]);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  shadow_binary(a, b, out, [](double x, double y) { return x + y; });
  if (should_record(a, b)) {
    out.set_requires_grad(true);
    Graph::current()->record([a, b, out]() mutable {
      auto g = out.grad_span();
      if (a.requires_grad()) a.accumulate_grad(g);
      if (b.requires_grad()) b.accumulate_grad(g);
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  shadow_binary(a, b, out, [](double x, double y) { return x - y; });
  if (should_record(a, b)) {
    out.set_requires_grad(true);
    Graph::current()->record([a, b, out]() mutable {
      auto g = out.grad_span();
      if (a.requires_grad()) a.accumulate_grad(g);
      if (b.requires_grad()) {
        auto bg = b.grad_span();
        for (size_t i = 0; i < g.size(); ++i) bg[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  shadow_binary(a, b, out, [](double x, double y) { return x * y; });
  if (should_record(a, b)) {
    out.set_requires_grad(true);
    Graph::current()->record([a, b, out]() mutable {
      auto g = out.grad_span();
      if (a.requires_grad()) {
        auto ag = a.grad_span();
        const float* pb2 = b.data();
        for (size_t i = 0; i < g.size(); ++i) ag[i] += g[i] * pb2[i];
      }
      if (b.requires_grad()) {
        auto bg = b.grad_span();
        const float* pa2 = a.data();
        for (size_t i = 0; i < g.size(); ++i) bg[i] += g[i] * pa2[i];
      }
    });
  }
  return out;
}

Tensor tanh(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = std::tanh(pa[i]);
  shadow_unary(a, out, [](double x) { return std::tanh(x); });
  if (should_record(a)) {
    out.set_requires_grad(true);
    Graph::current()->record([a, out]() mutable {
      auto g = out.grad_span();
      auto ag = a.grad_span();
      const float* y = out.data();
      for (size_t i = 0; i < g.size(); ++i) ag[i] += g[i] * (1.0f - y[i] * y[i]);
    });
  }
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] > 0.0f ? pa[i] : 0.0f;
  shadow_unary(a, out, [](double x) { return x > 0.0 ? x : 0.0; });
  if (should_record(a)) {
    out.set_requires_grad(true);
    Graph::current()->record([a, out]() mutable {
      auto g = out.grad_span();
      auto ag = a.grad_span();
      const float* x = a.data();
      for (size_t i = 0; i < g.size(); ++i) {
        if (x[i] > 0.0f) ag[i] += g[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float c) {
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = c * pa[i];
  shadow_unary(a, out, [c](double x) { return static_cast<double>(c) * x; });
  if (should_record(a)) {
    out.set_requires_grad(true);
    Graph::current()->record([a, out, c]() mutable {
      auto g = out.grad_span();
      auto ag = a.grad_span();
      for (size_t i = 0; i < g.size(); ++i) ag[i] += c * g[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::zeros({1});
  const float* pa = a.data();
  int64_t n = a.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += pa[i];
  out.data()[0] = static_cast<float>(acc);
  if (a.has_hp()) {
    const double* ha = a.hp_data();
    double hacc = 0.0;
    for (int64_t i = 0; i < n; ++i) hacc += ha[i];
    out.enable_hp();
    out.hp_data()[0] = hacc;
  }
  if (should_record(a)) {
    out.set_requires_grad(true);
    Graph::current()->record([a, out]() mutable {
      float g = out.grad_span()[0];
      auto ag = a.grad_span();
      for (size_t i = 0; i < ag.size(); ++i) ag[i] += g;
    });
  }
  return out;
}

Tensor clamp(const Tensor& a, float lo, float hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    float v = pa[i];
    po[i] = v < lo ? lo : (v > hi ? hi : v);
  }
  shadow_unary(a, out, [lo, hi](double x) {
    return x < static_cast<double>(lo)
               ? static_cast<double>(lo)
               : (x > static_cast<double>(hi) ? static_cast<double>(hi) : x);
  });
  if (should_record(a)) {
    out.set_requires_grad(true);
    Graph::current()->record([a, out, lo, hi]() mutable {
      auto g = out.grad_span();
      auto ag = a.grad_span();
      const float* x = a.data();
      for (size_t i = 0; i < g.size(); ++i) {
        if (x[i] >= lo && x[i] <= hi) ag[i] += g[i];
      }
    });
  }
  return out;
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor* b, float constant) {
  switch (op) {
    case ElementwiseOp::Add:
      if (!b) throw std::invalid_argument("add requires two operands");
      return add(a, *b);
    case ElementwiseOp::Sub:
      if (!b) throw std::invalid_argument("sub requires two operands");
      return sub(a, *b);
    case ElementwiseOp::Mul:
      if (!b) throw std::invalid_argument("mul requires two operands");
      return mul(a, *b);
    case ElementwiseOp::Tanh:
      return tanh(a);
    case ElementwiseOp::Relu:
      return relu(a);
    case ElementwiseOp::ScaleByConstant:
      return scale(a, constant);
  }
  throw std::invalid_argument("unknown elementwise op");
}

// ---------------------------------------------------------------------------
// Finite-difference oracle

float grad_check(const std::function<Tensor(const Tensor&)>& f,
                 const Tensor& input, float eps) {
  if (eps < 1e-4f || eps > 1e-2f) {
    throw std::invalid_argument("grad_check: eps outside [1e-4, 1e-2]");
  }
  Tensor x = input.clone();
  x.set_requires_grad(true);

  Graph graph;
  {
    Graph::Recording rec(graph);
    Tensor loss = f(x);
    if (loss.numel() != 1) throw std::invalid_argument("grad_check: f must be scalar");
    // a constant f never touches the tape; its analytic gradient is zero
    if (loss.requires_grad()) graph.backward(loss);
  }
  std::vector<float> analytic(static_cast<size_t>(x.numel()), 0.0f);
  if (x.has_grad()) {
    const float* g = x.grad();
    std::copy(g, g + x.numel(), analytic.begin());
  }

  // The probe carries the double shadow through every op, so the quotient
  // below is not limited by f32 rounding of intermediate values. The f32
  // data tracks the shadow to keep both paths at the same point.
  Graph::NoGrad ng;
  Tensor probe = input.clone();
  probe.enable_hp();
  double* hp = probe.hp_data();
  float* fp = probe.data();
  const double h = static_cast<double>(eps);
  double max_rel = 0.0;
  for (int64_t i = 0; i < probe.numel(); ++i) {
    const double saved = hp[i];
    const float savedf = fp[i];
    hp[i] = saved + h;
    fp[i] = static_cast<float>(hp[i]);
    double up = f(probe).item_hp();
    hp[i] = saved - h;
    fp[i] = static_cast<float>(hp[i]);
    double down = f(probe).item_hp();
    hp[i] = saved;
    fp[i] = savedf;
    double numeric = (up - down) / (2.0 * h);
    double a = static_cast<double>(analytic[static_cast<size_t>(i)]);
    double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    double rel = std::fabs(a - numeric) / denom;
    if (rel > max_rel) max_rel = rel;
  }
  return static_cast<float>(max_rel);
}

}  // namespace ssat
