#include "dragsaw/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "dragsaw/errors.hpp"

namespace dragsaw {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::span<double> TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Buffer values(shape_numel(shape), value);
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return from(std::move(shape), Buffer(values.begin(), values.end()), requires_grad);
}

Tensor Tensor::from(Shape shape, Buffer values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ConfigError("tensor shape " + shape_str(shape) + " does not match " +
                      std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from(Shape{}, Buffer{value}, requires_grad); }

TensorImpl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ConfigError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return impl().data.size(); }

std::span<const double> Tensor::data() const { return impl().data; }
std::span<double> Tensor::mutable_data() { return impl().data; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl().data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ContractError("index rank mismatch for " + shape_str(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw ContractError("index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl().data[flat];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool value) { impl().requires_grad = value; }
bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::span<const double> Tensor::grad() const {
  auto& i = impl();
  if (i.grad.empty()) i.grad.assign(i.data.size(), 0.0);
  return i.grad;
}

void Tensor::zero_grad() { impl().grad.clear(); }

bool Tensor::is_leaf() const { return impl().grad_fn == nullptr; }

bool Tensor::all_finite() const {
  const auto d = data();
  return std::all_of(d.begin(), d.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::backward() const {
  if (numel() != 1 || !shape().empty()) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  }
  if (!requires_grad()) throw ContractError("backward() on a tensor that does not require grad");
  impl().grad_buffer()[0] += 1.0;
  ComputationGraph::trace(*this).run_backward();
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape();
  impl->data = this->impl().data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  Tensor copy = detach();
  copy.set_requires_grad(requires_grad());
  return copy;
}

ComputationGraph ComputationGraph::trace(const Tensor& root) {
  ComputationGraph graph;
  std::unordered_set<const TensorImpl*> visited;
  // Iterative post-order DFS; children visited in input order for a stable ordering.
  struct Frame {
    std::shared_ptr<TensorImpl> node;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  if (root.impl().grad_fn) {
    stack.push_back({root.impl_ptr(), 0});
    visited.insert(root.impl_ptr().get());
  }
  while (!stack.empty()) {
    Frame& top = stack.back();
    const auto& inputs = top.node->grad_fn->inputs;
    if (top.next_input < inputs.size()) {
      const auto& child = inputs[top.next_input++];
      if (child->grad_fn && child->requires_grad && visited.insert(child.get()).second) {
        stack.push_back({child, 0});
      }
      continue;
    }
    graph.order_.push_back(top.node);
    stack.pop_back();
  }
  graph.records_.reserve(graph.order_.size());
  for (const auto& node : graph.order_) {
    NodeRecord rec{node->grad_fn->op, {}, node.get()};
    for (const auto& in : node->grad_fn->inputs) rec.inputs.push_back(in.get());
    graph.records_.push_back(std::move(rec));
  }
  return graph;
}

void ComputationGraph::run_backward() const {
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    TensorImpl& node = **it;
    if (node.grad.empty()) continue;  // no gradient reached this node
    node.grad_fn->backward(node, node.grad_fn->inputs);
    // Interior gradients are consumed; a second backward through shared nodes must not re-add them.
    node.grad.clear();
    node.grad.shrink_to_fit();
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make_result(Shape shape, Buffer data, const std::string& op, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(data));
  if (!g_grad_enabled) return out;
  bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!needs) return out;
  auto fn = std::make_shared<GradFn>();
  fn->op = op;
  for (auto& t : inputs) fn->inputs.push_back(t.impl_ptr());
  fn->backward = std::move(backward);
  out.impl().requires_grad = true;
  out.impl().grad_fn = std::move(fn);
  return out;
}

}  // namespace detail

}  // namespace dragsaw
