#include "flatlora/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace flatlora {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must be non-empty");
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

thread_local ComputeGraph* g_active = nullptr;
std::atomic<std::uint64_t> g_next_graph_id{1};
std::atomic<std::uint64_t> g_backward_calls{0};

}  // namespace

// ============================================================
// Tensor
// ============================================================

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  const std::size_t n = shape_product(shape);
  Tensor t;
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(n, 0.0);
  return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (double& x : t.impl_->data) x = value;
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> data) {
  const std::size_t n = shape_product(shape);
  if (n != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_string(shape));
  }
  Tensor t;
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

double& Tensor::at(std::size_t r, std::size_t c) {
  if (ndim() != 2) throw ShapeError("at(r,c) requires a 2-D tensor");
  return impl_->data[r * impl_->shape[1] + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (ndim() != 2) throw ShapeError("at(r,c) requires a 2-D tensor");
  return impl_->data[r * impl_->shape[1] + c];
}

double Tensor::value() const {
  if (numel() != 1) {
    throw ContractError("value() requires a scalar, got shape " +
                        shape_string(impl_->shape));
  }
  return impl_->data[0];
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) {
    throw StateError("gradient not populated for this tensor");
  }
  return impl_->grad;
}

std::vector<double>& Tensor::ensure_grad() {
  return detail::impl_grad(*impl_);
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

void Tensor::copy_data_from(const Tensor& src) {
  if (src.impl_->shape != impl_->shape) {
    throw ShapeError("copy_data_from shape mismatch: " +
                     shape_string(impl_->shape) + " vs " +
                     shape_string(src.impl_->shape));
  }
  impl_->data = src.impl_->data;
}

bool all_finite(const Tensor& t) {
  for (double x : t.data()) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

// ============================================================
// ComputeGraph
// ============================================================

ComputeGraph::ComputeGraph() : id_(g_next_graph_id.fetch_add(1)) {}

void ComputeGraph::record(std::shared_ptr<TensorImpl> out,
                          std::function<void()> fn) {
  out->graph_id = id_;
  nodes_.push_back(Node{std::move(out), std::move(fn)});
}

void ComputeGraph::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(loss.shape()));
  }
  if (loss.impl()->graph_id != id_) {
    throw ContractError("loss tensor was not produced by this graph");
  }
  // Tape outputs are intermediates: their grads belong to this pass alone.
  // Leaf grads are left untouched so they accumulate across calls.
  for (Node& n : nodes_) {
    n.out->grad.assign(n.out->data.size(), 0.0);
  }
  loss.impl()->grad[0] = 1.0;
  last_visits_ = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->fn();
    ++last_visits_;
  }
  g_backward_calls.fetch_add(1);
}

std::uint64_t ComputeGraph::global_backward_calls() {
  return g_backward_calls.load();
}

GraphScope::GraphScope(ComputeGraph& g) : prev_(g_active) { g_active = &g; }

GraphScope::~GraphScope() { g_active = prev_; }

ComputeGraph* active_graph() { return g_active; }

bool tracked(const Tensor& t) {
  if (t.requires_grad()) return true;
  return g_active != nullptr && t.impl()->graph_id == g_active->id();
}

void record_node(const Tensor& out, std::function<void()> fn) {
  if (g_active == nullptr) {
    throw StateError("record_node called with no active graph");
  }
  g_active->record(out.impl(), std::move(fn));
}

namespace detail {
std::vector<double>& impl_grad(TensorImpl& impl) {
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}
}  // namespace detail

}  // namespace flatlora
