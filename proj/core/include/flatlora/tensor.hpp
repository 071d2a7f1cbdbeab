#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "flatlora/errors.hpp"

namespace flatlora {

// ============================================================
// Tensor: shared-handle dense f64 tensor, row-major
// ============================================================

struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t graph_id = 0;  // nonzero if produced inside a live graph
};

class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl>()) {}

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> data);
  static Tensor scalar(double value);

  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;
  double& operator[](std::size_t i) { return impl_->data[i]; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double value() const;  // scalar extraction

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  std::vector<double>& ensure_grad();
  void zero_grad();

  Tensor clone() const;  // deep copy of data; grad/graph state not copied
  void copy_data_from(const Tensor& src);

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  bool same_handle(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

bool all_finite(const Tensor& t);
std::string shape_string(const std::vector<std::size_t>& shape);

// ============================================================
// ComputeGraph: append-ordered tape for reverse-mode autodiff
// ============================================================

class ComputeGraph {
 public:
  ComputeGraph();

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }

  void record(std::shared_ptr<TensorImpl> out, std::function<void()> fn);

  // Zeroes grads of all tape outputs, seeds loss grad with 1, then walks the
  // tape in reverse. Leaf grads accumulate across calls.
  void backward(const Tensor& loss);

  std::size_t last_visit_count() const { return last_visits_; }

  // Process-wide count of backward() invocations, for cost accounting.
  static std::uint64_t global_backward_calls();

 private:
  struct Node {
    std::shared_ptr<TensorImpl> out;
    std::function<void()> fn;
  };
  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::size_t last_visits_ = 0;
};

// RAII activation of a graph for the current thread.
class GraphScope {
 public:
  explicit GraphScope(ComputeGraph& g);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  ComputeGraph* prev_;
};

ComputeGraph* active_graph();

// True if backward must reach this tensor: a requires_grad leaf, or an
// intermediate produced inside the currently active graph.
bool tracked(const Tensor& t);

// Appends a tape node for `out` on the active graph and marks `out` as
// produced by it. Callers check tracked() on inputs first.
void record_node(const Tensor& out, std::function<void()> fn);

namespace detail {
std::vector<double>& impl_grad(TensorImpl& impl);
}

}  // namespace flatlora
