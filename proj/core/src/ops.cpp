#include "flatlora/ops.hpp"

#include <cmath>

#include "flatlora/rng.hpp"

namespace flatlora {

namespace {

constexpr double kLnEps = 1e-5;  // layernorm variance floor
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void require_2d(const Tensor& t, const char* who) {
  if (t.ndim() != 2) {
    throw ShapeError(std::string(who) + " requires a 2-D tensor, got " +
                     shape_string(t.shape()));
  }
}

using detail::impl_grad;

}  // namespace

// ============================================================
// matrix products
// ============================================================

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner dimensions differ: " +
                     shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  {
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* od = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ad[i * k + p];
        if (av == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) od[i * n + j] += av * bd[p * n + j];
      }
    }
  }
  const bool na = tracked(a), nb = tracked(b);
  if (active_graph() && (na || nb)) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record_node(out, [ai, bi, oi, na, nb, m, k, n] {
      const double* g = oi->grad.data();
      if (na) {
        double* ga = impl_grad(*ai).data();
        const double* bd = bi->data.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j)
              s += g[i * n + j] * bd[p * n + j];
            ga[i * k + p] += s;
          }
      }
      if (nb) {
        double* gb = impl_grad(*bi).data();
        const double* ad = ai->data.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j)
              gb[p * n + j] += av * g[i * n + j];
          }
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w) {
  require_2d(x, "linear");
  require_2d(w, "linear");
  const std::size_t b = x.dim(0), n = x.dim(1), m = w.dim(0);
  if (w.dim(1) != n) {
    throw ShapeError("linear: input width " + std::to_string(n) +
                     " does not match weight shape " +
                     shape_string(w.shape()));
  }
  Tensor out = Tensor::zeros({b, m});
  {
    const double* xd = x.data().data();
    const double* wd = w.data().data();
    double* od = out.data().data();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < n; ++p)
          s += xd[i * n + p] * wd[j * n + p];
        od[i * m + j] = s;
      }
  }
  const bool nx = tracked(x), nw = tracked(w);
  if (active_graph() && (nx || nw)) {
    auto xi = x.impl(), wi = w.impl(), oi = out.impl();
    record_node(out, [xi, wi, oi, nx, nw, b, n, m] {
      const double* g = oi->grad.data();
      if (nx) {
        double* gx = impl_grad(*xi).data();
        const double* wd = wi->data.data();
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const double gv = g[i * m + j];
            if (gv == 0.0) continue;
            for (std::size_t p = 0; p < n; ++p)
              gx[i * n + p] += gv * wd[j * n + p];
          }
      }
      if (nw) {
        double* gw = impl_grad(*wi).data();
        const double* xd = xi->data.data();
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const double gv = g[i * m + j];
            if (gv == 0.0) continue;
            for (std::size_t p = 0; p < n; ++p)
              gw[j * n + p] += gv * xd[i * n + p];
          }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  require_2d(x, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  if (active_graph() && tracked(x)) {
    auto xi = x.impl(), oi = out.impl();
    record_node(out, [xi, oi, m, n] {
      double* gx = impl_grad(*xi).data();
      const double* g = oi->grad.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

// ============================================================
// elementwise
// ============================================================

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(who) + " shape mismatch: " +
                     shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  const bool na = tracked(a), nb = tracked(b);
  if (active_graph() && (na || nb)) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record_node(out, [ai, bi, oi, na, nb] {
      const auto& g = oi->grad;
      if (na) {
        auto& ga = impl_grad(*ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (nb) {
        auto& gb = impl_grad(*bi);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  const bool na = tracked(a), nb = tracked(b);
  if (active_graph() && (na || nb)) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record_node(out, [ai, bi, oi, na, nb] {
      const auto& g = oi->grad;
      if (na) {
        auto& ga = impl_grad(*ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (nb) {
        auto& gb = impl_grad(*bi);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  const bool na = tracked(a), nb = tracked(b);
  if (active_graph() && (na || nb)) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record_node(out, [ai, bi, oi, na, nb] {
      const auto& g = oi->grad;
      if (na) {
        auto& ga = impl_grad(*ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
      }
      if (nb) {
        auto& gb = impl_grad(*bi);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * c;
  if (active_graph() && tracked(x)) {
    auto xi = x.impl(), oi = out.impl();
    record_node(out, [xi, oi, c] {
      auto& gx = impl_grad(*xi);
      const auto& g = oi->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  require_2d(x, "add_rowvec");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (v.ndim() != 1 || v.dim(0) != c) {
    throw ShapeError("add_rowvec vector shape " + shape_string(v.shape()) +
                     " does not match row width " + std::to_string(c));
  }
  Tensor out = Tensor::zeros({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + v[j];
  const bool nx = tracked(x), nv = tracked(v);
  if (active_graph() && (nx || nv)) {
    auto xi = x.impl(), vi = v.impl(), oi = out.impl();
    record_node(out, [xi, vi, oi, nx, nv, r, c] {
      const auto& g = oi->grad;
      if (nx) {
        auto& gx = impl_grad(*xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (nv) {
        auto& gv = impl_grad(*vi);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gv[j] += g[i * c + j];
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (active_graph() && tracked(x)) {
    auto xi = x.impl(), oi = out.impl();
    record_node(out, [xi, oi] {
      auto& gx = impl_grad(*xi);
      const auto& g = oi->grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xi->data[i] > 0.0) gx[i] += g[i];
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  if (active_graph() && tracked(x)) {
    auto xi = x.impl(), oi = out.impl();
    record_node(out, [xi, oi] {
      auto& gx = impl_grad(*xi);
      const auto& g = oi->grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xi->data[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

// ============================================================
// normalization and losses
// ============================================================

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require_2d(x, "layernorm");
  const std::size_t r = x.dim(0), n = x.dim(1);
  if (gain.ndim() != 1 || gain.dim(0) != n || bias.ndim() != 1 ||
      bias.dim(0) != n) {
    throw ShapeError("layernorm gain/bias must have shape (" +
                     std::to_string(n) + ")");
  }
  Tensor out = Tensor::zeros({r, n});
  auto xhat = std::make_shared<std::vector<double>>(r * n);
  auto inv_s = std::make_shared<std::vector<double>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = x[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + kLnEps);
    (*inv_s)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (x[i * n + j] - mu) * is;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * gain[j] + bias[j];
    }
  }
  const bool nx = tracked(x), ng = tracked(gain), nb = tracked(bias);
  if (active_graph() && (nx || ng || nb)) {
    auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
    record_node(out, [xi, gi, bi, oi, xhat, inv_s, nx, ng, nb, r, n] {
      const auto& g = oi->grad;
      if (ng) {
        auto& gg = impl_grad(*gi);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < n; ++j)
            gg[j] += g[i * n + j] * (*xhat)[i * n + j];
      }
      if (nb) {
        auto& gb = impl_grad(*bi);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
      if (nx) {
        auto& gx = impl_grad(*xi);
        std::vector<double> dxhat(n);
        for (std::size_t i = 0; i < r; ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dxhat[j] = g[i * n + j] * gi->data[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * (*xhat)[i * n + j];
          }
          m1 /= static_cast<double>(n);
          m2 /= static_cast<double>(n);
          const double is = (*inv_s)[i];
          for (std::size_t j = 0; j < n; ++j)
            gx[i * n + j] +=
                (dxhat[j] - m1 - (*xhat)[i * n + j] * m2) * is;
        }
      }
    });
  }
  return out;
}

Tensor row_softmax(const Tensor& x) {
  require_2d(x, "row_softmax");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out = Tensor::zeros({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    double mx = x[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(x[i * c + j] - mx);
      z += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  if (active_graph() && tracked(x)) {
    auto xi = x.impl(), oi = out.impl();
    record_node(out, [xi, oi, r, c] {
      auto& gx = impl_grad(*xi);
      const auto& g = oi->grad;
      const auto& y = oi->data;
      for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
        for (std::size_t j = 0; j < c; ++j)
          gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<std::size_t>& labels) {
  require_2d(logits, "softmax_cross_entropy");
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (labels.size() != b) {
    throw ContractError("softmax_cross_entropy: " + std::to_string(b) +
                        " rows but " + std::to_string(labels.size()) +
                        " labels");
  }
  for (std::size_t y : labels) {
    if (y >= c) {
      throw ContractError("label " + std::to_string(y) + " out of range [0," +
                          std::to_string(c) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<double>>(b * c);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double mx = logits[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      (*probs)[i * c + j] = std::exp(logits[i * c + j] - mx);
      z += (*probs)[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] /= z;
    total += std::log(z) + mx - logits[i * c + labels[i]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(b));
  if (active_graph() && tracked(logits)) {
    auto li = logits.impl(), oi = out.impl();
    auto lab = labels;
    record_node(out, [li, oi, probs, lab, b, c] {
      auto& gl = impl_grad(*li);
      const double g = oi->grad[0] / static_cast<double>(b);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          const double ind = j == lab[i] ? 1.0 : 0.0;
          gl[i * c + j] += g * ((*probs)[i * c + j] - ind);
        }
    });
  }
  return out;
}

// ============================================================
// reductions, gathers, reshuffles
// ============================================================

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x[i];
  Tensor out = Tensor::scalar(s);
  if (active_graph() && tracked(x)) {
    auto xi = x.impl(), oi = out.impl();
    record_node(out, [xi, oi] {
      auto& gx = impl_grad(*xi);
      const double g = oi->grad[0];
      for (double& v : gx) v += g;
    });
  }
  return out;
}

Tensor mean_rows(const Tensor& x) {
  require_2d(x, "mean_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out = Tensor::zeros({1, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
  for (std::size_t j = 0; j < c; ++j) out[j] /= static_cast<double>(r);
  if (active_graph() && tracked(x)) {
    auto xi = x.impl(), oi = out.impl();
    record_node(out, [xi, oi, r, c] {
      auto& gx = impl_grad(*xi);
      const auto& g = oi->grad;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          gx[i * c + j] += g[j] / static_cast<double>(r);
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids) {
  require_2d(table, "embedding");
  const std::size_t v = table.dim(0), d = table.dim(1);
  for (std::size_t id : ids) {
    if (id >= v) {
      throw ContractError("embedding id " + std::to_string(id) +
                          " out of range [0," + std::to_string(v) + ")");
    }
  }
  const std::size_t t = ids.size();
  Tensor out = Tensor::zeros({t, d});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = table[ids[i] * d + j];
  if (active_graph() && tracked(table)) {
    auto ti = table.impl(), oi = out.impl();
    auto idv = ids;
    record_node(out, [ti, oi, idv, d] {
      auto& gt = impl_grad(*ti);
      const auto& g = oi->grad;
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          gt[idv[i] * d + j] += g[i * d + j];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_2d(x, "slice_cols");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (count == 0 || start + count > c) {
    throw ShapeError("slice_cols [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") out of range for " +
                     shape_string(x.shape()));
  }
  Tensor out = Tensor::zeros({r, count});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j)
      out[i * count + j] = x[i * c + start + j];
  if (active_graph() && tracked(x)) {
    auto xi = x.impl(), oi = out.impl();
    record_node(out, [xi, oi, start, count, r, c] {
      auto& gx = impl_grad(*xi);
      const auto& g = oi->grad;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j)
          gx[i * c + start + j] += g[i * count + j];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols needs at least one part");
  const std::size_t r = parts[0].dim(0);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_cols");
    if (p.dim(0) != r) {
      throw ShapeError("concat_cols row-count mismatch");
    }
    total += p.dim(1);
  }
  Tensor out = Tensor::zeros({r, total});
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t c = p.dim(1);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        out[i * total + off + j] = p[i * c + j];
    off += c;
  }
  bool any = false;
  std::vector<bool> need(parts.size());
  for (std::size_t k = 0; k < parts.size(); ++k) {
    need[k] = tracked(parts[k]);
    any = any || need[k];
  }
  if (active_graph() && any) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl());
    auto oi = out.impl();
    record_node(out, [impls, oi, need, r, total] {
      const auto& g = oi->grad;
      std::size_t off = 0;
      for (std::size_t k = 0; k < impls.size(); ++k) {
        const std::size_t c = impls[k]->shape[1];
        if (need[k]) {
          auto& gp = impl_grad(*impls[k]);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              gp[i * c + j] += g[i * total + off + j];
        }
        off += c;
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows needs at least one part");
  const std::size_t c = parts[0].dim(1);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_rows");
    if (p.dim(1) != c) {
      throw ShapeError("concat_rows column-count mismatch");
    }
    total += p.dim(0);
  }
  Tensor out = Tensor::zeros({total, c});
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t r = p.dim(0);
    for (std::size_t i = 0; i < r * c; ++i) out[off * c + i] = p[i];
    off += r;
  }
  bool any = false;
  std::vector<bool> need(parts.size());
  for (std::size_t k = 0; k < parts.size(); ++k) {
    need[k] = tracked(parts[k]);
    any = any || need[k];
  }
  if (active_graph() && any) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl());
    auto oi = out.impl();
    record_node(out, [impls, oi, need, c] {
      const auto& g = oi->grad;
      std::size_t off = 0;
      for (std::size_t k = 0; k < impls.size(); ++k) {
        const std::size_t r = impls[k]->shape[0];
        if (need[k]) {
          auto& gp = impl_grad(*impls[k]);
          for (std::size_t i = 0; i < r * c; ++i) gp[i] += g[off * c + i];
        }
        off += r;
      }
    });
  }
  return out;
}

// ============================================================
// seeded-noise product (perturbed forward without materializing ε)
// ============================================================

Tensor linear_seeded_noise(const Tensor& x, std::uint64_t seed,
                           std::uint64_t counter,
                           const std::vector<double>& row_scales) {
  require_2d(x, "linear_seeded_noise");
  const std::size_t b = x.dim(0), n = x.dim(1), m = row_scales.size();
  if (m == 0) throw ShapeError("linear_seeded_noise needs at least one row");
  Tensor out = Tensor::zeros({b, m});
  std::vector<double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    const double s = row_scales[i];
    if (s == 0.0) continue;
    normals_at(seed, counter + i * n, n, row.data());
    for (std::size_t bi = 0; bi < b; ++bi) {
      double acc = 0.0;
      for (std::size_t p = 0; p < n; ++p)
        acc += x[bi * n + p] * (s * row[p]);
      out[bi * m + i] = acc;
    }
  }
  if (active_graph() && tracked(x)) {
    auto xi = x.impl(), oi = out.impl();
    auto scales = row_scales;
    record_node(out, [xi, oi, seed, counter, scales, b, n, m] {
      auto& gx = impl_grad(*xi);
      const auto& g = oi->grad;
      std::vector<double> row(n);
      for (std::size_t i = 0; i < m; ++i) {
        const double s = scales[i];
        if (s == 0.0) continue;
        normals_at(seed, counter + i * n, n, row.data());
        for (std::size_t bi = 0; bi < b; ++bi) {
          const double gv = g[bi * m + i];
          if (gv == 0.0) continue;
          for (std::size_t p = 0; p < n; ++p)
            gx[bi * n + p] += gv * (s * row[p]);
        }
      }
    });
  }
  return out;
}

}  // namespace flatlora
