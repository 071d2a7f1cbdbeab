#include "flatlora/model.hpp"

#include <algorithm>
#include <cmath>

#include "flatlora/ops.hpp"

namespace flatlora {

namespace {

Tensor uniform_init(std::vector<std::size_t> shape, double bound,
                    RngStream& stream) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return Tensor::from(std::move(shape),
                      seeded_uniform(stream, n, -bound, bound));
}

Tensor normal_init_tensor(std::vector<std::size_t> shape, double std,
                          RngStream& stream) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  auto vals = seeded_normal(stream, n);
  for (double& v : vals) v *= std;
  return Tensor::from(std::move(shape), std::move(vals));
}

// plain frozen linear layer, no adapter
LoraLayer make_linear(std::size_t m, std::size_t n, RngStream& stream,
                      std::string name) {
  LoraLayer l;
  l.name = std::move(name);
  const double wb = std::sqrt(6.0 / static_cast<double>(n));
  const double bb = 1.0 / std::sqrt(static_cast<double>(n));
  l.W = uniform_init({m, n}, wb, stream);
  l.bias = uniform_init({m}, bb, stream);
  return l;
}

}  // namespace

LoraLayer lora_init(std::size_t m, std::size_t n, std::size_t r, double alpha,
                    RngStream& stream, std::string name, const Tensor* base_w,
                    bool normal_init) {
  if (r < 1 || r > std::min(m, n)) {
    throw ContractError("lora_init rank " + std::to_string(r) +
                        " outside [1, min(" + std::to_string(m) + "," +
                        std::to_string(n) + ")]");
  }
  if (alpha <= 0.0) throw ContractError("lora_init alpha must be positive");
  LoraLayer l = make_linear(m, n, stream, std::move(name));
  if (base_w != nullptr) {
    if (base_w->shape() != std::vector<std::size_t>{m, n}) {
      throw ShapeError("lora_init base weight shape " +
                       shape_string(base_w->shape()) + " does not match (" +
                       std::to_string(m) + "," + std::to_string(n) + ")");
    }
    l.W = base_w->clone();
  }
  l.rank = r;
  l.alpha = alpha;
  if (normal_init) {
    l.A = normal_init_tensor({r, n}, std::sqrt(2.0 / static_cast<double>(n)),
                             stream);
  } else {
    l.A = uniform_init({r, n}, std::sqrt(6.0 / static_cast<double>(n)),
                       stream);
  }
  l.B = Tensor::zeros({m, r});
  l.A.set_requires_grad(true);
  l.B.set_requires_grad(true);
  return l;
}

Tensor lora_forward(const LoraLayer& layer, const Tensor& x) {
  Tensor h = linear(x, layer.W);
  if (layer.adapted()) {
    h = add(h, scale(linear(linear(x, layer.A), layer.B), layer.scaling()));
  }
  if (layer.dense_overlay) {
    h = add(h, linear(x, *layer.dense_overlay));
  }
  if (layer.seeded_overlay && layer.seeded_overlay->sigma > 0.0) {
    const PerturbationRecord& rec = *layer.seeded_overlay;
    std::vector<double> scales(rec.rows());
    for (std::size_t i = 0; i < scales.size(); ++i)
      scales[i] = rec.row_scale(i);
    h = add(h, linear_seeded_noise(x, rec.seed, rec.counter, scales));
  }
  return add_rowvec(h, layer.bias);
}

Tensor merge_weights(const LoraLayer& layer) {
  Tensor out = layer.W.clone();
  if (!layer.adapted()) return out;
  const std::size_t m = layer.out_dim(), n = layer.in_dim(), r = layer.rank;
  const double s = layer.scaling();
  const auto& a = layer.A.data();
  const auto& b = layer.B.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < r; ++k) {
      const double w = s * b[i * r + k];
      if (w == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += w * a[k * n + j];
    }
  return out;
}

// ============================================================
// model construction
// ============================================================

namespace {

void validate(const ModelSpec& spec) {
  if (spec.rank < 1) throw ConfigError("rank must be at least 1");
  if (spec.alpha <= 0.0) throw ConfigError("alpha must be positive");
  if (spec.arch == Architecture::mlp) {
    if (spec.mlp_dims.size() < 2) {
      throw ConfigError("mlp_dims needs an input and an output width");
    }
    for (std::size_t d : spec.mlp_dims) {
      if (d == 0) throw ConfigError("mlp_dims entries must be positive");
    }
  } else {
    if (spec.d_model == 0 || spec.heads == 0 ||
        spec.d_model % spec.heads != 0) {
      throw ConfigError("d_model must be a positive multiple of heads");
    }
    if (spec.vocab == 0 || spec.seq_len == 0 || spec.d_ff == 0) {
      throw ConfigError("vocab, seq_len, d_ff must be positive");
    }
    if (spec.classes < 2) throw ConfigError("classes must be at least 2");
  }
}

LoraLayer build_layer(const ModelSpec& spec, std::size_t m, std::size_t n,
                      bool adapt, const RngStream& base,
                      const std::string& name) {
  RngStream s = base.fork(name);
  if (!adapt) return make_linear(m, n, s, name);
  const std::size_t r = std::min(spec.rank, std::min(m, n));
  return lora_init(m, n, r, spec.alpha, s, name, nullptr, spec.normal_init);
}

}  // namespace

Model build_model(const ModelSpec& spec, const RngStream& stream) {
  validate(spec);
  Model model;
  model.spec = spec;
  if (spec.arch == Architecture::mlp) {
    const auto& dims = spec.mlp_dims;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      const bool is_head = i + 2 == dims.size();
      const bool adapt = !is_head || spec.adapt_head;
      model.layers.push_back(build_layer(spec, dims[i + 1], dims[i], adapt,
                                         stream,
                                         is_head ? "head"
                                                 : "fc" + std::to_string(i)));
    }
    return model;
  }

  const std::size_t d = spec.d_model;
  {
    RngStream es = stream.fork("tok_emb");
    model.tok_emb =
        uniform_init({spec.vocab, d}, std::sqrt(6.0 / d), es);
    RngStream ps = stream.fork("pos_emb");
    model.pos_emb =
        uniform_init({spec.seq_len, d}, std::sqrt(6.0 / d), ps);
  }
  model.ln1_g = Tensor::full({d}, 1.0);
  model.ln1_b = Tensor::zeros({d});
  model.ln2_g = Tensor::full({d}, 1.0);
  model.ln2_b = Tensor::zeros({d});
  model.lnf_g = Tensor::full({d}, 1.0);
  model.lnf_b = Tensor::zeros({d});
  if (spec.train_norms) {
    for (Tensor* t : {&model.ln1_g, &model.ln1_b, &model.ln2_g, &model.ln2_b,
                      &model.lnf_g, &model.lnf_b}) {
      t->set_requires_grad(true);
    }
  }
  model.layers.push_back(build_layer(spec, d, d, true, stream, "attn.q"));
  model.layers.push_back(build_layer(spec, d, d, true, stream, "attn.k"));
  model.layers.push_back(build_layer(spec, d, d, true, stream, "attn.v"));
  model.layers.push_back(build_layer(spec, d, d, true, stream, "attn.o"));
  model.layers.push_back(
      build_layer(spec, spec.d_ff, d, true, stream, "ffn.in"));
  model.layers.push_back(
      build_layer(spec, d, spec.d_ff, true, stream, "ffn.out"));
  model.layers.push_back(
      build_layer(spec, spec.classes, d, spec.adapt_head, stream, "head"));
  return model;
}

LoraLayer& Model::layer(const std::string& name) {
  for (LoraLayer& l : layers) {
    if (l.name == name) return l;
  }
  throw ContractError("no layer named " + name);
}

const LoraLayer& Model::layer(const std::string& name) const {
  for (const LoraLayer& l : layers) {
    if (l.name == name) return l;
  }
  throw ContractError("no layer named " + name);
}

std::vector<Tensor> Model::trainable_params() {
  std::vector<Tensor> out;
  for (LoraLayer& l : layers) {
    if (l.adapted()) {
      out.push_back(l.A);
      out.push_back(l.B);
    }
  }
  if (spec.train_norms && spec.arch == Architecture::tiny_transformer) {
    for (Tensor* t : {&ln1_g, &ln1_b, &ln2_g, &ln2_b, &lnf_g, &lnf_b}) {
      out.push_back(*t);
    }
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::named_tensors() {
  std::vector<std::pair<std::string, Tensor>> out;
  for (LoraLayer& l : layers) {
    out.emplace_back(l.name + ".W", l.W);
    out.emplace_back(l.name + ".bias", l.bias);
    if (l.adapted()) {
      out.emplace_back(l.name + ".A", l.A);
      out.emplace_back(l.name + ".B", l.B);
    }
  }
  if (spec.arch == Architecture::tiny_transformer) {
    out.emplace_back("tok_emb", tok_emb);
    out.emplace_back("pos_emb", pos_emb);
    out.emplace_back("ln1.g", ln1_g);
    out.emplace_back("ln1.b", ln1_b);
    out.emplace_back("ln2.g", ln2_g);
    out.emplace_back("ln2.b", ln2_b);
    out.emplace_back("lnf.g", lnf_g);
    out.emplace_back("lnf.b", lnf_b);
  }
  return out;
}

std::size_t Model::trainable_count() const {
  std::size_t total = 0;
  for (const LoraLayer& l : layers) {
    if (l.adapted()) total += l.rank * (l.out_dim() + l.in_dim());
  }
  if (spec.train_norms && spec.arch == Architecture::tiny_transformer) {
    total += 6 * spec.d_model;
  }
  return total;
}

std::size_t Model::dense_linear_count() const {
  std::size_t total = 0;
  for (const LoraLayer& l : layers) {
    if (l.adapted()) total += l.out_dim() * l.in_dim();
  }
  return total;
}

// ============================================================
// forward
// ============================================================

namespace {

Tensor layer_fwd(const LoraLayer& l, const Tensor& x,
                 const std::map<std::string, Tensor>* ov) {
  if (ov != nullptr) {
    auto it = ov->find(l.name);
    if (it != ov->end()) return add_rowvec(linear(x, it->second), l.bias);
  }
  return lora_forward(l, x);
}

Tensor with_aux(const Model& m, const Tensor& p, const std::string& name) {
  auto it = m.aux_overlays.find(name);
  return it == m.aux_overlays.end() ? p : add(p, it->second);
}

Tensor transformer_sequence_logits(const Model& m,
                                   const std::vector<std::size_t>& ids,
                                   const std::map<std::string, Tensor>* ov) {
  if (ids.empty() || ids.size() > m.spec.seq_len) {
    throw ShapeError("token sequence length must be in [1," +
                     std::to_string(m.spec.seq_len) + "]");
  }
  std::vector<std::size_t> positions(ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;

  Tensor x = add(embedding(with_aux(m, m.tok_emb, "tok_emb"), ids),
                 embedding(with_aux(m, m.pos_emb, "pos_emb"), positions));

  Tensor h1 = layernorm(x, with_aux(m, m.ln1_g, "ln1.g"),
                        with_aux(m, m.ln1_b, "ln1.b"));
  const Tensor q = layer_fwd(m.layer("attn.q"), h1, ov);
  const Tensor k = layer_fwd(m.layer("attn.k"), h1, ov);
  const Tensor v = layer_fwd(m.layer("attn.v"), h1, ov);

  const std::size_t dh = m.spec.d_model / m.spec.heads;
  std::vector<Tensor> heads;
  heads.reserve(m.spec.heads);
  for (std::size_t h = 0; h < m.spec.heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, dh);
    const Tensor kh = slice_cols(k, h * dh, dh);
    const Tensor vh = slice_cols(v, h * dh, dh);
    const Tensor scores =
        scale(matmul(qh, transpose(kh)),
              1.0 / std::sqrt(static_cast<double>(dh)));
    heads.push_back(matmul(row_softmax(scores), vh));
  }
  const Tensor attn_out =
      layer_fwd(m.layer("attn.o"), concat_cols(heads), ov);
  const Tensor x2 = add(x, attn_out);

  Tensor h2 = layernorm(x2, with_aux(m, m.ln2_g, "ln2.g"),
                        with_aux(m, m.ln2_b, "ln2.b"));
  const Tensor f =
      layer_fwd(m.layer("ffn.out"), gelu(layer_fwd(m.layer("ffn.in"), h2, ov)),
                ov);
  const Tensor x3 = add(x2, f);

  const Tensor hf = layernorm(x3, with_aux(m, m.lnf_g, "lnf.g"),
                              with_aux(m, m.lnf_b, "lnf.b"));
  return layer_fwd(m.layer("head"), mean_rows(hf), ov);
}

}  // namespace

Tensor model_logits(const Model& model, const Batch& batch,
                    const std::map<std::string, Tensor>* weight_override) {
  if (model.spec.arch == Architecture::mlp) {
    Tensor h = batch.features;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      h = layer_fwd(model.layers[i], h, weight_override);
      if (i + 1 < model.layers.size()) h = relu(h);
    }
    return h;
  }
  if (batch.tokens.empty()) {
    throw ContractError("tiny_transformer expects token sequences");
  }
  std::vector<Tensor> rows;
  rows.reserve(batch.tokens.size());
  for (const auto& ids : batch.tokens) {
    rows.push_back(
        transformer_sequence_logits(model, ids, weight_override));
  }
  return concat_rows(rows);
}

Tensor model_loss(const Model& model, const Batch& batch,
                  const std::map<std::string, Tensor>* weight_override) {
  return softmax_cross_entropy(model_logits(model, batch, weight_override),
                               batch.labels);
}

double model_accuracy(const Model& model, const Batch& batch) {
  const Tensor logits = model_logits(model, batch);
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (batch.labels.size() != rows) {
    throw ShapeError("accuracy: " + std::to_string(batch.labels.size()) +
                     " labels for " + std::to_string(rows) + " rows");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < cols; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    if (best == batch.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows);
}

}  // namespace flatlora
