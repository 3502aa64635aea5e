#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gcrank/io.hpp"
#include "gcrank/linalg.hpp"
#include "gcrank/rng.hpp"

namespace gcrank {

enum class EncoderMode : std::uint8_t { table = 0, graph = 1 };

// Cross-layer parameterization: `vector` is the w/b column-vector form,
// `matrix` swaps the weight vector for a full matrix per layer.
enum class CrossKind : std::uint8_t { vector = 0, matrix = 1 };

struct ModelConfig {
  std::uint32_t num_users = 0;
  std::uint32_t num_items = 0;
  std::uint32_t embed_dim = 64;        // d
  std::uint32_t context_dim = 0;       // d^c
  std::uint32_t context_out_dim = 16;  // d' (ignored when context_dim == 0)
  std::uint32_t cross_layers = 2;      // L1
  std::vector<std::uint32_t> deep_widths{128, 64};
  CrossKind cross_kind = CrossKind::vector;
  EncoderMode encoder = EncoderMode::table;
  std::uint32_t gcn_layers = 2;   // graph encoder depth L
  std::vector<double> readout;    // size L+1; empty means uniform 1/(L+1)

  std::uint32_t ctx_out() const { return context_dim == 0 ? 0 : context_out_dim; }
  std::uint32_t input_dim() const { return 2 * embed_dim + ctx_out(); }
  std::uint32_t deep_out() const { return deep_widths.empty() ? input_dim() : deep_widths.back(); }
  std::uint32_t head_dim() const { return input_dim() + deep_out(); }

  std::string echo() const {
    std::ostringstream os;
    os << "num_users=" << num_users << "\nnum_items=" << num_items << "\nembed_dim=" << embed_dim
       << "\ncontext_dim=" << context_dim << "\ncontext_out_dim=" << context_out_dim
       << "\ncross_layers=" << cross_layers << "\ndeep_widths=";
    for (std::size_t i = 0; i < deep_widths.size(); ++i) os << (i ? "," : "") << deep_widths[i];
    os << "\ncross_kind=" << (cross_kind == CrossKind::vector ? "vector" : "matrix")
       << "\nencoder=" << (encoder == EncoderMode::table ? "table" : "graph")
       << "\ngcn_layers=" << gcn_layers << "\nreadout=";
    for (std::size_t i = 0; i < readout.size(); ++i) os << (i ? "," : "") << readout[i];
    os << "\n";
    return os.str();
  }
};

// Users occupy rows [0, |U|), items rows [|U|, |U|+|I|).
struct EmbeddingTable {
  std::uint32_t num_users = 0;
  std::uint32_t num_items = 0;
  std::uint32_t dim = 0;
  std::vector<double> data;

  std::uint32_t num_nodes() const { return num_users + num_items; }
  std::uint32_t user_node(std::uint32_t u) const { return u; }
  std::uint32_t item_node(std::uint32_t i) const { return num_users + i; }

  std::span<const double> row(std::uint32_t node) const {
    return {data.data() + std::size_t(node) * dim, dim};
  }
  std::span<double> row(std::uint32_t node) {
    return {data.data() + std::size_t(node) * dim, dim};
  }
};

// Affine map R^{d^c} -> R^{d'}; identity-on-empty when d^c = 0.
struct ContextEncoder {
  Mat weight;  // d^c × d'
  Vec bias;    // d'
};

struct CrossLayer {
  Vec w;   // input_dim (vector kind)
  Vec b;   // input_dim
  Mat W;   // input_dim × input_dim (matrix kind)
};

struct DeepNetwork {
  std::vector<Mat> weights;
  std::vector<Vec> biases;
};

struct RankingModel {
  ModelConfig cfg;
  EmbeddingTable embeddings;
  ContextEncoder context_enc;
  std::vector<CrossLayer> cross;
  DeepNetwork deep;
  Vec logits_w;  // head_dim

  // One-shot full propagation over the interaction graph, cached for
  // inference when the encoder mode is graph. Set via graphenc.
  std::shared_ptr<const std::vector<double>> graph_cache;

  std::span<const double> encoder_row(std::uint32_t node) const {
    if (cfg.encoder == EncoderMode::graph && graph_cache)
      return {graph_cache->data() + std::size_t(node) * cfg.embed_dim, cfg.embed_dim};
    return embeddings.row(node);
  }
};

inline RankingModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  RankingModel m;
  m.cfg = cfg;
  const std::uint32_t d = cfg.embed_dim;
  const std::uint32_t in_dim = cfg.input_dim();

  auto rng = component_rng(seed, "model.init");
  auto fill_uniform = [&](std::span<double> out, double bound) {
    for (auto& v : out) v = rng.next_uniform(-bound, bound);
  };

  m.embeddings.num_users = cfg.num_users;
  m.embeddings.num_items = cfg.num_items;
  m.embeddings.dim = d;
  m.embeddings.data.resize(std::size_t(cfg.num_users + cfg.num_items) * d);
  fill_uniform(m.embeddings.data, 1.0 / std::sqrt(double(d)));

  if (cfg.context_dim > 0) {
    m.context_enc.weight = Mat(cfg.context_dim, cfg.ctx_out());
    fill_uniform(m.context_enc.weight.a, 1.0 / std::sqrt(double(cfg.context_dim)));
    m.context_enc.bias.assign(cfg.ctx_out(), 0.0);
  }

  m.cross.resize(cfg.cross_layers);
  for (auto& layer : m.cross) {
    const double bound = 1.0 / std::sqrt(double(in_dim));
    layer.b.assign(in_dim, 0.0);
    if (cfg.cross_kind == CrossKind::vector) {
      layer.w.resize(in_dim);
      fill_uniform(layer.w, bound);
    } else {
      layer.W = Mat(in_dim, in_dim);
      fill_uniform(layer.W.a, bound);
    }
  }

  std::uint32_t prev = in_dim;
  for (auto width : cfg.deep_widths) {
    Mat w(width, prev);
    fill_uniform(w.a, 1.0 / std::sqrt(double(prev)));
    m.deep.weights.push_back(std::move(w));
    m.deep.biases.emplace_back(width, 0.0);
    prev = width;
  }

  m.logits_w.resize(cfg.head_dim());
  fill_uniform(m.logits_w, 1.0 / std::sqrt(double(cfg.head_dim())));
  return m;
}

// Activations retained for the backward pass.
struct ForwardWorkspace {
  Vec z0;
  std::vector<Vec> cross_z;   // z^(0..L1)
  std::vector<double> cross_s;  // scalar zᵀw per layer (vector kind)
  std::vector<Vec> cross_t;     // Wz + b per layer (matrix kind)
  std::vector<Vec> deep_h;    // h^(0..L2)
  Vec head;                   // [cross_out ‖ deep_out]
  double logit = 0.0;
  double p = 0.0;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// z_ij = [f(x_i) ‖ f(x_j) ‖ h(c_ij)]
inline void encode_input(const RankingModel& m, std::uint32_t user, std::uint32_t item,
                         std::span<const double> context, Vec& z0) {
  if (user >= m.cfg.num_users) throw DataError("encode_input: user index out of range");
  if (item >= m.cfg.num_items) throw DataError("encode_input: item index out of range");
  if (context.size() != m.cfg.context_dim) throw DataError("encode_input: context length mismatch");

  const std::uint32_t d = m.cfg.embed_dim;
  z0.resize(m.cfg.input_dim());
  const auto zu = m.encoder_row(m.embeddings.user_node(user));
  const auto zv = m.encoder_row(m.embeddings.item_node(item));
  std::copy(zu.begin(), zu.end(), z0.begin());
  std::copy(zv.begin(), zv.end(), z0.begin() + d);
  if (m.cfg.context_dim > 0) {
    const auto& enc = m.context_enc;
    for (std::uint32_t k = 0; k < m.cfg.ctx_out(); ++k) {
      double s = enc.bias[k];
      for (std::uint32_t c = 0; c < m.cfg.context_dim; ++c) s += context[c] * enc.weight(c, k);
      z0[2 * d + k] = s;
    }
  }
}

// z^(l+1) = z^(0)·(z^(l)ᵀ w^(l)) + b^(l) + z^(l)   (vector kind)
// z^(l+1) = z^(0) ⊙ (W^(l) z^(l) + b^(l)) + z^(l)  (matrix kind)
inline const Vec& cross_forward(const RankingModel& m, const Vec& z0, ForwardWorkspace& ws) {
  const std::size_t layers = m.cross.size();
  ws.cross_z.assign(1, z0);
  ws.cross_z.resize(layers + 1);
  ws.cross_s.assign(layers, 0.0);
  if (m.cfg.cross_kind == CrossKind::matrix) ws.cross_t.resize(layers);

  for (std::size_t l = 0; l < layers; ++l) {
    const Vec& z = ws.cross_z[l];
    Vec& next = ws.cross_z[l + 1];
    next.resize(z.size());
    const auto& layer = m.cross[l];
    if (m.cfg.cross_kind == CrossKind::vector) {
      const double s = dot(z, layer.w);
      ws.cross_s[l] = s;
      for (std::size_t i = 0; i < z.size(); ++i) next[i] = z0[i] * s + layer.b[i] + z[i];
    } else {
      Vec& t = ws.cross_t[l];
      matvec(layer.W, z, t);
      for (std::size_t i = 0; i < z.size(); ++i) {
        t[i] += layer.b[i];
        next[i] = z0[i] * t[i] + z[i];
      }
    }
  }
  return ws.cross_z.back();
}

// h^(l+1) = max(0, W^(l) h^(l) + b^(l))
inline const Vec& deep_forward(const RankingModel& m, const Vec& h0, ForwardWorkspace& ws) {
  ws.deep_h.assign(1, h0);
  ws.deep_h.resize(m.deep.weights.size() + 1);
  for (std::size_t l = 0; l < m.deep.weights.size(); ++l) {
    Vec& next = ws.deep_h[l + 1];
    matvec(m.deep.weights[l], ws.deep_h[l], next);
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] += m.deep.biases[l][i];
      if (next[i] < 0.0) next[i] = 0.0;
    }
  }
  return ws.deep_h.back();
}

// p = σ([cross_out ‖ deep_out] · w_logits)
inline double forward_from_input(const RankingModel& m, const Vec& z0, ForwardWorkspace& ws) {
  ws.z0 = z0;
  const Vec& cross_out = cross_forward(m, ws.z0, ws);
  const Vec& deep_out = deep_forward(m, ws.z0, ws);
  ws.head.resize(cross_out.size() + deep_out.size());
  std::copy(cross_out.begin(), cross_out.end(), ws.head.begin());
  std::copy(deep_out.begin(), deep_out.end(), ws.head.begin() + cross_out.size());
  ws.logit = dot(ws.head, m.logits_w);
  ws.p = sigmoid(ws.logit);
  return ws.p;
}

inline double predict(const RankingModel& m, std::uint32_t user, std::uint32_t item,
                      std::span<const double> context, ForwardWorkspace& ws) {
  encode_input(m, user, item, context, ws.z0);
  const Vec& cross_out = cross_forward(m, ws.z0, ws);
  const Vec& deep_out = deep_forward(m, ws.z0, ws);
  ws.head.resize(cross_out.size() + deep_out.size());
  std::copy(cross_out.begin(), cross_out.end(), ws.head.begin());
  std::copy(deep_out.begin(), deep_out.end(), ws.head.begin() + cross_out.size());
  ws.logit = dot(ws.head, m.logits_w);
  ws.p = sigmoid(ws.logit);
  return ws.p;
}

struct ScoreQuery {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  std::span<const double> context;
};

// Pure and order-preserving; results are independent of batch partitioning.
inline Vec score_batch(const RankingModel& m, std::span<const ScoreQuery> queries) {
  Vec out(queries.size());
  ForwardWorkspace ws;
  for (std::size_t i = 0; i < queries.size(); ++i)
    out[i] = predict(m, queries[i].user, queries[i].item, queries[i].context, ws);
  return out;
}

namespace detail {

inline void write_tensor(std::ostream& os, const std::string& name, std::span<const double> data,
                         std::span<const std::uint64_t> dims) {
  io::write_string(os, name);
  io::write_u32(os, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) io::write_u64(os, d);
  for (auto v : data) io::write_f64(os, v);
}

inline void read_tensor(std::istream& is, const std::string& expect_name, std::vector<double>& data,
                        std::vector<std::uint64_t>& dims) {
  const std::string name = io::read_string(is);
  if (name != expect_name) throw DataError("checkpoint tensor order mismatch: got " + name);
  dims.resize(io::read_u32(is));
  std::uint64_t total = 1;
  for (auto& d : dims) {
    d = io::read_u64(is);
    total *= d;
  }
  data.resize(total);
  for (auto& v : data) v = io::read_f64(is);
}

}  // namespace detail

struct CheckpointMeta {
  std::uint32_t best_epoch = 0;
  double best_val_auc = 0.0;
  std::uint64_t seed = 0;
};

// Versioned container: config echo, shape-prefixed f64 tensors, best-epoch
// metadata. Round-trips bit-exactly.
inline void save_checkpoint(const RankingModel& m, const CheckpointMeta& meta, const std::string& path) {
  auto os = io::open_out(path);
  io::write_magic(os, "GCRC");
  io::write_u32(os, 1);

  io::write_string(os, m.cfg.echo());
  io::write_u64(os, m.cfg.num_users);
  io::write_u64(os, m.cfg.num_items);
  io::write_u32(os, m.cfg.embed_dim);
  io::write_u32(os, m.cfg.context_dim);
  io::write_u32(os, m.cfg.context_out_dim);
  io::write_u32(os, m.cfg.cross_layers);
  io::write_u32(os, static_cast<std::uint32_t>(m.cfg.deep_widths.size()));
  for (auto w : m.cfg.deep_widths) io::write_u32(os, w);
  io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(m.cfg.cross_kind));
  io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(m.cfg.encoder));
  io::write_u32(os, m.cfg.gcn_layers);
  io::write_u32(os, static_cast<std::uint32_t>(m.cfg.readout.size()));
  for (auto a : m.cfg.readout) io::write_f64(os, a);

  const std::uint64_t nodes = m.embeddings.num_nodes();
  detail::write_tensor(os, "embeddings", m.embeddings.data,
                       std::vector<std::uint64_t>{nodes, m.cfg.embed_dim});
  detail::write_tensor(os, "context.weight", m.context_enc.weight.a,
                       std::vector<std::uint64_t>{m.context_enc.weight.rows, m.context_enc.weight.cols});
  detail::write_tensor(os, "context.bias", m.context_enc.bias,
                       std::vector<std::uint64_t>{m.context_enc.bias.size()});
  for (std::size_t l = 0; l < m.cross.size(); ++l) {
    const auto tag = std::to_string(l);
    if (m.cfg.cross_kind == CrossKind::vector)
      detail::write_tensor(os, "cross." + tag + ".w", m.cross[l].w,
                           std::vector<std::uint64_t>{m.cross[l].w.size()});
    else
      detail::write_tensor(os, "cross." + tag + ".W", m.cross[l].W.a,
                           std::vector<std::uint64_t>{m.cross[l].W.rows, m.cross[l].W.cols});
    detail::write_tensor(os, "cross." + tag + ".b", m.cross[l].b,
                         std::vector<std::uint64_t>{m.cross[l].b.size()});
  }
  for (std::size_t l = 0; l < m.deep.weights.size(); ++l) {
    const auto tag = std::to_string(l);
    detail::write_tensor(os, "deep." + tag + ".W", m.deep.weights[l].a,
                         std::vector<std::uint64_t>{m.deep.weights[l].rows, m.deep.weights[l].cols});
    detail::write_tensor(os, "deep." + tag + ".b", m.deep.biases[l],
                         std::vector<std::uint64_t>{m.deep.biases[l].size()});
  }
  detail::write_tensor(os, "logits.w", m.logits_w, std::vector<std::uint64_t>{m.logits_w.size()});

  io::write_u32(os, meta.best_epoch);
  io::write_f64(os, meta.best_val_auc);
  io::write_u64(os, meta.seed);
}

inline RankingModel load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
  auto is = io::open_in(path);
  io::expect_magic(is, "GCRC", "checkpoint");
  const auto version = io::read_u32(is);
  if (version != 1) throw DataError("unsupported checkpoint version");

  (void)io::read_string(is);  // human-readable config echo
  RankingModel m;
  m.cfg.num_users = static_cast<std::uint32_t>(io::read_u64(is));
  m.cfg.num_items = static_cast<std::uint32_t>(io::read_u64(is));
  m.cfg.embed_dim = io::read_u32(is);
  m.cfg.context_dim = io::read_u32(is);
  m.cfg.context_out_dim = io::read_u32(is);
  m.cfg.cross_layers = io::read_u32(is);
  m.cfg.deep_widths.resize(io::read_u32(is));
  for (auto& w : m.cfg.deep_widths) w = io::read_u32(is);
  m.cfg.cross_kind = static_cast<CrossKind>(io::read_le<std::uint8_t>(is));
  m.cfg.encoder = static_cast<EncoderMode>(io::read_le<std::uint8_t>(is));
  m.cfg.gcn_layers = io::read_u32(is);
  m.cfg.readout.resize(io::read_u32(is));
  for (auto& a : m.cfg.readout) a = io::read_f64(is);

  std::vector<std::uint64_t> dims;
  m.embeddings.num_users = m.cfg.num_users;
  m.embeddings.num_items = m.cfg.num_items;
  m.embeddings.dim = m.cfg.embed_dim;
  detail::read_tensor(is, "embeddings", m.embeddings.data, dims);
  detail::read_tensor(is, "context.weight", m.context_enc.weight.a, dims);
  m.context_enc.weight.rows = dims.size() > 0 ? dims[0] : 0;
  m.context_enc.weight.cols = dims.size() > 1 ? dims[1] : 0;
  detail::read_tensor(is, "context.bias", m.context_enc.bias, dims);
  m.cross.resize(m.cfg.cross_layers);
  for (std::size_t l = 0; l < m.cross.size(); ++l) {
    const auto tag = std::to_string(l);
    if (m.cfg.cross_kind == CrossKind::vector) {
      detail::read_tensor(is, "cross." + tag + ".w", m.cross[l].w, dims);
    } else {
      detail::read_tensor(is, "cross." + tag + ".W", m.cross[l].W.a, dims);
      m.cross[l].W.rows = dims[0];
      m.cross[l].W.cols = dims[1];
    }
    detail::read_tensor(is, "cross." + tag + ".b", m.cross[l].b, dims);
  }
  m.deep.weights.resize(m.cfg.deep_widths.size());
  m.deep.biases.resize(m.cfg.deep_widths.size());
  for (std::size_t l = 0; l < m.deep.weights.size(); ++l) {
    const auto tag = std::to_string(l);
    detail::read_tensor(is, "deep." + tag + ".W", m.deep.weights[l].a, dims);
    m.deep.weights[l].rows = dims[0];
    m.deep.weights[l].cols = dims[1];
    detail::read_tensor(is, "deep." + tag + ".b", m.deep.biases[l], dims);
  }
  detail::read_tensor(is, "logits.w", m.logits_w, dims);

  CheckpointMeta meta_local;
  meta_local.best_epoch = io::read_u32(is);
  meta_local.best_val_auc = io::read_f64(is);
  meta_local.seed = io::read_u64(is);
  if (meta) *meta = meta_local;
  return m;
}

}  // namespace gcrank
