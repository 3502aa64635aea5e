#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gcrank/dataset.hpp"
#include "gcrank/graphenc.hpp"
#include "gcrank/metrics.hpp"
#include "gcrank/model.hpp"

namespace gcrank {

inline constexpr double kPredictionClamp = 1e-7;

// Mean of -[y log p + (1-y) log(1-p)] over the batch plus λ Σ_l ‖w^(l)‖²
// over cross-layer weights; predictions clamped to [ε, 1-ε].
inline double bce_loss(std::span<const double> predictions, std::span<const double> labels,
                       double l2_lambda, const std::vector<CrossLayer>& cross, CrossKind kind) {
  if (predictions.size() != labels.size()) throw DataError("bce_loss: size mismatch");
  if (predictions.empty()) throw DataError("bce_loss: empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double y = labels[i];
    if (y != 0.0 && y != 1.0) throw DataError("bce_loss: label outside {0,1}");
    const double p = std::clamp(predictions[i], kPredictionClamp, 1.0 - kPredictionClamp);
    sum += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  double reg = 0.0;
  for (const auto& layer : cross) {
    const auto& w = kind == CrossKind::vector ? layer.w : layer.W.a;
    for (double v : w) reg += v * v;
  }
  return sum / static_cast<double>(predictions.size()) + l2_lambda * reg;
}

// Gradient accumulator mirroring the parameter shapes. Embedding gradients
// are sparse: only rows touched by the batch appear.
struct ModelGrads {
  std::map<std::uint32_t, Vec> embed_rows;  // node -> d-vector, ordered for determinism
  Mat ctx_w;
  Vec ctx_b;
  std::vector<Vec> cross_w;
  std::vector<Mat> cross_W;
  std::vector<Vec> cross_b;
  std::vector<Mat> deep_w;
  std::vector<Vec> deep_b;
  Vec logits_w;

  void init_shapes(const RankingModel& m) {
    embed_rows.clear();
    ctx_w = Mat(m.context_enc.weight.rows, m.context_enc.weight.cols);
    ctx_b.assign(m.context_enc.bias.size(), 0.0);
    cross_w.assign(m.cross.size(), {});
    cross_W.assign(m.cross.size(), {});
    cross_b.assign(m.cross.size(), {});
    for (std::size_t l = 0; l < m.cross.size(); ++l) {
      cross_b[l].assign(m.cross[l].b.size(), 0.0);
      if (m.cfg.cross_kind == CrossKind::vector) cross_w[l].assign(m.cross[l].w.size(), 0.0);
      else cross_W[l] = Mat(m.cross[l].W.rows, m.cross[l].W.cols);
    }
    deep_w.clear();
    deep_b.clear();
    for (std::size_t l = 0; l < m.deep.weights.size(); ++l) {
      deep_w.emplace_back(m.deep.weights[l].rows, m.deep.weights[l].cols);
      deep_b.emplace_back(m.deep.biases[l].size(), 0.0);
    }
    logits_w.assign(m.logits_w.size(), 0.0);
  }

  Vec& embed_row(std::uint32_t node, std::uint32_t dim) {
    auto [it, inserted] = embed_rows.try_emplace(node);
    if (inserted) it->second.assign(dim, 0.0);
    return it->second;
  }
};

namespace detail {

// Backward through logits head, deep and cross networks for one sample.
// `dlogit` already carries the 1/N batch scale. Returns dL/dz0.
inline void backward_sample(const RankingModel& m, const ForwardWorkspace& ws, double dlogit,
                            ModelGrads& g, Vec& dz0) {
  const std::size_t cross_dim = ws.cross_z.back().size();
  const std::size_t deep_dim = ws.deep_h.back().size();

  // logits head
  for (std::size_t i = 0; i < ws.head.size(); ++i) g.logits_w[i] += dlogit * ws.head[i];
  Vec dcross(cross_dim), ddeep(deep_dim);
  for (std::size_t i = 0; i < cross_dim; ++i) dcross[i] = dlogit * m.logits_w[i];
  for (std::size_t i = 0; i < deep_dim; ++i) ddeep[i] = dlogit * m.logits_w[cross_dim + i];

  dz0.assign(ws.z0.size(), 0.0);

  // deep network: h^(l+1) = relu(W h^(l) + b)
  Vec grad = std::move(ddeep);
  for (std::size_t l = m.deep.weights.size(); l-- > 0;) {
    const Vec& out = ws.deep_h[l + 1];
    for (std::size_t i = 0; i < grad.size(); ++i)
      if (out[i] <= 0.0) grad[i] = 0.0;
    outer_accum(g.deep_w[l], grad, ws.deep_h[l]);
    for (std::size_t i = 0; i < grad.size(); ++i) g.deep_b[l][i] += grad[i];
    Vec prev(ws.deep_h[l].size(), 0.0);
    matvec_t_accum(m.deep.weights[l], grad, prev);
    grad = std::move(prev);
  }
  for (std::size_t i = 0; i < dz0.size(); ++i) dz0[i] += grad[i];

  // cross network
  Vec gz = std::move(dcross);
  Vec dz0_direct(ws.z0.size(), 0.0);
  for (std::size_t l = m.cross.size(); l-- > 0;) {
    const Vec& z = ws.cross_z[l];
    if (m.cfg.cross_kind == CrossKind::vector) {
      // z^(l+1) = z0·s + b + z^(l), s = z^(l)ᵀw
      const double s = ws.cross_s[l];
      const double ds = dot(gz, ws.z0);
      for (std::size_t i = 0; i < gz.size(); ++i) {
        dz0_direct[i] += gz[i] * s;
        g.cross_b[l][i] += gz[i];
        g.cross_w[l][i] += ds * z[i];
      }
      for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += ds * m.cross[l].w[i];
    } else {
      // z^(l+1) = z0 ⊙ t + z^(l), t = W z^(l) + b
      const Vec& t = ws.cross_t[l];
      Vec dt(gz.size());
      for (std::size_t i = 0; i < gz.size(); ++i) {
        dz0_direct[i] += gz[i] * t[i];
        dt[i] = gz[i] * ws.z0[i];
        g.cross_b[l][i] += dt[i];
      }
      outer_accum(g.cross_W[l], dt, z);
      Vec prev(gz.size(), 0.0);
      matvec_t_accum(m.cross[l].W, dt, prev);
      for (std::size_t i = 0; i < gz.size(); ++i) gz[i] = prev[i] + gz[i];
    }
  }
  for (std::size_t i = 0; i < dz0.size(); ++i) dz0[i] += gz[i] + dz0_direct[i];
}

inline void context_backward(const RankingModel& m, std::span<const double> context,
                             std::span<const double> dzc, ModelGrads& g) {
  if (m.cfg.context_dim == 0) return;
  for (std::uint32_t c = 0; c < m.cfg.context_dim; ++c)
    for (std::uint32_t k = 0; k < m.cfg.ctx_out(); ++k) g.ctx_w(c, k) += context[c] * dzc[k];
  for (std::uint32_t k = 0; k < m.cfg.ctx_out(); ++k) g.ctx_b[k] += dzc[k];
}

inline void add_l2_gradient(const RankingModel& m, double l2_lambda, ModelGrads& g) {
  if (l2_lambda == 0.0) return;
  for (std::size_t l = 0; l < m.cross.size(); ++l) {
    if (m.cfg.cross_kind == CrossKind::vector) {
      for (std::size_t i = 0; i < m.cross[l].w.size(); ++i) g.cross_w[l][i] += 2.0 * l2_lambda * m.cross[l].w[i];
    } else {
      for (std::size_t i = 0; i < m.cross[l].W.a.size(); ++i)
        g.cross_W[l].a[i] += 2.0 * l2_lambda * m.cross[l].W.a[i];
    }
  }
}

// dL/dlogit for the clamped BCE; zero where the clamp is active.
inline double clamped_bce_dlogit(double p, double y) {
  if (p < kPredictionClamp || p > 1.0 - kPredictionClamp) return 0.0;
  return p - y;
}

}  // namespace detail

// Exact analytic gradients of bce_loss over a batch (table encoder path).
// Returns the batch loss.
inline double batch_gradients(const RankingModel& m, std::span<const LabeledPair> batch,
                              double l2_lambda, ModelGrads& grads) {
  if (batch.empty()) throw DataError("batch_gradients: empty batch");
  grads.init_shapes(m);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const std::uint32_t d = m.cfg.embed_dim;

  ForwardWorkspace ws;
  Vec dz0;
  double loss_sum = 0.0;
  for (const auto& s : batch) {
    const double p = predict(m, s.user, s.item, s.context, ws);
    const double pc = std::clamp(p, kPredictionClamp, 1.0 - kPredictionClamp);
    const double y = static_cast<double>(s.label);
    loss_sum += -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));

    const double dlogit = detail::clamped_bce_dlogit(p, y) * inv_n;
    detail::backward_sample(m, ws, dlogit, grads, dz0);

    auto& gu = grads.embed_row(m.embeddings.user_node(s.user), d);
    auto& gv = grads.embed_row(m.embeddings.item_node(s.item), d);
    for (std::uint32_t k = 0; k < d; ++k) {
      gu[k] += dz0[k];
      gv[k] += dz0[d + k];
    }
    detail::context_backward(m, s.context, std::span<const double>(dz0).subspan(2 * d), grads);
  }
  detail::add_l2_gradient(m, l2_lambda, grads);

  double reg = 0.0;
  for (const auto& layer : m.cross) {
    const auto& w = m.cfg.cross_kind == CrossKind::vector ? layer.w : layer.W.a;
    for (double v : w) reg += v * v;
  }
  return loss_sum * inv_n + l2_lambda * reg;
}

// Graph-encoder path: embeddings flow through batch-local message passing,
// so embedding gradients are pushed back through the propagation transpose.
inline double batch_gradients_graph(const RankingModel& m, const InteractionMatrix& mat,
                                    std::span<const LabeledPair> batch, double l2_lambda,
                                    ModelGrads& grads) {
  if (batch.empty()) throw DataError("batch_gradients_graph: empty batch");
  grads.init_shapes(m);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const std::uint32_t d = m.cfg.embed_dim;

  std::vector<std::uint32_t> seeds;
  seeds.reserve(batch.size() * 2);
  for (const auto& s : batch) {
    seeds.push_back(m.embeddings.user_node(s.user));
    seeds.push_back(m.embeddings.item_node(s.item));
  }
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());

  BatchPropagation bp;
  bp.forward(mat, m.embeddings, PropagationConfig::from_model(m.cfg), seeds);

  std::map<std::uint32_t, Vec> dout;  // seed node -> readout gradient
  ForwardWorkspace ws;
  Vec z0(m.cfg.input_dim());
  Vec dz0;
  double loss_sum = 0.0;
  for (const auto& s : batch) {
    bp.output(m.embeddings.user_node(s.user), std::span<double>(z0).subspan(0, d));
    bp.output(m.embeddings.item_node(s.item), std::span<double>(z0).subspan(d, d));
    if (m.cfg.context_dim > 0) {
      for (std::uint32_t k = 0; k < m.cfg.ctx_out(); ++k) {
        double acc = m.context_enc.bias[k];
        for (std::uint32_t c = 0; c < m.cfg.context_dim; ++c)
          acc += s.context[c] * m.context_enc.weight(c, k);
        z0[2 * d + k] = acc;
      }
    }
    const double p = forward_from_input(m, z0, ws);
    const double pc = std::clamp(p, kPredictionClamp, 1.0 - kPredictionClamp);
    const double y = static_cast<double>(s.label);
    loss_sum += -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));

    const double dlogit = detail::clamped_bce_dlogit(p, y) * inv_n;
    detail::backward_sample(m, ws, dlogit, grads, dz0);

    auto add_out = [&](std::uint32_t node, std::size_t offset) {
      auto [it, inserted] = dout.try_emplace(node);
      if (inserted) it->second.assign(d, 0.0);
      for (std::uint32_t k = 0; k < d; ++k) it->second[k] += dz0[offset + k];
    };
    add_out(m.embeddings.user_node(s.user), 0);
    add_out(m.embeddings.item_node(s.item), d);
    detail::context_backward(m, s.context, std::span<const double>(dz0).subspan(2 * d), grads);
  }

  std::vector<std::pair<std::uint32_t, Vec>> grad_out(dout.begin(), dout.end());
  bp.backward(grad_out, [&](std::uint32_t node, const Vec& g) {
    auto& row = grads.embed_row(node, d);
    for (std::uint32_t k = 0; k < d; ++k) row[k] += g[k];
  });

  detail::add_l2_gradient(m, l2_lambda, grads);
  double reg = 0.0;
  for (const auto& layer : m.cross) {
    const auto& w = m.cfg.cross_kind == CrossKind::vector ? layer.w : layer.W.a;
    for (double v : w) reg += v * v;
  }
  return loss_sum * inv_n + l2_lambda * reg;
}

// Decoupled weight decay Adam. Embedding moments are updated lazily: only
// rows touched by the batch step, which keeps updates sparse and runs in
// O(batch) instead of O(|U|+|I|).
struct AdamWState {
  struct Moments {
    Vec m, v;
    void init(std::size_t n) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    }
  };

  std::uint64_t t = 0;
  Moments embeddings, ctx_w, ctx_b, logits;
  std::vector<Moments> cross_w, cross_b, deep_w, deep_b;

  void init(const RankingModel& model) {
    t = 0;
    embeddings.init(model.embeddings.data.size());
    ctx_w.init(model.context_enc.weight.a.size());
    ctx_b.init(model.context_enc.bias.size());
    logits.init(model.logits_w.size());
    cross_w.resize(model.cross.size());
    cross_b.resize(model.cross.size());
    for (std::size_t l = 0; l < model.cross.size(); ++l) {
      cross_w[l].init(model.cfg.cross_kind == CrossKind::vector ? model.cross[l].w.size()
                                                                : model.cross[l].W.a.size());
      cross_b[l].init(model.cross[l].b.size());
    }
    deep_w.resize(model.deep.weights.size());
    deep_b.resize(model.deep.weights.size());
    for (std::size_t l = 0; l < model.deep.weights.size(); ++l) {
      deep_w[l].init(model.deep.weights[l].a.size());
      deep_b[l].init(model.deep.biases[l].size());
    }
  }
};

struct OptimizerConfig {
  double lr = 1e-3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void adamw_step(RankingModel& model, const ModelGrads& grads, AdamWState& state,
                       const OptimizerConfig& opt) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.t));

  auto update = [&](double* param, const double* grad, AdamWState::Moments& mom, std::size_t offset,
                    std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      double& m1 = mom.m[offset + i];
      double& v1 = mom.v[offset + i];
      const double g = grad[i];
      m1 = opt.beta1 * m1 + (1.0 - opt.beta1) * g;
      v1 = opt.beta2 * v1 + (1.0 - opt.beta2) * g * g;
      const double mhat = m1 / bc1;
      const double vhat = v1 / bc2;
      param[i] -= opt.lr * (mhat / (std::sqrt(vhat) + opt.eps) + opt.weight_decay * param[i]);
    }
  };

  const std::uint32_t d = model.cfg.embed_dim;
  for (const auto& [node, grow] : grads.embed_rows)
    update(model.embeddings.row(node).data(), grow.data(), state.embeddings, std::size_t(node) * d, d);

  update(model.context_enc.weight.a.data(), grads.ctx_w.a.data(), state.ctx_w, 0, grads.ctx_w.a.size());
  update(model.context_enc.bias.data(), grads.ctx_b.data(), state.ctx_b, 0, grads.ctx_b.size());
  for (std::size_t l = 0; l < model.cross.size(); ++l) {
    if (model.cfg.cross_kind == CrossKind::vector)
      update(model.cross[l].w.data(), grads.cross_w[l].data(), state.cross_w[l], 0, grads.cross_w[l].size());
    else
      update(model.cross[l].W.a.data(), grads.cross_W[l].a.data(), state.cross_w[l], 0,
             grads.cross_W[l].a.size());
    update(model.cross[l].b.data(), grads.cross_b[l].data(), state.cross_b[l], 0, grads.cross_b[l].size());
  }
  for (std::size_t l = 0; l < model.deep.weights.size(); ++l) {
    update(model.deep.weights[l].a.data(), grads.deep_w[l].a.data(), state.deep_w[l], 0,
           grads.deep_w[l].a.size());
    update(model.deep.biases[l].data(), grads.deep_b[l].data(), state.deep_b[l], 0, grads.deep_b[l].size());
  }
  update(model.logits_w.data(), grads.logits_w.data(), state.logits, 0, grads.logits_w.size());
}

struct TrainConfig {
  OptimizerConfig opt;
  double l2_lambda = 0.0;
  std::uint32_t batch_size = 2048;
  std::uint32_t epochs = 50;
  std::uint32_t patience = 5;
  int neg_ratio = 1;
  std::uint64_t seed = 1;
};

struct EpochLog {
  std::uint32_t epoch = 0;
  double train_loss = 0.0;
  double val_auc = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  RankingModel model;
  std::vector<EpochLog> log;
  CheckpointMeta meta;
};

// BCE training with per-epoch negative resampling (seed+epoch), validation
// AUC model selection, and early stopping. Deterministic per seed: a single
// thread owns the parameters and batches run in a fixed order.
inline TrainResult train(RankingModel model, const InteractionMatrix& mat,
                         std::span<const LabeledPair> train_pairs, std::span<const LabeledPair> val_pairs,
                         const TrainConfig& cfg) {
  const bool graph_mode = model.cfg.encoder == EncoderMode::graph;
  // Parameters always live in the base table during training; the graph cache
  // is only valid for a finalized model.
  model.graph_cache.reset();

  AdamWState state;
  state.init(model);
  auto shuffle_rng = component_rng(cfg.seed, "train.shuffle");

  std::vector<ScoreQuery> val_queries;
  std::vector<std::uint8_t> val_labels;
  val_queries.reserve(val_pairs.size());
  for (const auto& p : val_pairs) {
    val_queries.push_back({p.user, p.item, p.context});
    val_labels.push_back(p.label);
  }

  TrainResult result;
  RankingModel best = model;
  CheckpointMeta meta;
  meta.seed = cfg.seed;
  double best_auc = -1.0;
  std::uint32_t since_best = 0;

  ModelGrads grads;
  for (std::uint32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    auto negatives = sample_negatives(train_pairs, mat, cfg.neg_ratio, cfg.seed + epoch);
    const std::size_t total = train_pairs.size() + negatives.size();
    std::vector<std::uint32_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = static_cast<std::uint32_t>(i);
    shuffle(order, shuffle_rng);

    auto sample_at = [&](std::uint32_t idx) -> const LabeledPair& {
      return idx < train_pairs.size() ? train_pairs[idx] : negatives[idx - train_pairs.size()];
    };

    double loss_weighted = 0.0;
    std::size_t seen = 0;
    std::vector<LabeledPair> batch;
    batch.reserve(cfg.batch_size);
    for (std::size_t start = 0; start < total; start += cfg.batch_size) {
      batch.clear();
      const std::size_t end = std::min(total, start + cfg.batch_size);
      for (std::size_t k = start; k < end; ++k) batch.push_back(sample_at(order[k]));

      const double loss = graph_mode
                              ? batch_gradients_graph(model, mat, batch, cfg.l2_lambda, grads)
                              : batch_gradients(model, batch, cfg.l2_lambda, grads);
      if (!std::isfinite(loss))
        throw NumericalError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
      loss_weighted += loss * static_cast<double>(batch.size());
      seen += batch.size();
      adamw_step(model, grads, state, cfg.opt);
    }

    double val_auc_value;
    if (graph_mode) {
      RankingModel snapshot = model;
      finalize_graph_mode(snapshot, mat);
      val_auc_value = auc(score_batch(snapshot, val_queries), val_labels);
    } else {
      val_auc_value = auc(score_batch(model, val_queries), val_labels);
    }

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back({epoch, loss_weighted / static_cast<double>(seen), val_auc_value, wall});

    if (val_auc_value > best_auc) {
      best_auc = val_auc_value;
      meta.best_epoch = epoch;
      meta.best_val_auc = val_auc_value;
      best = model;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  result.model = std::move(best);
  result.meta = meta;
  return result;
}

}  // namespace gcrank
