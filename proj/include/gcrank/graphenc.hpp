#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <thread>
#include <vector>

#include "gcrank/csr.hpp"
#include "gcrank/linalg.hpp"
#include "gcrank/model.hpp"

namespace gcrank {

struct PropagationConfig {
  std::uint32_t layers = 2;      // L
  std::vector<double> readout;   // a_0..a_L

  static PropagationConfig uniform(std::uint32_t layers) {
    PropagationConfig cfg;
    cfg.layers = layers;
    cfg.readout.assign(layers + 1, 1.0 / double(layers + 1));
    return cfg;
  }

  static PropagationConfig from_model(const ModelConfig& mc) {
    if (mc.readout.empty()) return uniform(mc.gcn_layers);
    PropagationConfig cfg;
    cfg.layers = mc.gcn_layers;
    cfg.readout = mc.readout;
    return cfg;
  }
};

namespace detail {

// Bipartite neighborhood in node space: users [0,|U|), items [|U|,|U|+|I|).
inline std::span<const std::uint32_t> neighbors_raw(const InteractionMatrix& m, std::uint32_t node) {
  if (node < m.num_users) return m.row_items(node);
  return m.col_users(node - m.num_users);
}

inline double node_degree(const InteractionMatrix& m, std::uint32_t node) {
  if (node < m.num_users) return static_cast<double>(m.row_count(node));
  return static_cast<double>(m.col_count(node - m.num_users));
}

template <typename Fn>
void for_each_neighbor(const InteractionMatrix& m, std::uint32_t node, Fn&& fn) {
  if (node < m.num_users) {
    for (auto j : m.row_items(node)) fn(m.num_users + j);
  } else {
    for (auto u : m.col_users(node - m.num_users)) fn(u);
  }
}

}  // namespace detail

// Full-graph linear message passing: z^(0) = base rows, per layer
// z^(l)_i = Σ_{j∈N_i} z^(l-1)_j / sqrt(|N_i||N_j|), output Σ_l a_l z^(l).
// Zero-degree nodes receive no messages and carry a_0·base only.
inline std::vector<double> propagate(const InteractionMatrix& m, const EmbeddingTable& base,
                                     const PropagationConfig& cfg, unsigned threads = 1) {
  const std::uint32_t nodes = base.num_nodes();
  const std::uint32_t d = base.dim;
  std::vector<double> out(base.data.size(), 0.0);
  std::vector<double> prev = base.data;
  std::vector<double> next(base.data.size(), 0.0);

  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cfg.readout[0] * prev[i];

  for (std::uint32_t l = 1; l <= cfg.layers; ++l) {
    auto run = [&](std::uint32_t begin, std::uint32_t end) {
      for (std::uint32_t n = begin; n < end; ++n) {
        double* dst = next.data() + std::size_t(n) * d;
        std::fill(dst, dst + d, 0.0);
        const double deg_n = detail::node_degree(m, n);
        if (deg_n == 0.0) continue;
        detail::for_each_neighbor(m, n, [&](std::uint32_t nb) {
          const double coeff = 1.0 / (std::sqrt(deg_n) * std::sqrt(detail::node_degree(m, nb)));
          const double* src = prev.data() + std::size_t(nb) * d;
          for (std::uint32_t k = 0; k < d; ++k) dst[k] += coeff * src[k];
        });
      }
    };
    const unsigned workers = std::max(1u, std::min<unsigned>(threads, nodes == 0 ? 1 : nodes));
    if (workers == 1) {
      run(0, nodes);
    } else {
      std::vector<std::thread> pool;
      const std::uint32_t chunk = (nodes + workers - 1) / workers;
      for (unsigned w = 0; w < workers; ++w) {
        const std::uint32_t begin = w * chunk;
        const std::uint32_t end = std::min(nodes, begin + chunk);
        if (begin < end) pool.emplace_back(run, begin, end);
      }
      for (auto& t : pool) t.join();
    }
    std::swap(prev, next);
    const double a = cfg.readout[l];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * prev[i];
  }
  return out;
}

// Switches a table-mode model to graph inference: one-shot full propagation,
// cached and reused for every subsequent score.
inline void finalize_graph_mode(RankingModel& model, const InteractionMatrix& m, unsigned threads = 1) {
  const auto cfg = PropagationConfig::from_model(model.cfg);
  model.cfg.encoder = EncoderMode::graph;
  model.graph_cache =
      std::make_shared<const std::vector<double>>(propagate(m, model.embeddings, cfg, threads));
}

// Exact batch-time propagation: gathers the L-hop neighborhood of the batch
// nodes, runs the same message passing restricted to it, and transposes the
// linear maps on the way back so gradients reach every touched base row.
class BatchPropagation {
 public:
  // `seeds` must be sorted and unique.
  void forward(const InteractionMatrix& m, const EmbeddingTable& base, const PropagationConfig& cfg,
               std::vector<std::uint32_t> seeds) {
    m_ = &m;
    base_ = &base;
    cfg_ = cfg;
    dim_ = base.dim;

    // needed[l] = nodes whose z^(l) is required; needed[L] = seeds,
    // needed[l-1] = needed[l] ∪ N(needed[l]).
    needed_.assign(cfg.layers + 1, {});
    needed_[cfg.layers] = std::move(seeds);
    for (std::uint32_t l = cfg.layers; l > 0; --l) {
      std::vector<std::uint32_t> grown = needed_[l];
      for (auto n : needed_[l])
        detail::for_each_neighbor(m, n, [&](std::uint32_t nb) { grown.push_back(nb); });
      std::sort(grown.begin(), grown.end());
      grown.erase(std::unique(grown.begin(), grown.end()), grown.end());
      needed_[l - 1] = std::move(grown);
    }

    z_.assign(cfg.layers + 1, {});
    z_[0].resize(needed_[0].size() * dim_);
    for (std::size_t s = 0; s < needed_[0].size(); ++s) {
      const auto row = base.row(needed_[0][s]);
      std::copy(row.begin(), row.end(), z_[0].begin() + s * dim_);
    }

    for (std::uint32_t l = 1; l <= cfg.layers; ++l) {
      z_[l].assign(needed_[l].size() * dim_, 0.0);
      for (std::size_t s = 0; s < needed_[l].size(); ++s) {
        const std::uint32_t n = needed_[l][s];
        const double deg_n = detail::node_degree(m, n);
        if (deg_n == 0.0) continue;
        double* dst = z_[l].data() + s * dim_;
        detail::for_each_neighbor(m, n, [&](std::uint32_t nb) {
          const double coeff = 1.0 / (std::sqrt(deg_n) * std::sqrt(detail::node_degree(m, nb)));
          const double* src = z_[l - 1].data() + slot(l - 1, nb) * dim_;
          for (std::uint32_t k = 0; k < dim_; ++k) dst[k] += coeff * src[k];
        });
      }
    }
  }

  // Readout embedding Σ_l a_l z^(l) for a seed node.
  void output(std::uint32_t node, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::uint32_t l = 0; l <= cfg_.layers; ++l) {
      const double* src = z_[l].data() + slot(l, node) * dim_;
      const double a = cfg_.readout[l];
      for (std::uint32_t k = 0; k < dim_; ++k) out[k] += a * src[k];
    }
  }

  // `grad_out` maps seed node -> gradient of the loss w.r.t. the readout
  // embedding (sorted by node). Accumulates base-table row gradients into
  // `sink` via sink(node, grad_row).
  template <typename Sink>
  void backward(std::span<const std::pair<std::uint32_t, Vec>> grad_out, Sink&& sink) const {
    std::vector<std::vector<double>> dz(cfg_.layers + 1);
    for (std::uint32_t l = 0; l <= cfg_.layers; ++l) dz[l].assign(z_[l].size(), 0.0);

    for (const auto& [node, g] : grad_out) {
      for (std::uint32_t l = 0; l <= cfg_.layers; ++l) {
        double* dst = dz[l].data() + slot(l, node) * dim_;
        const double a = cfg_.readout[l];
        for (std::uint32_t k = 0; k < dim_; ++k) dst[k] += a * g[k];
      }
    }

    for (std::uint32_t l = cfg_.layers; l > 0; --l) {
      for (std::size_t s = 0; s < needed_[l].size(); ++s) {
        const std::uint32_t n = needed_[l][s];
        const double deg_n = detail::node_degree(*m_, n);
        if (deg_n == 0.0) continue;
        const double* g = dz[l].data() + s * dim_;
        bool any = false;
        for (std::uint32_t k = 0; k < dim_; ++k)
          if (g[k] != 0.0) {
            any = true;
            break;
          }
        if (!any) continue;
        detail::for_each_neighbor(*m_, n, [&](std::uint32_t nb) {
          const double coeff = 1.0 / (std::sqrt(deg_n) * std::sqrt(detail::node_degree(*m_, nb)));
          double* dst = dz[l - 1].data() + slot(l - 1, nb) * dim_;
          for (std::uint32_t k = 0; k < dim_; ++k) dst[k] += coeff * g[k];
        });
      }
    }

    Vec row(dim_);
    for (std::size_t s = 0; s < needed_[0].size(); ++s) {
      const double* g = dz[0].data() + s * dim_;
      bool any = false;
      for (std::uint32_t k = 0; k < dim_; ++k)
        if (g[k] != 0.0) {
          any = true;
          break;
        }
      if (!any) continue;
      std::copy(g, g + dim_, row.begin());
      sink(needed_[0][s], row);
    }
  }

 private:
  std::size_t slot(std::uint32_t layer, std::uint32_t node) const {
    const auto& v = needed_[layer];
    const auto it = std::lower_bound(v.begin(), v.end(), node);
    return static_cast<std::size_t>(it - v.begin());
  }

  const InteractionMatrix* m_ = nullptr;
  const EmbeddingTable* base_ = nullptr;
  PropagationConfig cfg_;
  std::uint32_t dim_ = 0;
  std::vector<std::vector<std::uint32_t>> needed_;  // per layer, sorted
  std::vector<std::vector<double>> z_;              // per layer, rows follow needed_
};

}  // namespace gcrank
