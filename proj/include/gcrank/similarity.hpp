#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gcrank/csr.hpp"
#include "gcrank/io.hpp"

namespace gcrank {

enum class Side : std::uint8_t { user = 0, item = 1 };

struct SimEntry {
  std::uint32_t neighbor = 0;
  double score = 0.0;
};

// One row of the normalized co-occurrence similarity, sorted by score
// descending with ties broken by ascending neighbor index.
struct SimilarityRow {
  std::uint32_t owner = 0;
  std::vector<SimEntry> entries;
};

// Per-row top-n_max candidates for one side, plus the degree vector used for
// normalization (row sums of the unnormalized co-occurrence matrix).
struct SimilarityIndex {
  Side side = Side::user;
  std::uint32_t n_max = 0;
  std::vector<SimilarityRow> rows;
  std::vector<double> degrees;  // empty after load; only needed at build time

  void save(const std::string& path) const;
  static SimilarityIndex load(const std::string& path);
};

// Scratch buffers for streaming one co-occurrence row at a time. The
// accumulator is sized |U| (or |I|) and reset via the touched list, so no
// dense similarity matrix is ever materialized.
struct CooccurrenceWorkspace {
  std::vector<double> accum;
  std::vector<std::uint32_t> touched;
};

// Row k of M·Mᵀ (user side) or Mᵀ·M (item side) as (index, count) pairs in
// ascending index order. Counts are integers accumulated exactly.
inline std::vector<SimEntry> cooccurrence_row(const InteractionMatrix& m, Side side, std::uint32_t k,
                                              CooccurrenceWorkspace& ws) {
  const std::size_t dim = side == Side::user ? m.num_users : m.num_items;
  if (ws.accum.size() < dim) ws.accum.assign(dim, 0.0);
  ws.touched.clear();

  if (side == Side::user) {
    for (auto j : m.row_items(k)) {
      for (auto u : m.col_users(j)) {
        if (ws.accum[u] == 0.0) ws.touched.push_back(u);
        ws.accum[u] += 1.0;
      }
    }
  } else {
    for (auto u : m.col_users(k)) {
      for (auto j : m.row_items(u)) {
        if (ws.accum[j] == 0.0) ws.touched.push_back(j);
        ws.accum[j] += 1.0;
      }
    }
  }

  std::sort(ws.touched.begin(), ws.touched.end());
  std::vector<SimEntry> out;
  out.reserve(ws.touched.size());
  for (auto idx : ws.touched) {
    out.push_back({idx, ws.accum[idx]});
    ws.accum[idx] = 0.0;
  }
  return out;
}

// deg[k] = Σ_j Â[k,j], computed in O(nnz) without forming Â:
// user side: Σ_{j in row k} col_count(j); item side symmetric.
inline std::vector<double> cooccurrence_degrees(const InteractionMatrix& m, Side side) {
  if (side == Side::user) {
    std::vector<double> deg(m.num_users, 0.0);
    for (std::uint32_t u = 0; u < m.num_users; ++u) {
      double s = 0.0;
      for (auto j : m.row_items(u)) s += static_cast<double>(m.col_count(j));
      deg[u] = s;
    }
    return deg;
  }
  std::vector<double> deg(m.num_items, 0.0);
  for (std::uint32_t i = 0; i < m.num_items; ++i) {
    double s = 0.0;
    for (auto u : m.col_users(i)) s += static_cast<double>(m.row_count(u));
    deg[i] = s;
  }
  return deg;
}

// score(k,j) = Â[k,j] / sqrt(deg(k)·deg(j)). A zero-degree owner yields an
// empty row (cold node); a nonzero Â entry implies both degrees positive.
inline SimilarityRow normalize_row(std::uint32_t owner, std::span<const SimEntry> co_row,
                                   std::span<const double> degrees) {
  SimilarityRow row;
  row.owner = owner;
  if (degrees[owner] <= 0.0) return row;
  const double inv_sqrt_own = 1.0 / std::sqrt(degrees[owner]);
  row.entries.reserve(co_row.size());
  for (const auto& e : co_row)
    row.entries.push_back({e.neighbor, e.score * inv_sqrt_own / std::sqrt(degrees[e.neighbor])});
  std::sort(row.entries.begin(), row.entries.end(), [](const SimEntry& a, const SimEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.neighbor < b.neighbor;
  });
  return row;
}

// The n_k best entries; rows are kept sorted, so truncation is a prefix.
inline SimilarityRow topk_candidates(const SimilarityRow& row, std::uint32_t n_k) {
  SimilarityRow out;
  out.owner = row.owner;
  const std::size_t n = std::min<std::size_t>(n_k, row.entries.size());
  out.entries.assign(row.entries.begin(), row.entries.begin() + n);
  return out;
}

// Per-row pipeline cooccurrence -> normalize -> top-n_max, parallel over rows.
// Each row is independent with a thread-local accumulator, so the result is
// identical for any thread count.
inline SimilarityIndex build_index(const InteractionMatrix& m, Side side, std::uint32_t n_max,
                                   unsigned threads = 1) {
  SimilarityIndex index;
  index.side = side;
  index.n_max = n_max;
  index.degrees = cooccurrence_degrees(m, side);
  const std::uint32_t num_rows = side == Side::user ? m.num_users : m.num_items;
  index.rows.resize(num_rows);

  const unsigned workers = std::max(1u, std::min<unsigned>(threads, num_rows == 0 ? 1 : num_rows));
  auto run = [&](std::uint32_t begin, std::uint32_t end) {
    CooccurrenceWorkspace ws;
    for (std::uint32_t k = begin; k < end; ++k) {
      const auto co = cooccurrence_row(m, side, k, ws);
      index.rows[k] = topk_candidates(normalize_row(k, co, index.degrees), n_max);
    }
  };

  if (workers == 1) {
    run(0, num_rows);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::uint32_t chunk = (num_rows + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
      const std::uint32_t begin = w * chunk;
      const std::uint32_t end = std::min(num_rows, begin + chunk);
      if (begin < end) pool.emplace_back(run, begin, end);
    }
    for (auto& t : pool) t.join();
  }
  return index;
}

// Container layout: magic, version, side tag, |rows|, n_max, then per row a
// count followed by neighbor indices (LE u32) and scores (LE f32). Scores are
// accumulated in double but persisted in single precision.
inline void SimilarityIndex::save(const std::string& path) const {
  auto os = io::open_out(path);
  io::write_magic(os, "GCSI");
  io::write_u32(os, 1);
  io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(side));
  io::write_u64(os, rows.size());
  io::write_u32(os, n_max);
  for (const auto& row : rows) {
    io::write_u32(os, static_cast<std::uint32_t>(row.entries.size()));
    for (const auto& e : row.entries) io::write_u32(os, e.neighbor);
    for (const auto& e : row.entries) io::write_f32(os, static_cast<float>(e.score));
  }
}

inline SimilarityIndex SimilarityIndex::load(const std::string& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, "GCSI", "similarity index");
  const auto version = io::read_u32(is);
  if (version != 1) throw DataError("unsupported similarity index version");
  SimilarityIndex index;
  index.side = static_cast<Side>(io::read_le<std::uint8_t>(is));
  const std::uint64_t num_rows = io::read_u64(is);
  index.n_max = io::read_u32(is);
  index.rows.resize(num_rows);
  for (std::uint64_t k = 0; k < num_rows; ++k) {
    auto& row = index.rows[k];
    row.owner = static_cast<std::uint32_t>(k);
    const std::uint32_t count = io::read_u32(is);
    row.entries.resize(count);
    for (auto& e : row.entries) e.neighbor = io::read_u32(is);
    // f32 narrowing is monotone, so rows stay sorted non-increasing; equal
    // narrowed scores keep the build-time order.
    for (auto& e : row.entries) e.score = static_cast<double>(io::read_f32(is));
  }
  return index;
}

}  // namespace gcrank
