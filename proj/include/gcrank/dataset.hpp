#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gcrank/csr.hpp"
#include "gcrank/io.hpp"
#include "gcrank/rng.hpp"

namespace gcrank {

struct InteractionRecord {
  std::string user_raw_id;
  std::string item_raw_id;
  double rating = 0.0;
  std::int64_t timestamp = 0;
  std::vector<double> context;  // length d^c, may be empty
};

// Bijective raw-id <-> dense-index maps; dense indices are assigned in
// first-appearance order and are contiguous.
struct Vocab {
  std::unordered_map<std::string, std::uint32_t> user_to_dense;
  std::unordered_map<std::string, std::uint32_t> item_to_dense;
  std::vector<std::string> user_raw;  // dense -> raw
  std::vector<std::string> item_raw;

  std::uint32_t num_users() const { return static_cast<std::uint32_t>(user_raw.size()); }
  std::uint32_t num_items() const { return static_cast<std::uint32_t>(item_raw.size()); }

  std::uint32_t user_index(const std::string& raw) {
    auto [it, inserted] = user_to_dense.try_emplace(raw, num_users());
    if (inserted) user_raw.push_back(raw);
    return it->second;
  }
  std::uint32_t item_index(const std::string& raw) {
    auto [it, inserted] = item_to_dense.try_emplace(raw, num_items());
    if (inserted) item_raw.push_back(raw);
    return it->second;
  }
};

struct LabeledPair {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  std::uint8_t label = 0;  // in {0, 1}
  std::vector<double> context;
};

struct ColumnSchema {
  std::string user_col = "user_id";
  std::string item_col = "item_id";
  std::string rating_col = "rating";
  std::string timestamp_col = "timestamp";
  std::string context_prefix = "ctx_";
};

struct LoadResult {
  std::vector<InteractionRecord> records;
  Vocab vocab;
  std::size_t context_dim = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline double parse_double(const std::string& s, const char* what, std::size_t line_no) {
  double v = 0.0;
  const auto* begin = s.data();
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || p != end || !std::isfinite(v))
    throw DataError("line " + std::to_string(line_no) + ": bad " + std::string(what) + " '" + s + "'");
  return v;
}

inline std::int64_t parse_int(const std::string& s, const char* what, std::size_t line_no) {
  std::int64_t v = 0;
  const auto* begin = s.data();
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || p != end)
    throw DataError("line " + std::to_string(line_no) + ": bad " + std::string(what) + " '" + s + "'");
  return v;
}

}  // namespace detail

// Reads a delimited interaction log (comma or tab, sniffed from the header).
// Required columns per the schema; any `ctx_0..ctx_{k-1}` columns become the
// context vector. Duplicate (user, item) rows keep the latest timestamp.
inline LoadResult load_interactions(const std::string& path, const ColumnSchema& schema = {}) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open: " + path);

  std::string header;
  if (!std::getline(is, header)) throw DataError(path + ": empty file (header row required)");
  if (!header.empty() && header.back() == '\r') header.pop_back();

  const char delim = header.find('\t') != std::string::npos ? '\t' : ',';
  const auto cols = detail::split_fields(header, delim);

  int user_col = -1, item_col = -1, rating_col = -1, ts_col = -1;
  std::vector<std::pair<std::size_t, int>> ctx_cols;  // (ctx position, column)
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const auto& name = cols[c];
    if (name == schema.user_col) user_col = static_cast<int>(c);
    else if (name == schema.item_col) item_col = static_cast<int>(c);
    else if (name == schema.rating_col) rating_col = static_cast<int>(c);
    else if (name == schema.timestamp_col) ts_col = static_cast<int>(c);
    else if (name.starts_with(schema.context_prefix)) {
      const std::string suffix = name.substr(schema.context_prefix.size());
      std::size_t k = 0;
      const auto* end = suffix.data() + suffix.size();
      auto [p, ec] = std::from_chars(suffix.data(), end, k);
      if (ec != std::errc() || p != end)
        throw DataError(path + ": context column '" + name + "' has no numeric suffix");
      ctx_cols.emplace_back(k, static_cast<int>(c));
    }
  }
  if (user_col < 0) throw DataError(path + ": missing column '" + schema.user_col + "'");
  if (item_col < 0) throw DataError(path + ": missing column '" + schema.item_col + "'");
  if (rating_col < 0) throw DataError(path + ": missing column '" + schema.rating_col + "'");
  if (ts_col < 0) throw DataError(path + ": missing column '" + schema.timestamp_col + "'");

  std::sort(ctx_cols.begin(), ctx_cols.end());
  for (std::size_t k = 0; k < ctx_cols.size(); ++k) {
    if (ctx_cols[k].first != k)
      throw DataError(path + ": context columns must be " + schema.context_prefix + "0.." +
                      schema.context_prefix + std::to_string(ctx_cols.size() - 1));
  }

  LoadResult out;
  out.context_dim = ctx_cols.size();
  std::unordered_map<std::uint64_t, std::size_t> seen;  // (user,item) -> record slot
  std::size_t duplicate_count = 0;

  std::string line;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_fields(line, delim);
    if (fields.size() != cols.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(cols.size()) +
                      " fields, got " + std::to_string(fields.size()));

    InteractionRecord rec;
    rec.user_raw_id = fields[user_col];
    rec.item_raw_id = fields[item_col];
    rec.rating = detail::parse_double(fields[rating_col], "rating", line_no);
    rec.timestamp = detail::parse_int(fields[ts_col], "timestamp", line_no);
    if (rec.timestamp < 0)
      throw DataError("line " + std::to_string(line_no) + ": negative timestamp");
    rec.context.reserve(ctx_cols.size());
    for (const auto& [k, c] : ctx_cols)
      rec.context.push_back(detail::parse_double(fields[c], "context value", line_no));

    const std::uint32_t u = out.vocab.user_index(rec.user_raw_id);
    const std::uint32_t i = out.vocab.item_index(rec.item_raw_id);
    const std::uint64_t key = (static_cast<std::uint64_t>(u) << 32) | i;
    auto it = seen.find(key);
    if (it == seen.end()) {
      seen.emplace(key, out.records.size());
      out.records.push_back(std::move(rec));
    } else {
      ++duplicate_count;
      if (rec.timestamp >= out.records[it->second].timestamp) out.records[it->second] = std::move(rec);
    }
  }
  if (duplicate_count > 0)
    out.warnings.push_back("collapsed " + std::to_string(duplicate_count) +
                           " duplicate (user,item) rows, keeping latest timestamp");
  return out;
}

// label = 1 iff rating >= threshold.
inline std::vector<LabeledPair> binarize(std::span<const InteractionRecord> records, double threshold,
                                         const Vocab& vocab) {
  std::vector<LabeledPair> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    LabeledPair p;
    p.user = vocab.user_to_dense.at(r.user_raw_id);
    p.item = vocab.item_to_dense.at(r.item_raw_id);
    p.label = r.rating >= threshold ? 1 : 0;
    p.context = r.context;
    out.push_back(std::move(p));
  }
  return out;
}

struct SplitResult {
  std::vector<LabeledPair> train, val, test;
};

// Uniform random partition over labeled pairs; deterministic per seed.
inline SplitResult split(std::vector<LabeledPair> pairs, std::array<double, 3> ratios, std::uint64_t seed) {
  if (pairs.empty()) throw DataError("split: empty input");
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) throw DataError("split: ratios must sum to 1");

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  SplitMix64 rng(seed);
  shuffle(order, rng);

  const auto n = static_cast<double>(pairs.size());
  const auto b1 = static_cast<std::size_t>(std::llround(n * ratios[0]));
  const auto b2 = static_cast<std::size_t>(std::llround(n * (ratios[0] + ratios[1])));

  SplitResult out;
  out.train.reserve(b1);
  out.val.reserve(b2 - b1);
  out.test.reserve(pairs.size() - b2);
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& dst = k < b1 ? out.train : (k < b2 ? out.val : out.test);
    dst.push_back(std::move(pairs[order[k]]));
  }
  return out;
}

// M[u,i] = 1 iff some train pair (u,i) has label 1.
inline InteractionMatrix build_matrix(std::span<const LabeledPair> train, std::uint32_t num_users,
                                      std::uint32_t num_items) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> coords;
  coords.reserve(train.size());
  for (const auto& p : train) {
    if (p.label == 1) coords.emplace_back(p.user, p.item);
  }
  return InteractionMatrix::from_coords(num_users, num_items, std::move(coords));
}

// For each positive (u, i) emits `ratio` pairs (u, i') with M[u,i'] = 0.
// Negatives inherit the source positive's context: the context describes the
// impression event, not the item. Users whose row is full are skipped.
inline std::vector<LabeledPair> sample_negatives(std::span<const LabeledPair> positives,
                                                 const InteractionMatrix& m, int ratio, std::uint64_t seed,
                                                 std::vector<std::string>* warnings = nullptr) {
  if (ratio < 1) throw DataError("sample_negatives: ratio must be >= 1");
  SplitMix64 rng(seed);
  std::vector<LabeledPair> out;
  out.reserve(positives.size() * static_cast<std::size_t>(ratio));
  std::size_t skipped = 0;
  for (const auto& p : positives) {
    if (p.label != 1) continue;
    if (m.row_count(p.user) >= m.num_items) {
      ++skipped;
      continue;
    }
    for (int r = 0; r < ratio; ++r) {
      std::uint32_t j;
      do {
        j = static_cast<std::uint32_t>(rng.next_below(m.num_items));
      } while (m.has(p.user, j));
      LabeledPair neg;
      neg.user = p.user;
      neg.item = j;
      neg.label = 0;
      neg.context = p.context;
      out.push_back(std::move(neg));
    }
  }
  if (skipped > 0 && warnings)
    warnings->push_back("sample_negatives: skipped " + std::to_string(skipped) +
                        " positives of users with full rows");
  return out;
}

// Split manifests are plain CSV of dense indices:
// user,item,label[,ctx_0..ctx_{k-1}]
inline void save_pairs(const std::string& path, std::span<const LabeledPair> pairs, std::size_t context_dim) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << "user,item,label";
  for (std::size_t k = 0; k < context_dim; ++k) os << ",ctx_" << k;
  os << "\n";
  os.precision(17);
  for (const auto& p : pairs) {
    os << p.user << ',' << p.item << ',' << int(p.label);
    for (double c : p.context) os << ',' << c;
    os << "\n";
  }
  if (!os) throw DataError("write failed: " + path);
}

inline std::vector<LabeledPair> load_pairs(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open: " + path);
  std::string header;
  if (!std::getline(is, header)) throw DataError(path + ": empty pair file");
  const auto cols = detail::split_fields(header, ',');
  if (cols.size() < 3 || cols[0] != "user" || cols[1] != "item" || cols[2] != "label")
    throw DataError(path + ": not a split manifest");
  std::vector<LabeledPair> out;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split_fields(line, ',');
    if (fields.size() != cols.size())
      throw DataError(path + " line " + std::to_string(line_no) + ": wrong field count");
    LabeledPair p;
    p.user = static_cast<std::uint32_t>(detail::parse_int(fields[0], "user", line_no));
    p.item = static_cast<std::uint32_t>(detail::parse_int(fields[1], "item", line_no));
    const auto label = detail::parse_int(fields[2], "label", line_no);
    if (label != 0 && label != 1)
      throw DataError(path + " line " + std::to_string(line_no) + ": label must be 0 or 1");
    p.label = static_cast<std::uint8_t>(label);
    for (std::size_t k = 3; k < fields.size(); ++k)
      p.context.push_back(detail::parse_double(fields[k], "context value", line_no));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace gcrank
