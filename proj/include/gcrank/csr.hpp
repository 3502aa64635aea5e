#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gcrank/io.hpp"

namespace gcrank {

// Sparse binary user×item matrix in CSR layout, with a CSC view derived at
// construction so both user rows and item columns stream in O(nnz).
// Immutable after construction; safe to share across threads.
struct InteractionMatrix {
  std::uint32_t num_users = 0;
  std::uint32_t num_items = 0;
  std::vector<std::uint64_t> row_offsets;  // size num_users + 1
  std::vector<std::uint32_t> col_indices;  // sorted within each row
  std::vector<std::uint64_t> col_offsets;  // size num_items + 1
  std::vector<std::uint32_t> row_indices;  // sorted within each column

  std::uint64_t nnz() const { return col_indices.size(); }

  std::span<const std::uint32_t> row_items(std::uint32_t u) const {
    return {col_indices.data() + row_offsets[u], col_indices.data() + row_offsets[u + 1]};
  }
  std::span<const std::uint32_t> col_users(std::uint32_t i) const {
    return {row_indices.data() + col_offsets[i], row_indices.data() + col_offsets[i + 1]};
  }

  std::uint64_t row_count(std::uint32_t u) const { return row_offsets[u + 1] - row_offsets[u]; }
  std::uint64_t col_count(std::uint32_t i) const { return col_offsets[i + 1] - col_offsets[i]; }

  bool has(std::uint32_t u, std::uint32_t i) const {
    const auto r = row_items(u);
    return std::binary_search(r.begin(), r.end(), i);
  }

  // Builds from (user, item) coordinates; duplicates collapse to one entry.
  static InteractionMatrix from_coords(std::uint32_t num_users, std::uint32_t num_items,
                                       std::vector<std::pair<std::uint32_t, std::uint32_t>> coords) {
    std::sort(coords.begin(), coords.end());
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());

    InteractionMatrix m;
    m.num_users = num_users;
    m.num_items = num_items;
    m.row_offsets.assign(num_users + 1, 0);
    m.col_indices.reserve(coords.size());
    for (const auto& [u, i] : coords) {
      m.row_offsets[u + 1]++;
      m.col_indices.push_back(i);
    }
    for (std::uint32_t u = 0; u < num_users; ++u) m.row_offsets[u + 1] += m.row_offsets[u];
    m.build_csc();
    return m;
  }

  void save(const std::string& path) const {
    auto os = io::open_out(path);
    io::write_magic(os, "GCRM");
    io::write_u32(os, 1);  // format version
    io::write_u64(os, num_users);
    io::write_u64(os, num_items);
    io::write_u64(os, nnz());
    for (auto v : row_offsets) io::write_u64(os, v);
    for (auto v : col_indices) io::write_u32(os, v);
  }

  static InteractionMatrix load(const std::string& path) {
    auto is = io::open_in(path);
    io::expect_magic(is, "GCRM", "interaction matrix");
    const auto version = io::read_u32(is);
    if (version != 1) throw DataError("unsupported interaction matrix version");
    InteractionMatrix m;
    m.num_users = static_cast<std::uint32_t>(io::read_u64(is));
    m.num_items = static_cast<std::uint32_t>(io::read_u64(is));
    const std::uint64_t count = io::read_u64(is);
    m.row_offsets.resize(m.num_users + 1);
    for (auto& v : m.row_offsets) v = io::read_u64(is);
    m.col_indices.resize(count);
    for (auto& v : m.col_indices) v = io::read_u32(is);
    if (m.row_offsets.back() != count) throw DataError("interaction matrix offsets disagree with nnz");
    m.build_csc();
    return m;
  }

 private:
  void build_csc() {
    col_offsets.assign(num_items + 1, 0);
    for (auto i : col_indices) col_offsets[i + 1]++;
    for (std::uint32_t i = 0; i < num_items; ++i) col_offsets[i + 1] += col_offsets[i];
    row_indices.resize(col_indices.size());
    std::vector<std::uint64_t> cursor(col_offsets.begin(), col_offsets.end() - 1);
    for (std::uint32_t u = 0; u < num_users; ++u) {
      for (auto i : row_items(u)) row_indices[cursor[i]++] = u;
    }
  }
};

}  // namespace gcrank
