#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "metarange/errors.hpp"

namespace metarange {

/// The index set Z = {z^k_j}: J support indices per class, each in [0, M),
/// pairwise distinct within a class.
struct SupportIndexSet {
  std::vector<std::vector<int>> indices;  // K x J

  void validate(int pool_size) const {
    if (indices.empty()) throw ArgumentError("support indices: empty");
    const std::size_t shots = indices.front().size();
    for (const auto& cls : indices) {
      if (cls.size() != shots) throw ArgumentError("support indices: ragged shot counts");
      for (std::size_t a = 0; a < cls.size(); ++a) {
        if (cls[a] < 0 || cls[a] >= pool_size)
          throw ArgumentError("support indices: index out of pool range");
        for (std::size_t b = a + 1; b < cls.size(); ++b)
          if (cls[a] == cls[b])
            throw ArgumentError("support indices: duplicate index within a class");
      }
    }
  }

  /// FNV-1a over the per-class sorted indices, so the hash identifies the
  /// candidate as a set (shot order within a class does not matter).
  std::uint64_t canonical_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t v) {
      for (int byte = 0; byte < 8; ++byte) {
        h ^= (v >> (8 * byte)) & 0xffull;
        h *= 0x100000001b3ull;
      }
    };
    for (const auto& cls : indices) {
      std::vector<int> sorted = cls;
      std::sort(sorted.begin(), sorted.end());
      for (int v : sorted) mix(static_cast<std::uint64_t>(v));
      mix(0xffffffffffffffffull);  // class separator
    }
    return h;
  }

  bool operator==(const SupportIndexSet& o) const { return indices == o.indices; }
};

}  // namespace metarange
