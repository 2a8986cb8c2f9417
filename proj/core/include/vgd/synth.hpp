#pragma once

// Procedural vessel-like graph families used in place of real datasets.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vgd/graph.hpp"

namespace vgd {

enum class SynthFamily { kCapillary, kCowLike };

SynthFamily parse_family(const std::string& name);
std::string family_name(SynthFamily family);

struct SynthConfig {
  SynthFamily family = SynthFamily::kCapillary;
  std::size_t min_nodes = 8;
  std::size_t max_nodes = 16;
  /// Upper end of the cycle-rank target drawn per capillary graph (lower end is 1).
  std::size_t max_cycles = 6;
  int num_classes = 4;
  std::uint64_t seed = 0;

  /// Defaults for a family: capillary c = 4, n in [8, 16]; cow-like c = 14, n = 13.
  static SynthConfig defaults(SynthFamily family);
  /// Throws ConfigError when the configuration cannot be generated.
  void check() const;
};

/// Random geometric graph in the unit cube: minimum spanning tree plus short k-nearest
/// chords up to a cycle-rank target, then every degree-2 node is contracted into an edge
/// joining its neighbours. Classes 1..c-1 by edge-length quantile.
/// Throws Error when no valid graph is found within the retry budget.
SpatialGraph gen_capillary_patch(const SynthConfig& cfg);

/// Jittered copy of a fixed ring-plus-branches template with one artery label per segment.
/// Needs num_classes == 14.
SpatialGraph gen_cow_like(const SynthConfig& cfg, bool jitter = true);

/// `count` graphs; graph k uses a seed derived from (cfg.seed, k).
std::vector<SpatialGraph> generate_dataset(const SynthConfig& cfg, std::size_t count);

}  // namespace vgd
