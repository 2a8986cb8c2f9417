#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vgd/graph.hpp"
#include "vgd/tensor.hpp"

namespace vgd {

/// Graphs padded to a common node count. Padding entries are exactly zero in `coords`
/// and `mask`, and background in `edges`.
struct GraphBatch {
  Tensor coords;                   // [B, n, 3]
  Tensor mask;                     // [B, n]
  std::vector<int> edges;          // [B, n, n] class labels
  std::vector<std::size_t> sizes;  // real node count per graph
  std::size_t max_nodes = 0;
  int num_classes = 2;

  std::size_t batch_size() const noexcept { return sizes.size(); }
  int edge(std::size_t b, std::size_t i, std::size_t j) const { return edges[(b * max_nodes + i) * max_nodes + j]; }
};

/// Pads graphs (already in normalized coordinates) into one batch.
GraphBatch make_graph_batch(std::span<const SpatialGraph> graphs);

/// Empty-edged batch for the given node sets.
GraphBatch make_coordinate_batch(std::span<const std::vector<Point3>> node_sets, int num_classes);

/// One-hot encoding [B,n,n,c] of class labels laid out as [B,n,n].
Tensor one_hot_edges(std::span<const int> labels, std::size_t batch, std::size_t n, int num_classes);

/// [B,n,3] copy of the mask repeated over the coordinate axis.
Tensor coordinate_mask(const Tensor& mask);

}  // namespace vgd
