#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vscam/tensor.hpp"

namespace vscam {

/// Directed K-nearest-neighbor graph over the rows of a feature matrix.
/// Row i of `adjacency` marks the K neighbors of vertex i.
struct PatchGraph {
  std::size_t n_vertices = 0;
  std::size_t k = 0;
  std::vector<std::size_t> neighbor_index;  ///< n_vertices * k, ascending distance per vertex
  Tensor distances;                         ///< N x N, symmetric, zero diagonal
  Tensor adjacency;                         ///< N x N, entries in {0, 1}
  std::vector<std::size_t> degrees;         ///< out-degree of each vertex (== k)

  std::span<const std::size_t> neighbors(std::size_t vertex) const {
    return {neighbor_index.data() + vertex * k, k};
  }
};

enum class PatchFeature { mean_pool, flatten };

/// Splits a D x M x M image into N square patches in raster order, one row per patch.
/// mean_pool yields N x D; flatten yields N x (D * (M/sqrt N)^2) in (channel, row, col) order.
Tensor partition_patches(const Tensor& image, std::size_t n_patches,
                         PatchFeature feature = PatchFeature::mean_pool);

/// Euclidean distances between all row pairs of an N x D matrix.
Tensor pairwise_distance(const Tensor& x);

/// K smallest distances per row, self excluded, ties broken by lower vertex index.
PatchGraph knn_edges(const Tensor& distances, std::size_t k);

inline PatchGraph build_knn_graph(const Tensor& x, std::size_t k) {
  return knn_edges(pairwise_distance(x), k);
}

/// inverse_sqrt is D^-1/2 A D^-1/2; literal_sqrt is D^1/2 A D^1/2.
enum class DegreeNorm { inverse_sqrt, literal_sqrt };

/// Degree-normalized neighbor aggregate, applied independently to every channel.
Tensor aggregate_mean(const Tensor& x, const PatchGraph& graph,
                      DegreeNorm norm = DegreeNorm::inverse_sqrt);

/// Row i = [x_i, max over neighbors j of (x_i - x_j)] per channel; output is N x 2D.
/// `argmax` (optional) receives, per (i, d), the neighbor vertex that attained the max.
Tensor aggregate_max_relative(const Tensor& x, const PatchGraph& graph,
                              std::vector<std::size_t>* argmax = nullptr);

}  // namespace vscam
