#include "vscam/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vscam/errors.hpp"

namespace vscam {

namespace {

std::size_t exact_sqrt(std::size_t n) {
  auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  return r * r == n ? r : 0;
}

void check_graph_input(const Tensor& x, const PatchGraph& graph, const char* what) {
  if (x.rank() != 2 || x.dim(0) != graph.n_vertices) {
    throw DimensionError(std::string(what) + ": features " + shape_str(x.shape()) +
                         " do not match a graph over " + std::to_string(graph.n_vertices) +
                         " vertices");
  }
}

}  // namespace

Tensor partition_patches(const Tensor& image, std::size_t n_patches, PatchFeature feature) {
  if (image.rank() != 3 || image.dim(1) != image.dim(2)) {
    throw DimensionError("partition_patches: expected a D x M x M image, got " +
                         shape_str(image.shape()));
  }
  const std::size_t grid = exact_sqrt(n_patches);
  const std::size_t channels = image.dim(0), side = image.dim(1);
  if (grid == 0 || side % grid != 0) {
    throw DimensionError("partition_patches: " + std::to_string(n_patches) +
                         " patches do not tile a " + std::to_string(side) + "x" +
                         std::to_string(side) + " image");
  }
  const std::size_t ps = side / grid;
  if (feature == PatchFeature::mean_pool) {
    Tensor out({n_patches, channels});
    const double inv = 1.0 / static_cast<double>(ps * ps);
    for (std::size_t py = 0; py < grid; ++py)
      for (std::size_t px = 0; px < grid; ++px)
        for (std::size_t c = 0; c < channels; ++c) {
          double s = 0.0;
          for (std::size_t y = 0; y < ps; ++y)
            for (std::size_t x = 0; x < ps; ++x) s += image.at(c, py * ps + y, px * ps + x);
          out.at(py * grid + px, c) = s * inv;
        }
    return out;
  }
  const std::size_t width = channels * ps * ps;
  Tensor out({n_patches, width});
  for (std::size_t py = 0; py < grid; ++py)
    for (std::size_t px = 0; px < grid; ++px) {
      std::size_t col = 0;
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t y = 0; y < ps; ++y)
          for (std::size_t x = 0; x < ps; ++x)
            out.at(py * grid + px, col++) = image.at(c, py * ps + y, px * ps + x);
    }
  return out;
}

Tensor pairwise_distance(const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) < 2) {
    throw DimensionError("pairwise_distance: need an N x D matrix with N >= 2, got " +
                         shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out({n, n});
  const double* p = x.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = p[i * d + c] - p[j * d + c];
        s += diff * diff;
      }
      const double r = std::sqrt(s);
      out[i * n + j] = r;
      out[j * n + i] = r;
    }
  }
  return out;
}

PatchGraph knn_edges(const Tensor& distances, std::size_t k) {
  if (distances.rank() != 2 || distances.dim(0) != distances.dim(1)) {
    throw DimensionError("knn_edges: distance matrix must be square, got " +
                         shape_str(distances.shape()));
  }
  const std::size_t n = distances.dim(0);
  if (k < 1 || k + 1 > n) {
    throw DomainError("knn_edges: K=" + std::to_string(k) + " outside [1, " +
                      std::to_string(n == 0 ? 0 : n - 1) + "]");
  }
  PatchGraph g;
  g.n_vertices = n;
  g.k = k;
  g.distances = distances;
  g.adjacency = Tensor({n, n});
  g.degrees.assign(n, k);
  g.neighbor_index.resize(n * k);

  std::vector<std::size_t> candidates(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = distances.data().data() + i * n;
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) candidates[c++] = j;
    auto closer = [row](std::size_t a, std::size_t b) {
      return row[a] < row[b] || (row[a] == row[b] && a < b);
    };
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                      candidates.end(), closer);
    for (std::size_t t = 0; t < k; ++t) {
      g.neighbor_index[i * k + t] = candidates[t];
      g.adjacency[i * n + candidates[t]] = 1.0;
    }
  }
  return g;
}

Tensor aggregate_mean(const Tensor& x, const PatchGraph& graph, DegreeNorm norm) {
  check_graph_input(x, graph, "aggregate_mean");
  const std::size_t n = graph.n_vertices, d = x.dim(1);
  std::vector<double> scale(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (graph.degrees[i] == 0) {
      throw DomainError("aggregate_mean: vertex " + std::to_string(i) + " has degree 0");
    }
    const double deg = static_cast<double>(graph.degrees[i]);
    scale[i] = norm == DegreeNorm::inverse_sqrt ? 1.0 / std::sqrt(deg) : std::sqrt(deg);
  }
  Tensor out({n, d});
  std::vector<std::size_t> sorted;
  for (std::size_t i = 0; i < n; ++i) {
    // Summing in vertex order keeps the result identical to the dense product.
    sorted.assign(graph.neighbors(i).begin(), graph.neighbors(i).end());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t j : sorted) {
      const double w = scale[i] * scale[j];
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] += w * x[j * d + c];
    }
  }
  return out;
}

Tensor aggregate_max_relative(const Tensor& x, const PatchGraph& graph,
                              std::vector<std::size_t>* argmax) {
  check_graph_input(x, graph, "aggregate_max_relative");
  if (graph.k == 0) throw DomainError("aggregate_max_relative: graph has no edges");
  const std::size_t n = graph.n_vertices, d = x.dim(1);
  Tensor out({n, 2 * d});
  if (argmax != nullptr) argmax->assign(n * d, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto nb = graph.neighbors(i);
    for (std::size_t c = 0; c < d; ++c) {
      const double xi = x[i * d + c];
      out[i * 2 * d + c] = xi;
      double best = xi - x[nb[0] * d + c];
      std::size_t who = nb[0];
      for (std::size_t t = 1; t < nb.size(); ++t) {
        const double diff = xi - x[nb[t] * d + c];
        if (diff > best) {
          best = diff;
          who = nb[t];
        }
      }
      out[i * 2 * d + d + c] = best;
      if (argmax != nullptr) (*argmax)[i * d + c] = who;
    }
  }
  return out;
}

}  // namespace vscam
