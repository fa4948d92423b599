#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace gptx {

struct KMeansResult {
    std::vector<float> centroids;     // [k, dim]
    std::vector<int64_t> assignments; // per point, ties -> lowest centroid index
    std::vector<double> sse_per_iter; // within-cluster SSE after each Lloyd update
};

// Lloyd's algorithm with k-means++ seeding. Fixed iteration count, empty
// clusters reseeded from the farthest point, deterministic given seed.
KMeansResult kmeans(std::span<const float> points, int64_t n, int64_t dim, int64_t k,
                    uint64_t seed, int iterations);

// Index of the nearest centroid (squared Euclidean, ties -> lowest index).
int64_t nearest_centroid(std::span<const float> point, std::span<const float> centroids,
                         int64_t k, int64_t dim);

}  // namespace gptx
