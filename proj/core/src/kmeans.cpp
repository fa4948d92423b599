#include "gptx/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "gptx/tensor.hpp"

namespace gptx {

namespace {

double sq_dist(const float* a, const float* b, int64_t dim) {
    double acc = 0.0;
    for (int64_t i = 0; i < dim; ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc;
}

// Assign every point to its nearest centroid; returns SSE.
double assign_all(std::span<const float> pts, int64_t n, int64_t dim,
                  std::span<const float> cents, int64_t k, std::vector<int64_t>& out) {
    double sse = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const float* p = pts.data() + i * dim;
        int64_t best = 0;
        double best_d = sq_dist(p, cents.data(), dim);
        for (int64_t c = 1; c < k; ++c) {
            const double d = sq_dist(p, cents.data() + c * dim, dim);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        out[static_cast<size_t>(i)] = best;
        sse += best_d;
    }
    return sse;
}

}  // namespace

int64_t nearest_centroid(std::span<const float> point, std::span<const float> centroids,
                         int64_t k, int64_t dim) {
    int64_t best = 0;
    double best_d = sq_dist(point.data(), centroids.data(), dim);
    for (int64_t c = 1; c < k; ++c) {
        const double d = sq_dist(point.data(), centroids.data() + c * dim, dim);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

KMeansResult kmeans(std::span<const float> points, int64_t n, int64_t dim, int64_t k,
                    uint64_t seed, int iterations) {
    if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
    if (k > n) throw std::invalid_argument("kmeans: k exceeds point count");
    if (iterations < 1) throw std::invalid_argument("kmeans: iterations must be >= 1");
    if (static_cast<int64_t>(points.size()) != n * dim) throw std::invalid_argument("kmeans: bad point buffer");

    std::mt19937_64 rng(seed);
    KMeansResult res;
    res.centroids.assign(static_cast<size_t>(k * dim), 0.0f);
    res.assignments.assign(static_cast<size_t>(n), 0);

    // k-means++ seeding: first centroid uniform, then proportional to the
    // squared distance to the nearest chosen centroid.
    std::vector<double> d2(static_cast<size_t>(n));
    {
        std::uniform_int_distribution<int64_t> uni(0, n - 1);
        const int64_t first = uni(rng);
        std::copy_n(points.data() + first * dim, dim, res.centroids.data());
        for (int64_t i = 0; i < n; ++i) {
            d2[static_cast<size_t>(i)] = sq_dist(points.data() + i * dim, res.centroids.data(), dim);
        }
        for (int64_t c = 1; c < k; ++c) {
            double total = 0.0;
            for (double v : d2) total += v;
            int64_t pick = -1;
            if (total > 0.0) {
                std::uniform_real_distribution<double> ud(0.0, total);
                const double u = ud(rng);
                double cum = 0.0;
                for (int64_t i = 0; i < n; ++i) {
                    cum += d2[static_cast<size_t>(i)];
                    if (u < cum) {
                        pick = i;
                        break;
                    }
                }
                if (pick < 0) pick = n - 1;
            } else {
                // all remaining points coincide with chosen centroids
                pick = 0;
            }
            std::copy_n(points.data() + pick * dim, dim, res.centroids.data() + c * dim);
            for (int64_t i = 0; i < n; ++i) {
                const double d = sq_dist(points.data() + i * dim, res.centroids.data() + c * dim, dim);
                d2[static_cast<size_t>(i)] = std::min(d2[static_cast<size_t>(i)], d);
            }
        }
    }

    std::vector<double> acc(static_cast<size_t>(k * dim));
    std::vector<int64_t> counts(static_cast<size_t>(k));
    for (int it = 0; it < iterations; ++it) {
        assign_all(points, n, dim, res.centroids, k, res.assignments);

        std::fill(acc.begin(), acc.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int64_t i = 0; i < n; ++i) {
            const int64_t c = res.assignments[static_cast<size_t>(i)];
            counts[static_cast<size_t>(c)] += 1;
            const float* p = points.data() + i * dim;
            double* a = acc.data() + c * dim;
            for (int64_t j = 0; j < dim; ++j) a[j] += static_cast<double>(p[j]);
        }
        for (int64_t c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] == 0) continue;
            const double inv = 1.0 / static_cast<double>(counts[static_cast<size_t>(c)]);
            float* cent = res.centroids.data() + c * dim;
            const double* a = acc.data() + c * dim;
            for (int64_t j = 0; j < dim; ++j) cent[j] = static_cast<float>(a[j] * inv);
        }

        // Reseed empty clusters from the farthest point; moving that point to
        // its own cluster cannot increase the SSE.
        for (int64_t c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] != 0) continue;
            assign_all(points, n, dim, res.centroids, k, res.assignments);
            int64_t far = 0;
            double far_d = -1.0;
            for (int64_t i = 0; i < n; ++i) {
                const double d = sq_dist(points.data() + i * dim,
                                         res.centroids.data() + res.assignments[static_cast<size_t>(i)] * dim, dim);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            std::copy_n(points.data() + far * dim, dim, res.centroids.data() + c * dim);
        }

        res.sse_per_iter.push_back(assign_all(points, n, dim, res.centroids, k, res.assignments));
    }
    return res;
}

}  // namespace gptx
