#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gptx/image.hpp"
#include "gptx/kmeans.hpp"

namespace gptx {

// Fixed deterministic feature extractor: 8x8 average-pooled grayscale, a
// 64-d vector in [0,1]. Image extents must divide by 8.
std::vector<float> pooled_gray_features(const Image& image);

constexpr int64_t kFeatureDim = 64;

// Symmetric eigendecomposition by cyclic Jacobi rotations. `a` is a row-major
// d*d symmetric matrix; eigenvalues come back ascending, eigenvectors (when
// requested) as rows matching the eigenvalue order.
void jacobi_eigh(std::vector<double> a, int64_t d, std::vector<double>& eigenvalues,
                 std::vector<double>* eigenvectors = nullptr);

// Frechet distance between Gaussian moments:
// |mu1-mu2|^2 + Tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}),
// negative eigenvalues clamped at zero inside the square roots.
double frechet_from_moments(std::span<const double> mu1, std::span<const double> cov1,
                            std::span<const double> mu2, std::span<const double> cov2, int64_t d);

// Sample moments (covariance normalized by n-1, shrinkage +1e-6 I) then the
// moment formula. Feature rows are [n, d] row-major; n >= 2 per side.
double frechet_distance(std::span<const float> feats_a, int64_t na,
                        std::span<const float> feats_b, int64_t nb, int64_t d);

struct DiversityResult {
    double value = 0.0;
    int64_t clusters_used = 0;
    int64_t singleton_clusters = 0;
};

// Assign each generated image to its nearest training image by pixel L2 and
// average the mean pairwise L2 inside clusters with at least two members.
// All-singleton clusterings yield 0 with the singleton count raised.
DiversityResult intra_cluster_diversity(std::span<const Image> generated,
                                        std::span<const Image> train);

// Normalized mutual information with sqrt normalization:
// I(A;L) / sqrt(H(A) H(L)); 0 when exactly one side is trivial, 1 when both.
double nmi(std::span<const int64_t> assignments, std::span<const int64_t> labels);

}  // namespace gptx
