#include <doctest.h>

#include <cmath>
#include <random>

#include "gptx/metrics.hpp"
#include "test_support.hpp"

using namespace gptx;

namespace {

Image const_image(float v) {
    Image img(16, 16, 3);
    for (float& x : img.data) x = v;
    return img;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("jacobi eigendecomposition satisfies A v = lambda v") {
    std::mt19937_64 rng(4);
    const int64_t d = 8;
    std::vector<double> a(static_cast<size_t>(d * d));
    std::normal_distribution<double> dist;
    for (int64_t i = 0; i < d; ++i) {
        for (int64_t j = i; j < d; ++j) {
            a[static_cast<size_t>(i * d + j)] = a[static_cast<size_t>(j * d + i)] = dist(rng);
        }
    }
    std::vector<double> evals, evecs;
    jacobi_eigh(a, d, evals, &evecs);
    for (int64_t e = 0; e < d; ++e) {
        for (int64_t i = 0; i < d; ++i) {
            double av = 0.0;
            for (int64_t j = 0; j < d; ++j) {
                av += a[static_cast<size_t>(i * d + j)] * evecs[static_cast<size_t>(e * d + j)];
            }
            CHECK(av == doctest::Approx(evals[static_cast<size_t>(e)] * evecs[static_cast<size_t>(e * d + i)])
                            .epsilon(1e-9));
        }
    }
    for (int64_t e = 1; e < d; ++e) CHECK(evals[static_cast<size_t>(e)] >= evals[static_cast<size_t>(e - 1)]);
}

TEST_CASE("identical sample sets are at distance zero") {
    std::mt19937_64 rng(1);
    const int64_t n = 70, d = 64;
    std::vector<float> feats(static_cast<size_t>(n * d));
    std::normal_distribution<float> dist;
    for (float& x : feats) x = dist(rng);
    CHECK(frechet_distance(feats, n, feats, n, d) < 1e-8);
}

TEST_CASE("1-d moment-matched Gaussians sit at the squared mean gap") {
    // sample sets with exact moments: mean 0/1, variance 1 under ddof=1
    const std::vector<float> a{-1.0f, 0.0f, 1.0f};
    const std::vector<float> b{0.0f, 1.0f, 2.0f};
    CHECK(frechet_distance(a, 3, b, 3, 1) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("diagonal covariance reduces to the closed form") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> uni(0.1, 3.0);
    std::normal_distribution<double> gauss;
    const int64_t d = 6;
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> mu1(d), mu2(d), cov1(d * d, 0.0), cov2(d * d, 0.0);
        double expected = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            mu1[static_cast<size_t>(i)] = gauss(rng);
            mu2[static_cast<size_t>(i)] = gauss(rng);
            const double s1 = uni(rng), s2 = uni(rng);
            cov1[static_cast<size_t>(i * d + i)] = s1;
            cov2[static_cast<size_t>(i * d + i)] = s2;
            const double md = mu1[static_cast<size_t>(i)] - mu2[static_cast<size_t>(i)];
            expected += md * md + (std::sqrt(s1) - std::sqrt(s2)) * (std::sqrt(s1) - std::sqrt(s2));
        }
        CHECK(frechet_from_moments(mu1, cov1, mu2, cov2, d) == doctest::Approx(expected).epsilon(1e-8));
    }
}

TEST_CASE("frechet distance is symmetric") {
    std::mt19937_64 rng(3);
    const int64_t n = 40, d = 8;
    std::vector<float> a(static_cast<size_t>(n * d)), b(static_cast<size_t>(n * d));
    std::normal_distribution<float> dist;
    for (float& x : a) x = dist(rng);
    for (float& x : b) x = 0.5f * dist(rng) + 1.0f;
    CHECK(std::abs(frechet_distance(a, n, b, n, d) - frechet_distance(b, n, a, n, d)) < 1e-8);
}

TEST_CASE("frechet distance needs two samples per side") {
    const std::vector<float> one{1.0f};
    CHECK_THROWS_AS(frechet_distance(one, 1, one, 1, 1), std::invalid_argument);
}

TEST_CASE("identical generated images have zero diversity") {
    std::vector<Image> gen(4, const_image(0.5f));
    std::vector<Image> train{const_image(0.4f), const_image(0.9f)};
    const DiversityResult res = intra_cluster_diversity(gen, train);
    CHECK(res.value == 0.0);
    CHECK(res.clusters_used == 1);
}

TEST_CASE("all-singleton clustering reports zero with a flag") {
    std::vector<Image> gen{const_image(0.1f), const_image(0.9f)};
    std::vector<Image> train{const_image(0.0f), const_image(1.0f)};
    const DiversityResult res = intra_cluster_diversity(gen, train);
    CHECK(res.value == 0.0);
    CHECK(res.singleton_clusters == 2);
    CHECK(res.clusters_used == 0);
}

TEST_CASE("two clusters of two known images match the hand computation") {
    // cluster A near 0.0: members 0.1 and 0.2; cluster B near 1.0: members 0.8 and 0.6
    std::vector<Image> gen{const_image(0.1f), const_image(0.8f), const_image(0.2f), const_image(0.6f)};
    std::vector<Image> train{const_image(0.0f), const_image(1.0f)};
    const DiversityResult res = intra_cluster_diversity(gen, train);
    const double dim = std::sqrt(16.0 * 16.0 * 3.0);
    const double expected = 0.5 * (0.1 * dim + 0.2 * dim);
    CHECK(res.value == doctest::Approx(expected).epsilon(1e-5));
    CHECK(res.clusters_used == 2);
}

TEST_CASE("diversity is invariant to generated-image order") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> uni(0.0f, 1.0f);
    std::vector<Image> gen;
    for (int i = 0; i < 6; ++i) gen.push_back(const_image(uni(rng)));
    std::vector<Image> train{const_image(0.25f), const_image(0.75f)};
    const double forward = intra_cluster_diversity(gen, train).value;
    std::reverse(gen.begin(), gen.end());
    CHECK(intra_cluster_diversity(gen, train).value == doctest::Approx(forward).epsilon(1e-12));
}

TEST_CASE("kmeans: degenerate and separable cases") {
    // k == #points: zero SSE
    const std::vector<float> pts{0, 0, 1, 0, 0, 1, 1, 1};
    const KMeansResult exact = kmeans(pts, 4, 2, 4, 3, 5);
    CHECK(exact.sse_per_iter.back() == doctest::Approx(0.0));

    // k = 1: centroid is the mean
    const KMeansResult one = kmeans(pts, 4, 2, 1, 3, 5);
    CHECK(one.centroids[0] == doctest::Approx(0.5));
    CHECK(one.centroids[1] == doctest::Approx(0.5));

    CHECK_THROWS_AS(kmeans(pts, 4, 2, 5, 3, 5), std::invalid_argument);

    // two well-separated blobs -> perfect purity
    std::mt19937_64 rng(11);
    std::normal_distribution<float> noise(0.0f, 0.05f);
    std::vector<float> blob;
    std::vector<int64_t> truth;
    for (int i = 0; i < 20; ++i) {
        const bool right = i % 2 == 0;
        blob.push_back((right ? 5.0f : -5.0f) + noise(rng));
        blob.push_back(noise(rng));
        truth.push_back(right ? 1 : 0);
    }
    const KMeansResult two = kmeans(blob, 20, 2, 2, 9, 20);
    CHECK(nmi(two.assignments, truth) == doctest::Approx(1.0));
}

TEST_CASE("nmi conventions") {
    const std::vector<int64_t> a{0, 0, 1, 1, 2, 2};
    CHECK(nmi(a, a) == 1.0);

    // permutation of labels on either side leaves the score unchanged
    const std::vector<int64_t> relabeled{5, 5, 3, 3, 9, 9};
    CHECK(nmi(a, relabeled) == 1.0);

    const std::vector<int64_t> trivial{7, 7, 7, 7, 7, 7};
    CHECK(nmi(trivial, a) == 0.0);
    CHECK(nmi(trivial, trivial) == 1.0);

    const std::vector<int64_t> short_labels{0, 1};
    CHECK_THROWS_AS(nmi(a, short_labels), std::invalid_argument);
}

TEST_CASE("nmi of independent assignments tends to zero") {
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<int64_t> pick(0, 3);
    const int64_t n = 10000;
    std::vector<int64_t> a(static_cast<size_t>(n)), b(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        a[static_cast<size_t>(i)] = pick(rng);
        b[static_cast<size_t>(i)] = pick(rng);
    }
    CHECK(nmi(a, b) < 0.05);
}

TEST_CASE("hand-built six-point contingency table") {
    // assignments {0,0,0,1,1,1}, labels {0,0,1,1,1,0}
    const std::vector<int64_t> a{0, 0, 0, 1, 1, 1};
    const std::vector<int64_t> l{0, 0, 1, 1, 1, 0};
    // joint counts: (0,0)=2 (0,1)=1 (1,0)=1 (1,1)=2; all marginals 3/6
    const double p = 1.0 / 3.0, q = 1.0 / 6.0;
    const double mi = 2 * (p * std::log(p / 0.25)) + 2 * (q * std::log(q / 0.25));
    const double h = std::log(2.0);
    CHECK(nmi(a, l) == doctest::Approx(mi / h).epsilon(1e-12));
}

TEST_CASE("pooled grayscale features: dimension, range, pooling") {
    Image img(32, 32, 3);
    for (int64_t y = 0; y < 32; ++y) {
        for (int64_t x = 0; x < 32; ++x) {
            for (int64_t c = 0; c < 3; ++c) img.at(y, x, c) = y < 16 ? 0.0f : 1.0f;
        }
    }
    const std::vector<float> f = pooled_gray_features(img);
    REQUIRE(static_cast<int64_t>(f.size()) == kFeatureDim);
    for (int64_t cell = 0; cell < 32; ++cell) CHECK(f[static_cast<size_t>(cell)] == 0.0f);
    for (int64_t cell = 32; cell < 64; ++cell) CHECK(f[static_cast<size_t>(cell)] == 1.0f);

    Image bad(30, 32, 3);
    CHECK_THROWS_AS(pooled_gray_features(bad), std::invalid_argument);
}

}  // TEST_SUITE
