#include "gptx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

namespace gptx {

std::vector<float> pooled_gray_features(const Image& image) {
    if (image.height % 8 != 0 || image.width % 8 != 0) {
        throw std::invalid_argument("feature extractor needs extents divisible by 8");
    }
    const int64_t by = image.height / 8;
    const int64_t bx = image.width / 8;
    std::vector<float> feat(static_cast<size_t>(kFeatureDim));
    for (int64_t cy = 0; cy < 8; ++cy) {
        for (int64_t cx = 0; cx < 8; ++cx) {
            double acc = 0.0;
            for (int64_t y = cy * by; y < (cy + 1) * by; ++y) {
                for (int64_t x = cx * bx; x < (cx + 1) * bx; ++x) {
                    double g = 0.0;
                    for (int64_t c = 0; c < image.channels; ++c) g += image.at(y, x, c);
                    acc += g / static_cast<double>(image.channels);
                }
            }
            feat[static_cast<size_t>(cy * 8 + cx)] =
                static_cast<float>(acc / static_cast<double>(by * bx));
        }
    }
    return feat;
}

void jacobi_eigh(std::vector<double> a, int64_t d, std::vector<double>& eigenvalues,
                 std::vector<double>* eigenvectors) {
    if (static_cast<int64_t>(a.size()) != d * d) throw std::invalid_argument("jacobi_eigh: bad matrix size");
    std::vector<double> v;
    if (eigenvectors) {
        v.assign(static_cast<size_t>(d * d), 0.0);
        for (int64_t i = 0; i < d; ++i) v[static_cast<size_t>(i * d + i)] = 1.0;
    }

    auto off_norm = [&]() {
        double s = 0.0;
        for (int64_t p = 0; p < d; ++p) {
            for (int64_t q = p + 1; q < d; ++q) {
                s += a[static_cast<size_t>(p * d + q)] * a[static_cast<size_t>(p * d + q)];
            }
        }
        return s;
    };
    double scale = 0.0;
    for (double x : a) scale = std::max(scale, std::abs(x));
    const double tol = std::max(1e-300, scale * scale * 1e-30);

    for (int sweep = 0; sweep < 100 && off_norm() > tol * static_cast<double>(d * d); ++sweep) {
        for (int64_t p = 0; p < d; ++p) {
            for (int64_t q = p + 1; q < d; ++q) {
                const double apq = a[static_cast<size_t>(p * d + q)];
                if (apq == 0.0) continue;
                const double app = a[static_cast<size_t>(p * d + p)];
                const double aqq = a[static_cast<size_t>(q * d + q)];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int64_t i = 0; i < d; ++i) {
                    const double aip = a[static_cast<size_t>(i * d + p)];
                    const double aiq = a[static_cast<size_t>(i * d + q)];
                    a[static_cast<size_t>(i * d + p)] = c * aip - s * aiq;
                    a[static_cast<size_t>(i * d + q)] = s * aip + c * aiq;
                }
                for (int64_t i = 0; i < d; ++i) {
                    const double api = a[static_cast<size_t>(p * d + i)];
                    const double aqi = a[static_cast<size_t>(q * d + i)];
                    a[static_cast<size_t>(p * d + i)] = c * api - s * aqi;
                    a[static_cast<size_t>(q * d + i)] = s * api + c * aqi;
                }
                if (eigenvectors) {
                    for (int64_t i = 0; i < d; ++i) {
                        const double vpi = v[static_cast<size_t>(p * d + i)];
                        const double vqi = v[static_cast<size_t>(q * d + i)];
                        v[static_cast<size_t>(p * d + i)] = c * vpi - s * vqi;
                        v[static_cast<size_t>(q * d + i)] = s * vpi + c * vqi;
                    }
                }
            }
        }
    }

    std::vector<int64_t> order(static_cast<size_t>(d));
    for (int64_t i = 0; i < d; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int64_t x, int64_t y) {
        return a[static_cast<size_t>(x * d + x)] < a[static_cast<size_t>(y * d + y)];
    });
    eigenvalues.resize(static_cast<size_t>(d));
    for (int64_t i = 0; i < d; ++i) {
        eigenvalues[static_cast<size_t>(i)] = a[static_cast<size_t>(order[static_cast<size_t>(i)] * d + order[static_cast<size_t>(i)])];
    }
    if (eigenvectors) {
        eigenvectors->assign(static_cast<size_t>(d * d), 0.0);
        for (int64_t i = 0; i < d; ++i) {
            for (int64_t j = 0; j < d; ++j) {
                (*eigenvectors)[static_cast<size_t>(i * d + j)] =
                    v[static_cast<size_t>(order[static_cast<size_t>(i)] * d + j)];
            }
        }
    }
}

namespace {

// b = q^T diag(f(lambda)) q for a symmetric input held as (eigenvalues, rows q)
std::vector<double> rebuild_sym(const std::vector<double>& evals, const std::vector<double>& evecs,
                                int64_t d, double (*f)(double)) {
    std::vector<double> out(static_cast<size_t>(d * d), 0.0);
    for (int64_t e = 0; e < d; ++e) {
        const double w = f(evals[static_cast<size_t>(e)]);
        if (w == 0.0) continue;
        const double* q = evecs.data() + e * d;
        for (int64_t i = 0; i < d; ++i) {
            for (int64_t j = 0; j < d; ++j) {
                out[static_cast<size_t>(i * d + j)] += w * q[i] * q[j];
            }
        }
    }
    return out;
}

double sqrt_clamped(double x) { return x > 0.0 ? std::sqrt(x) : 0.0; }

std::vector<double> matmul_dd(const std::vector<double>& a, const std::vector<double>& b, int64_t d) {
    std::vector<double> c(static_cast<size_t>(d * d), 0.0);
    for (int64_t i = 0; i < d; ++i) {
        for (int64_t k = 0; k < d; ++k) {
            const double av = a[static_cast<size_t>(i * d + k)];
            if (av == 0.0) continue;
            for (int64_t j = 0; j < d; ++j) {
                c[static_cast<size_t>(i * d + j)] += av * b[static_cast<size_t>(k * d + j)];
            }
        }
    }
    return c;
}

}  // namespace

double frechet_from_moments(std::span<const double> mu1, std::span<const double> cov1,
                            std::span<const double> mu2, std::span<const double> cov2, int64_t d) {
    if (static_cast<int64_t>(mu1.size()) != d || static_cast<int64_t>(mu2.size()) != d ||
        static_cast<int64_t>(cov1.size()) != d * d || static_cast<int64_t>(cov2.size()) != d * d) {
        throw std::invalid_argument("frechet_from_moments: dimension mismatch");
    }
    double mean_term = 0.0;
    for (int64_t i = 0; i < d; ++i) {
        const double diff = mu1[static_cast<size_t>(i)] - mu2[static_cast<size_t>(i)];
        mean_term += diff * diff;
    }
    double tr1 = 0.0, tr2 = 0.0;
    for (int64_t i = 0; i < d; ++i) {
        tr1 += cov1[static_cast<size_t>(i * d + i)];
        tr2 += cov2[static_cast<size_t>(i * d + i)];
    }

    std::vector<double> evals, evecs;
    jacobi_eigh(std::vector<double>(cov1.begin(), cov1.end()), d, evals, &evecs);
    const std::vector<double> s1 = rebuild_sym(evals, evecs, d, sqrt_clamped);

    // symmetrized product S1 * C2 * S1
    std::vector<double> prod = matmul_dd(matmul_dd(s1, std::vector<double>(cov2.begin(), cov2.end()), d), s1, d);
    for (int64_t i = 0; i < d; ++i) {
        for (int64_t j = i + 1; j < d; ++j) {
            const double m = 0.5 * (prod[static_cast<size_t>(i * d + j)] + prod[static_cast<size_t>(j * d + i)]);
            prod[static_cast<size_t>(i * d + j)] = m;
            prod[static_cast<size_t>(j * d + i)] = m;
        }
    }
    jacobi_eigh(std::move(prod), d, evals, nullptr);
    double tr_sqrt = 0.0;
    for (double ev : evals) tr_sqrt += sqrt_clamped(ev);

    return std::max(0.0, mean_term + tr1 + tr2 - 2.0 * tr_sqrt);
}

double frechet_distance(std::span<const float> feats_a, int64_t na,
                        std::span<const float> feats_b, int64_t nb, int64_t d) {
    if (na < 2 || nb < 2) throw std::invalid_argument("frechet_distance needs >= 2 samples per side");
    if (static_cast<int64_t>(feats_a.size()) != na * d || static_cast<int64_t>(feats_b.size()) != nb * d) {
        throw std::invalid_argument("frechet_distance: bad feature buffer");
    }
    auto moments = [d](std::span<const float> feats, int64_t n, std::vector<double>& mu,
                       std::vector<double>& cov) {
        mu.assign(static_cast<size_t>(d), 0.0);
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < d; ++j) mu[static_cast<size_t>(j)] += feats[static_cast<size_t>(i * d + j)];
        }
        for (double& m : mu) m /= static_cast<double>(n);
        cov.assign(static_cast<size_t>(d * d), 0.0);
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t p = 0; p < d; ++p) {
                const double cp = feats[static_cast<size_t>(i * d + p)] - mu[static_cast<size_t>(p)];
                for (int64_t q = p; q < d; ++q) {
                    cov[static_cast<size_t>(p * d + q)] +=
                        cp * (feats[static_cast<size_t>(i * d + q)] - mu[static_cast<size_t>(q)]);
                }
            }
        }
        const double norm = 1.0 / static_cast<double>(n - 1);
        for (int64_t p = 0; p < d; ++p) {
            for (int64_t q = p; q < d; ++q) {
                cov[static_cast<size_t>(p * d + q)] *= norm;
                cov[static_cast<size_t>(q * d + p)] = cov[static_cast<size_t>(p * d + q)];
            }
        }
        for (int64_t p = 0; p < d; ++p) cov[static_cast<size_t>(p * d + p)] += 1e-6;  // shrinkage
    };
    std::vector<double> mu1, mu2, cov1, cov2;
    moments(feats_a, na, mu1, cov1);
    moments(feats_b, nb, mu2, cov2);
    return frechet_from_moments(mu1, cov1, mu2, cov2, d);
}

DiversityResult intra_cluster_diversity(std::span<const Image> generated,
                                        std::span<const Image> train) {
    if (generated.size() < 2) throw std::invalid_argument("need >= 2 generated images");
    if (train.empty()) throw std::invalid_argument("need >= 1 training image");

    auto l2 = [](const Image& a, const Image& b) {
        if (a.size() != b.size()) throw std::invalid_argument("image size mismatch");
        double acc = 0.0;
        for (int64_t i = 0; i < a.size(); ++i) {
            const double diff = static_cast<double>(a.data[static_cast<size_t>(i)]) -
                                static_cast<double>(b.data[static_cast<size_t>(i)]);
            acc += diff * diff;
        }
        return std::sqrt(acc);
    };

    std::vector<int64_t> assign(generated.size());
    for (size_t g = 0; g < generated.size(); ++g) {
        int64_t best = 0;
        double best_d = l2(generated[g], train[0]);
        for (size_t t = 1; t < train.size(); ++t) {
            const double dist = l2(generated[g], train[t]);
            if (dist < best_d) {
                best_d = dist;
                best = static_cast<int64_t>(t);
            }
        }
        assign[g] = best;
    }

    DiversityResult res;
    double sum = 0.0;
    for (size_t t = 0; t < train.size(); ++t) {
        std::vector<size_t> members;
        for (size_t g = 0; g < generated.size(); ++g) {
            if (assign[g] == static_cast<int64_t>(t)) members.push_back(g);
        }
        if (members.empty()) continue;
        if (members.size() == 1) {
            res.singleton_clusters += 1;
            continue;
        }
        double pair_sum = 0.0;
        int64_t pairs = 0;
        for (size_t i = 0; i < members.size(); ++i) {
            for (size_t j = i + 1; j < members.size(); ++j) {
                pair_sum += l2(generated[members[i]], generated[members[j]]);
                ++pairs;
            }
        }
        sum += pair_sum / static_cast<double>(pairs);
        res.clusters_used += 1;
    }
    res.value = res.clusters_used > 0 ? sum / static_cast<double>(res.clusters_used) : 0.0;
    return res;
}

double nmi(std::span<const int64_t> assignments, std::span<const int64_t> labels) {
    if (assignments.size() != labels.size()) throw std::invalid_argument("nmi: length mismatch");
    if (assignments.empty()) throw std::invalid_argument("nmi: empty inputs");
    const double n = static_cast<double>(assignments.size());

    std::map<int64_t, double> pa, pb;
    std::map<std::pair<int64_t, int64_t>, double> pj;
    for (size_t i = 0; i < assignments.size(); ++i) {
        pa[assignments[i]] += 1.0;
        pb[labels[i]] += 1.0;
        pj[{assignments[i], labels[i]}] += 1.0;
    }
    double ha = 0.0, hb = 0.0, mi = 0.0;
    for (auto& [k, c] : pa) {
        const double p = c / n;
        ha -= p * std::log(p);
    }
    for (auto& [k, c] : pb) {
        const double p = c / n;
        hb -= p * std::log(p);
    }
    for (auto& [k, c] : pj) {
        const double p = c / n;
        mi += p * std::log(p / ((pa[k.first] / n) * (pb[k.second] / n)));
    }
    if (ha <= 0.0 && hb <= 0.0) return 1.0;  // both partitions trivial, hence identical
    if (ha <= 0.0 || hb <= 0.0) return 0.0;
    return std::clamp(mi / std::sqrt(ha * hb), 0.0, 1.0);
}

}  // namespace gptx
