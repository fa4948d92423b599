#include "gptx/tensor.hpp"

#include <cmath>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gptx {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    for (int64_t d : shape_) {
        if (d <= 0) throw ShapeError("tensor extent must be positive, got " + shape_str(shape_));
    }
    data_.assign(static_cast<size_t>(numel(shape_)), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (int64_t d : shape_) {
        if (d <= 0) throw ShapeError("tensor extent must be positive, got " + shape_str(shape_));
    }
    if (numel(shape_) != static_cast<int64_t>(data_.size())) {
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
    }
}

Tensor::Tensor(Shape shape, float fill) : Tensor(std::move(shape)) {
    data_.assign(data_.size(), fill);
}

int64_t Tensor::dim(int64_t axis) const {
    if (axis < 0) axis += ndim();
    if (axis < 0 || axis >= ndim()) throw ShapeError("axis out of range");
    return shape_[static_cast<size_t>(axis)];
}

bool Tensor::all_finite() const {
    for (float v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::check_finite(const char* what) const {
    if (!all_finite()) throw NumericsError(std::string("non-finite value in ") + what);
}

namespace {
constexpr int64_t kParallelGemmMin = 1 << 15;  // M*N below this stays serial
}

void gemm_nn(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
    // Each c row accumulates in a float64 scratch row, fixed k order.
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * n >= kParallelGemmMin)
#endif
    for (int64_t i = 0; i < m; ++i) {
        std::vector<double> acc(static_cast<size_t>(n), 0.0);
        const float* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double av = static_cast<double>(arow[p]);
            const float* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) {
                acc[static_cast<size_t>(j)] = std::fma(av, static_cast<double>(brow[j]), acc[static_cast<size_t>(j)]);
            }
        }
        float* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[static_cast<size_t>(j)]);
    }
}

void gemm_nt(const float* a, const float* b, float* c, int64_t m, int64_t n, int64_t k) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * k >= kParallelGemmMin)
#endif
    for (int64_t i = 0; i < m; ++i) {
        const float* arow = a + i * n;
        float* crow = c + i * k;
        for (int64_t j = 0; j < k; ++j) {
            const float* brow = b + j * n;
            double acc = 0.0;
            for (int64_t p = 0; p < n; ++p) {
                acc = std::fma(static_cast<double>(arow[p]), static_cast<double>(brow[p]), acc);
            }
            crow[j] = static_cast<float>(acc);
        }
    }
}

void gemm_tn_acc(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (k * n >= kParallelGemmMin)
#endif
    for (int64_t j = 0; j < k; ++j) {
        std::vector<double> acc(static_cast<size_t>(n), 0.0);
        for (int64_t i = 0; i < m; ++i) {
            const double av = static_cast<double>(a[i * k + j]);
            const float* brow = b + i * n;
            for (int64_t p = 0; p < n; ++p) {
                acc[static_cast<size_t>(p)] = std::fma(av, static_cast<double>(brow[p]), acc[static_cast<size_t>(p)]);
            }
        }
        float* crow = c + j * n;
        for (int64_t p = 0; p < n; ++p) {
            crow[p] += static_cast<float>(acc[static_cast<size_t>(p)]);
        }
    }
}

double sum_f64(std::span<const float> xs) {
    double acc = 0.0;
    for (float x : xs) acc += static_cast<double>(x);
    return acc;
}

}  // namespace gptx
