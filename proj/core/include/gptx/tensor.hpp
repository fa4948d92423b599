#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gptx {

// Thrown when an operation produces or receives a NaN/Inf value.
struct NumericsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown on shape/precondition violations.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float32 array. Accumulating kernels (matmul, reductions)
// run in float64 and round once on store, so results are deterministic and
// gradient checks stay tight.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<float> data);
    Tensor(Shape shape, float fill);

    static Tensor scalar(float v) { return Tensor({1}, std::vector<float>{v}); }

    const Shape& shape() const { return shape_; }
    int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    int64_t dim(int64_t axis) const;

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
    float at(int64_t i) const { return data_[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    // Throws NumericsError naming `what` if any element is NaN/Inf.
    void check_finite(const char* what) const;

private:
    Shape shape_;
    std::vector<float> data_;
};

// --- kernels -------------------------------------------------------------
// All kernels write each output element in a fixed reduction order, so
// results are bit-reproducible regardless of thread count.

// c[M,N] = a[M,K] @ b[K,N]
void gemm_nn(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n);
// c[M,K] = a[M,N] @ b[K,N]^T
void gemm_nt(const float* a, const float* b, float* c, int64_t m, int64_t n, int64_t k);
// c[K,N] = a[M,K]^T @ b[M,N]; accumulates into c (c += ...)
void gemm_tn_acc(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n);

// sum of span in float64
double sum_f64(std::span<const float> xs);

}  // namespace gptx
