#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gptx/tensor.hpp"

namespace gptx::ad {

class Node;
using NodePtr = std::shared_ptr<Node>;

// One record in the differentiation graph: the op that produced a value,
// its inputs, and how to push gradient back through it.
class Node {
public:
    Node(Tensor value, const char* op, bool requires_grad, bool leaf)
        : value(std::move(value)), op(op), requires_grad(requires_grad), is_leaf(leaf), seq(next_seq()) {}

    Tensor value;
    std::optional<Tensor> grad;  // absent on frozen leaves and grad-free interior nodes
    const char* op;
    bool requires_grad;
    bool is_leaf;
    uint64_t seq;  // creation order; a topological order of the graph
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backprop;

    Tensor& ensure_grad();
    void accumulate_grad(const Tensor& g);

private:
    static uint64_t next_seq();
};

// Value-semantic handle to a graph node. Ops are eager: the output tensor is
// computed (and checked finite) at call time while the backward closure is
// recorded for later.
class Var {
public:
    Var() = default;
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    bool valid() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }

    bool has_grad() const { return node_->grad.has_value(); }
    const Tensor& grad() const;
    void zero_grad();

    // Leaf-only: overwrite the stored value (optimizer updates).
    void assign_value(const Tensor& t);

    // Leaf-only: flip trainability between graph builds. Freezing drops any
    // stored gradient so frozen leaves carry no gradient storage.
    void set_requires_grad(bool requires_grad);

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

// Leaves. A frozen leaf (requires_grad=false) participates in forward but
// receives no gradient storage.
Var leaf(Tensor t, bool requires_grad, const char* name = "leaf");
Var constant(Tensor t);

// --- op set ---------------------------------------------------------------
// Broadcasting is allowed on leading singleton axes only (after left-padding
// the shorter shape with ones).
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);

// (...,M,K) @ (K,N), or (...,M,K) @ (...,K,N) with identical leading dims.
Var matmul(const Var& a, const Var& b);

// table [V, rest...] gathered by row ids -> [N, rest...]
Var gather_rows(const Var& table, std::span<const int64_t> ids);

Var softmax(const Var& x);                     // last axis
Var layernorm(const Var& x, double eps = 1e-5);  // last axis, normalize only (no affine)
Var gelu(const Var& x);                        // exact erf form
Var reshape(const Var& x, Shape shape);
Var transpose(const Var& x, std::span<const int> perm);
Var concat(std::span<const Var> xs, int axis);
Var slice(const Var& x, int axis, int64_t begin, int64_t end);
Var reduce_sum_last(const Var& x);   // [..., D] -> [...]
Var reduce_sum_all(const Var& x);    // -> [1]
Var reduce_mean_all(const Var& x);   // -> [1]

// logits [N,V] with integer targets [N] -> per-row -log softmax(target) [N]
Var cross_entropy(const Var& logits, std::span<const int64_t> targets);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

// Reverse-mode sweep from a scalar loss. Visits each reachable node exactly
// once in reverse topological (creation) order; gradients accumulate
// additively across fan-out. Zeroing between steps is the caller's job.
void backward(const Var& loss);

// Central-difference gradient check:
// max over coordinates of |analytic - fd| / max(1, |analytic|).
// `value_fn` evaluates the scalar function at a parameter vector; `grad_fn`
// returns its analytic gradient (same length). epsilon must lie in
// [1e-5, 1e-2].
double finite_diff_check(const std::function<double(std::span<const float>)>& value_fn,
                         const std::function<std::vector<float>(std::span<const float>)>& grad_fn,
                         std::span<const float> point,
                         double epsilon);

}  // namespace gptx::ad
