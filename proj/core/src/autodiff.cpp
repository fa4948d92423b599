#include "gptx/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace gptx::ad {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

// Left-pad a shape with ones to the target rank.
Shape pad_shape(const Shape& s, size_t rank) {
    Shape out(rank, 1);
    std::copy(s.begin(), s.end(), out.begin() + (rank - s.size()));
    return out;
}

// Broadcasting is legal when the operand equals the result on a trailing
// block and is 1 on every axis before it.
bool broadcast_ok(const Shape& padded, const Shape& result) {
    size_t split = 0;
    while (split < padded.size() && padded[split] == 1) ++split;
    for (size_t i = split; i < padded.size(); ++i) {
        if (padded[i] != result[i]) return false;
    }
    return true;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const size_t rank = std::max(a.size(), b.size());
    const Shape pa = pad_shape(a, rank);
    const Shape pb = pad_shape(b, rank);
    Shape r(rank);
    for (size_t i = 0; i < rank; ++i) r[i] = std::max(pa[i], pb[i]);
    if (!broadcast_ok(pa, r) || !broadcast_ok(pb, r)) {
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                         " broadcast only on leading singleton axes");
    }
    return r;
}

// Sum of the broadcast output gradient back to the operand's shape.
Tensor reduce_to_operand(const Tensor& dy, const Shape& operand_shape) {
    Tensor out(operand_shape);
    const int64_t sz = out.size();
    const int64_t blocks = dy.size() / sz;
    for (int64_t j = 0; j < sz; ++j) {
        double acc = 0.0;
        for (int64_t g = 0; g < blocks; ++g) acc += static_cast<double>(dy.at(g * sz + j));
        out.at(j) = static_cast<float>(acc);
    }
    return out;
}

Var make_op(Tensor value, const char* op, std::vector<NodePtr> inputs,
            std::function<void(Node&)> backprop) {
    value.check_finite(op);
    bool req = false;
    for (const auto& in : inputs) req = req || in->requires_grad;
    auto node = std::make_shared<Node>(std::move(value), op, req, /*leaf=*/false);
    node->inputs = std::move(inputs);
    if (req) node->backprop = std::move(backprop);
    return Var(node);
}

}  // namespace

uint64_t Node::next_seq() {
    static std::atomic<uint64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

Tensor& Node::ensure_grad() {
    if (!grad) grad.emplace(value.shape());
    return *grad;
}

void Node::accumulate_grad(const Tensor& g) {
    Tensor& dst = ensure_grad();
    if (!dst.same_shape(g)) throw ShapeError("gradient shape mismatch for " + std::string(op));
    float* d = dst.data();
    const float* s = g.data();
    const int64_t n = dst.size();
    for (int64_t i = 0; i < n; ++i) d[i] += s[i];
}

const Tensor& Var::grad() const {
    if (!node_->grad) throw std::logic_error("no gradient stored on this node");
    return *node_->grad;
}

void Var::zero_grad() {
    if (node_->grad) {
        auto& v = node_->grad->vec();
        std::fill(v.begin(), v.end(), 0.0f);
    }
}

void Var::assign_value(const Tensor& t) {
    if (!node_->is_leaf) throw std::logic_error("assign_value on a non-leaf node");
    if (!node_->value.same_shape(t)) throw ShapeError("assign_value shape mismatch");
    node_->value = t;
}

void Var::set_requires_grad(bool requires_grad) {
    if (!node_->is_leaf) throw std::logic_error("set_requires_grad on a non-leaf node");
    node_->requires_grad = requires_grad;
    if (!requires_grad) node_->grad.reset();
}

Var leaf(Tensor t, bool requires_grad, const char* name) {
    t.check_finite(name);
    return Var(std::make_shared<Node>(std::move(t), name, requires_grad, /*leaf=*/true));
}

Var constant(Tensor t) { return leaf(std::move(t), false, "const"); }

// --- elementwise ----------------------------------------------------------

Var add(const Var& a, const Var& b) {
    const Shape rs = broadcast_shape(a.shape(), b.shape(), "add");
    Tensor out(rs);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const int64_t n = out.size(), an = av.size(), bn = bv.size();
    for (int64_t i = 0; i < n; ++i) out.at(i) = av.at(i % an) + bv.at(i % bn);
    return make_op(std::move(out), "add", {a.node(), b.node()}, [](Node& self) {
        const Tensor& dy = *self.grad;
        for (int k = 0; k < 2; ++k) {
            Node& in = *self.inputs[k];
            if (!in.requires_grad) continue;
            if (in.value.same_shape(dy)) {
                in.accumulate_grad(dy);
            } else {
                in.accumulate_grad(reduce_to_operand(dy, in.value.shape()));
            }
        }
    });
}

Var mul(const Var& a, const Var& b) {
    const Shape rs = broadcast_shape(a.shape(), b.shape(), "mul");
    Tensor out(rs);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const int64_t n = out.size(), an = av.size(), bn = bv.size();
    for (int64_t i = 0; i < n; ++i) out.at(i) = av.at(i % an) * bv.at(i % bn);
    return make_op(std::move(out), "mul", {a.node(), b.node()}, [](Node& self) {
        const Tensor& dy = *self.grad;
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        const int64_t n = dy.size(), an = na.value.size(), bn = nb.value.size();
        if (na.requires_grad) {
            Tensor t(dy.shape());
            for (int64_t i = 0; i < n; ++i) t.at(i) = dy.at(i) * nb.value.at(i % bn);
            na.accumulate_grad(t.same_shape(na.value) ? t : reduce_to_operand(t, na.value.shape()));
        }
        if (nb.requires_grad) {
            Tensor t(dy.shape());
            for (int64_t i = 0; i < n; ++i) t.at(i) = dy.at(i) * na.value.at(i % an);
            nb.accumulate_grad(t.same_shape(nb.value) ? t : reduce_to_operand(t, nb.value.shape()));
        }
    });
}

Var scale(const Var& a, float s) { return mul(a, constant(Tensor::scalar(s))); }

// --- matmul ----------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2) throw ShapeError("matmul: lhs must have rank >= 2");
    const int64_t m = as[as.size() - 2];
    const int64_t k = as[as.size() - 1];
    int64_t batch = 1;
    for (size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];

    const bool shared_rhs = bs.size() == 2;
    if (shared_rhs) {
        if (bs[0] != k) {
            throw ShapeError("matmul: inner dims differ, " + shape_str(as) + " vs " + shape_str(bs));
        }
    } else {
        if (bs.size() != as.size() || bs[bs.size() - 2] != k ||
            !std::equal(as.begin(), as.end() - 2, bs.begin())) {
            throw ShapeError("matmul: incompatible batched shapes " + shape_str(as) + " vs " + shape_str(bs));
        }
    }
    const int64_t n = bs.back();

    Shape rs(as.begin(), as.end() - 1);
    rs.push_back(n);
    Tensor out(rs);

    if (shared_rhs) {
        gemm_nn(a.value().data(), b.value().data(), out.data(), batch * m, k, n);
    } else {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (batch > 1)
#endif
        for (int64_t i = 0; i < batch; ++i) {
            gemm_nn(a.value().data() + i * m * k, b.value().data() + i * k * n,
                    out.data() + i * m * n, m, k, n);
        }
    }

    return make_op(std::move(out), "matmul", {a.node(), b.node()},
                   [m, k, n, batch, shared_rhs](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        const float* dy = self.grad->data();
        if (shared_rhs) {
            if (na.requires_grad) {
                Tensor da(na.value.shape());
                gemm_nt(dy, nb.value.data(), da.data(), batch * m, n, k);
                na.accumulate_grad(da);
            }
            if (nb.requires_grad) {
                gemm_tn_acc(na.value.data(), dy, nb.ensure_grad().data(), batch * m, k, n);
            }
        } else {
            if (na.requires_grad) {
                Tensor da(na.value.shape());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (batch > 1)
#endif
                for (int64_t i = 0; i < batch; ++i) {
                    gemm_nt(dy + i * m * n, nb.value.data() + i * k * n, da.data() + i * m * k, m, n, k);
                }
                na.accumulate_grad(da);
            }
            if (nb.requires_grad) {
                float* db = nb.ensure_grad().data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (batch > 1)
#endif
                for (int64_t i = 0; i < batch; ++i) {
                    gemm_tn_acc(na.value.data() + i * m * k, dy + i * m * n, db + i * k * n, m, k, n);
                }
            }
        }
    });
}

// --- gather -----------------------------------------------------------------

Var gather_rows(const Var& table, std::span<const int64_t> ids) {
    const Shape& ts = table.shape();
    if (ts.empty()) throw ShapeError("gather_rows: table must have rank >= 1");
    const int64_t rows = ts[0];
    int64_t row_sz = 1;
    for (size_t i = 1; i < ts.size(); ++i) row_sz *= ts[i];
    for (int64_t id : ids) {
        if (id < 0 || id >= rows) {
            throw ShapeError("gather_rows: id " + std::to_string(id) + " out of [0," + std::to_string(rows) + ")");
        }
    }
    Shape rs;
    rs.push_back(static_cast<int64_t>(ids.size()));
    rs.insert(rs.end(), ts.begin() + 1, ts.end());
    Tensor out(rs);
    for (size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(table.value().data() + ids[i] * row_sz, row_sz,
                    out.data() + static_cast<int64_t>(i) * row_sz);
    }
    std::vector<int64_t> owned(ids.begin(), ids.end());
    return make_op(std::move(out), "gather", {table.node()},
                   [owned = std::move(owned), row_sz](Node& self) {
        Node& t = *self.inputs[0];
        if (!t.requires_grad) return;
        float* tg = t.ensure_grad().data();
        const float* dy = self.grad->data();
        for (size_t i = 0; i < owned.size(); ++i) {
            float* dst = tg + owned[i] * row_sz;
            const float* src = dy + static_cast<int64_t>(i) * row_sz;
            for (int64_t j = 0; j < row_sz; ++j) dst[j] += src[j];
        }
    });
}

// --- row-wise nonlinearities -------------------------------------------------

Var softmax(const Var& x) {
    const int64_t d = x.shape().back();
    const int64_t rows = x.value().size() / d;
    Tensor out(x.shape());
    std::vector<double> e(static_cast<size_t>(d));
    for (int64_t r = 0; r < rows; ++r) {
        const float* in = x.value().data() + r * d;
        float* o = out.data() + r * d;
        double mx = in[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, static_cast<double>(in[j]));
        double s = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            e[static_cast<size_t>(j)] = std::exp(static_cast<double>(in[j]) - mx);
            s += e[static_cast<size_t>(j)];
        }
        for (int64_t j = 0; j < d; ++j) o[j] = static_cast<float>(e[static_cast<size_t>(j)] / s);
    }
    return make_op(std::move(out), "softmax", {x.node()}, [d, rows](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        Tensor dx(in.value.shape());
        const float* y = self.value.data();
        const float* dy = self.grad->data();
        for (int64_t r = 0; r < rows; ++r) {
            const float* yr = y + r * d;
            const float* gr = dy + r * d;
            double dot = 0.0;
            for (int64_t j = 0; j < d; ++j) dot += static_cast<double>(gr[j]) * static_cast<double>(yr[j]);
            float* o = dx.data() + r * d;
            for (int64_t j = 0; j < d; ++j) {
                o[j] = static_cast<float>(static_cast<double>(yr[j]) * (static_cast<double>(gr[j]) - dot));
            }
        }
        in.accumulate_grad(dx);
    });
}

Var layernorm(const Var& x, double eps) {
    const int64_t d = x.shape().back();
    const int64_t rows = x.value().size() / d;
    Tensor out(x.shape());
    std::vector<float> inv_store(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const float* in = x.value().data() + r * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += in[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = static_cast<double>(in[j]) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_store[static_cast<size_t>(r)] = static_cast<float>(inv);
        float* o = out.data() + r * d;
        for (int64_t j = 0; j < d; ++j) {
            o[j] = static_cast<float>((static_cast<double>(in[j]) - mean) * inv);
        }
    }
    return make_op(std::move(out), "layernorm", {x.node()},
                   [d, rows, inv_store = std::move(inv_store)](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        Tensor dx(in.value.shape());
        const float* y = self.value.data();
        const float* dy = self.grad->data();
        for (int64_t r = 0; r < rows; ++r) {
            const float* yr = y + r * d;
            const float* gr = dy + r * d;
            double mg = 0.0, mgy = 0.0;
            for (int64_t j = 0; j < d; ++j) {
                mg += gr[j];
                mgy += static_cast<double>(gr[j]) * static_cast<double>(yr[j]);
            }
            mg /= static_cast<double>(d);
            mgy /= static_cast<double>(d);
            const double inv = inv_store[static_cast<size_t>(r)];
            float* o = dx.data() + r * d;
            for (int64_t j = 0; j < d; ++j) {
                o[j] = static_cast<float>(inv * (static_cast<double>(gr[j]) - mg - static_cast<double>(yr[j]) * mgy));
            }
        }
        in.accumulate_grad(dx);
    });
}

Var gelu(const Var& x) {
    Tensor out(x.shape());
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) {
        const double v = x.value().at(i);
        out.at(i) = static_cast<float>(v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)));
    }
    return make_op(std::move(out), "gelu", {x.node()}, [](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        Tensor dx(in.value.shape());
        const int64_t n = dx.size();
        for (int64_t i = 0; i < n; ++i) {
            const double v = in.value.at(i);
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            dx.at(i) = static_cast<float>(static_cast<double>(self.grad->at(i)) * (cdf + v * pdf));
        }
        in.accumulate_grad(dx);
    });
}

// --- layout ops ---------------------------------------------------------------

Var reshape(const Var& x, Shape shape) {
    if (numel(shape) != x.value().size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Tensor out(std::move(shape), x.value().vec());
    return make_op(std::move(out), "reshape", {x.node()}, [](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        Tensor dx(in.value.shape(), self.grad->vec());
        in.accumulate_grad(dx);
    });
}

namespace {

Tensor permute_copy(const Tensor& x, std::span<const int> perm) {
    const size_t rank = x.shape().size();
    Shape rs(rank);
    for (size_t i = 0; i < rank; ++i) rs[i] = x.shape()[static_cast<size_t>(perm[i])];
    Tensor out(rs);
    // strides of input and of output-in-input-axis-order
    std::vector<int64_t> xstride(rank, 1);
    for (size_t i = rank - 1; i > 0; --i) xstride[i - 1] = xstride[i] * x.shape()[i];
    std::vector<int64_t> ostride(rank, 1);
    for (size_t i = rank - 1; i > 0; --i) ostride[i - 1] = ostride[i] * rs[i];
    // walk output linearly, map back to input offset
    std::vector<int64_t> idx(rank, 0);
    const int64_t n = out.size();
    for (int64_t o = 0; o < n; ++o) {
        int64_t rem = o;
        int64_t xoff = 0;
        for (size_t i = 0; i < rank; ++i) {
            const int64_t c = rem / ostride[i];
            rem -= c * ostride[i];
            xoff += c * xstride[static_cast<size_t>(perm[i])];
        }
        out.at(o) = x.at(xoff);
    }
    return out;
}

}  // namespace

Var transpose(const Var& x, std::span<const int> perm) {
    const size_t rank = x.shape().size();
    if (perm.size() != rank) throw ShapeError("transpose: perm rank mismatch");
    std::vector<bool> seen(rank, false);
    for (int p : perm) {
        if (p < 0 || static_cast<size_t>(p) >= rank || seen[static_cast<size_t>(p)]) {
            throw ShapeError("transpose: invalid permutation");
        }
        seen[static_cast<size_t>(p)] = true;
    }
    std::vector<int> owned(perm.begin(), perm.end());
    Tensor out = permute_copy(x.value(), owned);
    return make_op(std::move(out), "transpose", {x.node()}, [owned](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        std::vector<int> inv(owned.size());
        for (size_t i = 0; i < owned.size(); ++i) inv[static_cast<size_t>(owned[i])] = static_cast<int>(i);
        in.accumulate_grad(permute_copy(*self.grad, inv));
    });
}

Var concat(std::span<const Var> xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = xs[0].shape();
    const size_t rank = s0.size();
    if (axis < 0) axis += static_cast<int>(rank);
    if (axis < 0 || static_cast<size_t>(axis) >= rank) throw ShapeError("concat: axis out of range");
    Shape rs = s0;
    rs[static_cast<size_t>(axis)] = 0;
    for (const Var& x : xs) {
        const Shape& s = x.shape();
        if (s.size() != rank) throw ShapeError("concat: rank mismatch");
        for (size_t i = 0; i < rank; ++i) {
            if (i != static_cast<size_t>(axis) && s[i] != s0[i]) throw ShapeError("concat: extent mismatch");
        }
        rs[static_cast<size_t>(axis)] += s[static_cast<size_t>(axis)];
    }
    int64_t outer = 1, inner = 1;
    for (size_t i = 0; i < static_cast<size_t>(axis); ++i) outer *= s0[i];
    for (size_t i = static_cast<size_t>(axis) + 1; i < rank; ++i) inner *= s0[i];

    Tensor out(rs);
    const int64_t out_row = rs[static_cast<size_t>(axis)] * inner;
    int64_t offset = 0;
    std::vector<NodePtr> inputs;
    std::vector<int64_t> spans;
    for (const Var& x : xs) {
        const int64_t span = x.shape()[static_cast<size_t>(axis)] * inner;
        for (int64_t o = 0; o < outer; ++o) {
            std::copy_n(x.value().data() + o * span, span, out.data() + o * out_row + offset);
        }
        offset += span;
        inputs.push_back(x.node());
        spans.push_back(span);
    }
    return make_op(std::move(out), "concat", std::move(inputs),
                   [outer, out_row, spans = std::move(spans)](Node& self) {
        const float* dy = self.grad->data();
        int64_t offset = 0;
        for (size_t k = 0; k < self.inputs.size(); ++k) {
            Node& in = *self.inputs[k];
            const int64_t span = spans[k];
            if (in.requires_grad) {
                Tensor dx(in.value.shape());
                for (int64_t o = 0; o < outer; ++o) {
                    std::copy_n(dy + o * out_row + offset, span, dx.data() + o * span);
                }
                in.accumulate_grad(dx);
            }
            offset += span;
        }
    });
}

Var slice(const Var& x, int axis, int64_t begin, int64_t end) {
    const Shape& s = x.shape();
    const size_t rank = s.size();
    if (axis < 0) axis += static_cast<int>(rank);
    if (axis < 0 || static_cast<size_t>(axis) >= rank) throw ShapeError("slice: axis out of range");
    const int64_t extent = s[static_cast<size_t>(axis)];
    if (begin < 0 || end > extent || begin >= end) throw ShapeError("slice: bad range");
    int64_t outer = 1, inner = 1;
    for (size_t i = 0; i < static_cast<size_t>(axis); ++i) outer *= s[i];
    for (size_t i = static_cast<size_t>(axis) + 1; i < rank; ++i) inner *= s[i];
    Shape rs = s;
    rs[static_cast<size_t>(axis)] = end - begin;
    Tensor out(rs);
    const int64_t in_row = extent * inner;
    const int64_t out_row = (end - begin) * inner;
    for (int64_t o = 0; o < outer; ++o) {
        std::copy_n(x.value().data() + o * in_row + begin * inner, out_row, out.data() + o * out_row);
    }
    return make_op(std::move(out), "slice", {x.node()},
                   [outer, in_row, out_row, begin, inner](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        Tensor dx(in.value.shape());
        const float* dy = self.grad->data();
        for (int64_t o = 0; o < outer; ++o) {
            std::copy_n(dy + o * out_row, out_row, dx.data() + o * in_row + begin * inner);
        }
        in.accumulate_grad(dx);
    });
}

// --- reductions -----------------------------------------------------------------

Var reduce_sum_last(const Var& x) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw ShapeError("reduce_sum_last: rank must be >= 2");
    const int64_t d = s.back();
    const int64_t rows = x.value().size() / d;
    Shape rs(s.begin(), s.end() - 1);
    Tensor out(rs);
    for (int64_t r = 0; r < rows; ++r) {
        out.at(r) = static_cast<float>(sum_f64({x.value().data() + r * d, static_cast<size_t>(d)}));
    }
    return make_op(std::move(out), "reduce_sum_last", {x.node()}, [d, rows](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        Tensor dx(in.value.shape());
        const float* dy = self.grad->data();
        for (int64_t r = 0; r < rows; ++r) {
            std::fill_n(dx.data() + r * d, d, dy[r]);
        }
        in.accumulate_grad(dx);
    });
}

Var reduce_sum_all(const Var& x) {
    Tensor out({1});
    out.at(0) = static_cast<float>(sum_f64({x.value().data(), static_cast<size_t>(x.value().size())}));
    return make_op(std::move(out), "reduce_sum_all", {x.node()}, [](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        Tensor dx(in.value.shape(), self.grad->at(0));
        in.accumulate_grad(dx);
    });
}

Var reduce_mean_all(const Var& x) {
    const double n = static_cast<double>(x.value().size());
    Tensor out({1});
    out.at(0) = static_cast<float>(sum_f64({x.value().data(), static_cast<size_t>(x.value().size())}) / n);
    return make_op(std::move(out), "reduce_mean_all", {x.node()}, [n](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        Tensor dx(in.value.shape(), static_cast<float>(static_cast<double>(self.grad->at(0)) / n));
        in.accumulate_grad(dx);
    });
}

// --- cross entropy ----------------------------------------------------------------

Var cross_entropy(const Var& logits, std::span<const int64_t> targets) {
    const Shape& s = logits.shape();
    if (s.size() != 2) throw ShapeError("cross_entropy: logits must be [N,V]");
    const int64_t n = s[0], v = s[1];
    if (static_cast<int64_t>(targets.size()) != n) throw ShapeError("cross_entropy: target count mismatch");
    for (int64_t t : targets) {
        if (t < 0 || t >= v) throw ShapeError("cross_entropy: target id out of range");
    }
    Tensor out({n});
    Tensor probs({n, v});  // cached for backward
    for (int64_t r = 0; r < n; ++r) {
        const float* row = logits.value().data() + r * v;
        double mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double sum = 0.0;
        for (int64_t j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
        const double lse = mx + std::log(sum);
        out.at(r) = static_cast<float>(lse - static_cast<double>(row[targets[static_cast<size_t>(r)]]));
        float* p = probs.data() + r * v;
        for (int64_t j = 0; j < v; ++j) {
            p[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - lse));
        }
    }
    std::vector<int64_t> owned(targets.begin(), targets.end());
    return make_op(std::move(out), "cross_entropy", {logits.node()},
                   [owned = std::move(owned), probs = std::move(probs), v](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        Tensor dx(in.value.shape());
        const float* dy = self.grad->data();
        const int64_t n = static_cast<int64_t>(owned.size());
        for (int64_t r = 0; r < n; ++r) {
            const float g = dy[r];
            const float* p = probs.data() + r * v;
            float* o = dx.data() + r * v;
            for (int64_t j = 0; j < v; ++j) o[j] = g * p[j];
            o[owned[static_cast<size_t>(r)]] -= g;
        }
        in.accumulate_grad(dx);
    });
}

// --- backward sweep ----------------------------------------------------------------

void backward(const Var& loss) {
    if (!loss.valid()) throw std::logic_error("backward on empty Var");
    if (loss.value().size() != 1) throw ShapeError("backward: loss must be scalar");
    if (!loss.requires_grad()) return;  // nothing trainable reachable

    // Collect the reachable grad-bearing subgraph.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{loss.node().get()};
    while (!stack.empty()) {
        Node* cur = stack.back();
        stack.pop_back();
        if (!cur->requires_grad || !seen.insert(cur).second) continue;
        order.push_back(cur);
        for (const auto& in : cur->inputs) stack.push_back(in.get());
    }
    // Creation order is a topological order; walk it in reverse.
    std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

    loss.node()->ensure_grad().at(0) = 1.0f;
    for (Node* node : order) {
        if (node->backprop && node->grad) node->backprop(*node);
    }
}

double finite_diff_check(const std::function<double(std::span<const float>)>& value_fn,
                         const std::function<std::vector<float>(std::span<const float>)>& grad_fn,
                         std::span<const float> point,
                         double epsilon) {
    if (epsilon < 1e-5 || epsilon > 1e-2) {
        throw std::invalid_argument("finite_diff_check: epsilon must lie in [1e-5, 1e-2]");
    }
    std::vector<float> p(point.begin(), point.end());
    const std::vector<float> analytic = grad_fn(p);
    if (analytic.size() != p.size()) throw ShapeError("finite_diff_check: gradient length mismatch");

    double max_err = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const float orig = p[i];
        const double h = epsilon * std::max(1.0, std::abs(static_cast<double>(orig)));
        const float hi = static_cast<float>(static_cast<double>(orig) + h);
        const float lo = static_cast<float>(static_cast<double>(orig) - h);
        p[i] = hi;
        const double fp = value_fn(p);
        p[i] = lo;
        const double fm = value_fn(p);
        p[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericsError("finite_diff_check: non-finite function value near point");
        }
        const double fd = (fp - fm) / (static_cast<double>(hi) - static_cast<double>(lo));
        const double a = analytic[i];
        const double err = std::abs(a - fd) / std::max(1.0, std::abs(a));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace gptx::ad
