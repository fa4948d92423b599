#include "gptx/transformer.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace gptx {

namespace {

constexpr float kMaskedScore = -1e9f;
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr float kInitStd = 0.02f;

Tensor normal_init(Shape shape, std::mt19937_64& rng, float stddev = kInitStd) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> dist(0.0f, stddev);
    for (int64_t i = 0; i < t.size(); ++i) t.at(i) = dist(rng);
    return t;
}

// Row-wise layernorm identical to the tape op: float64 statistics, single
// rounding on store, epsilon added to the biased variance.
void ln_row(const float* in, int64_t d, float* out, double eps = 1e-5) {
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
    for (int64_t j = 0; j < d; ++j) {
        out[j] = static_cast<float>((static_cast<double>(in[j]) - mean) * inv);
    }
}

float gelu_scalar(float x) {
    const double v = x;
    return static_cast<float>(v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)));
}

}  // namespace

ModelKind parse_model_kind(std::string_view s) {
    if (s == "ar") return ModelKind::AR;
    if (s == "nar") return ModelKind::NAR;
    throw std::invalid_argument("unknown model kind '" + std::string(s) + "' (expected ar|nar)");
}

std::string to_string(ModelKind kind) { return kind == ModelKind::AR ? "ar" : "nar"; }

int64_t ModelConfig::mask_token_id() const {
    if (!has_mask_token()) throw std::logic_error("AR models carry no mask token");
    return codebook_size;
}

int64_t ModelConfig::class_token_id(int64_t source_class) const {
    if (source_class < 0 || source_class >= source_classes) {
        throw std::out_of_range("source class out of range");
    }
    return codebook_size + (has_mask_token() ? 1 : 0) + source_class;
}

int64_t ModelConfig::vocab_size() const {
    return codebook_size + (has_mask_token() ? 1 : 0) + source_classes;
}

void ModelConfig::validate() const {
    if (layers < 1 || heads < 1 || embed_dim < 1 || mlp_ratio < 1) {
        throw std::invalid_argument("model dims must be positive");
    }
    if (embed_dim % heads != 0) throw std::invalid_argument("embed_dim must be divisible by heads");
    if (codebook_size < 1 || grid_h < 1 || grid_w < 1) {
        throw std::invalid_argument("codebook/grid extents must be positive");
    }
    if (source_classes < 0 || adapter_hidden < 0) throw std::invalid_argument("negative config field");
}

TransformerModel::TransformerModel(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    const int64_t want_adapters = cfg_.adapter_hidden;
    cfg_.adapter_hidden = 0;

    std::mt19937_64 rng(seed);
    const int64_t d = cfg_.embed_dim;
    const int64_t v = cfg_.vocab_size();
    const int64_t hidden = d * cfg_.mlp_ratio;

    auto reg = [&](const std::string& name, Tensor t) {
        ad::Var var = ad::leaf(std::move(t), true, "param");
        params_.push_back({name, var, ParamGroup::Transformer});
        return var;
    };

    tok_embed_ = reg("tf.tok_embed", normal_init({v, d}, rng));
    pos_embed_ = reg("tf.pos_embed", normal_init({cfg_.positions(), d}, rng));
    layers_.resize(static_cast<size_t>(cfg_.layers));
    for (int64_t l = 0; l < cfg_.layers; ++l) {
        Layer& L = layers_[static_cast<size_t>(l)];
        const std::string p = "tf.layer" + std::to_string(l) + ".";
        L.ln1_g = reg(p + "ln1_g", Tensor({d}, 1.0f));
        L.ln1_b = reg(p + "ln1_b", Tensor({d}, 0.0f));
        L.wq = reg(p + "wq", normal_init({d, d}, rng));
        L.bq = reg(p + "bq", Tensor({d}, 0.0f));
        L.wk = reg(p + "wk", normal_init({d, d}, rng));
        L.bk = reg(p + "bk", Tensor({d}, 0.0f));
        L.wv = reg(p + "wv", normal_init({d, d}, rng));
        L.bv = reg(p + "bv", Tensor({d}, 0.0f));
        L.wo = reg(p + "wo", normal_init({d, d}, rng));
        L.bo = reg(p + "bo", Tensor({d}, 0.0f));
        L.ln2_g = reg(p + "ln2_g", Tensor({d}, 1.0f));
        L.ln2_b = reg(p + "ln2_b", Tensor({d}, 0.0f));
        L.fc1 = reg(p + "fc1", normal_init({d, hidden}, rng));
        L.fc1_b = reg(p + "fc1_b", Tensor({hidden}, 0.0f));
        L.fc2 = reg(p + "fc2", normal_init({hidden, d}, rng));
        L.fc2_b = reg(p + "fc2_b", Tensor({d}, 0.0f));
    }
    lnf_g_ = reg("tf.lnf_g", Tensor({d}, 1.0f));
    lnf_b_ = reg("tf.lnf_b", Tensor({d}, 0.0f));
    head_w_ = reg("tf.head_w", normal_init({d, v}, rng));
    head_b_ = reg("tf.head_b", Tensor({v}, 0.0f));

    if (want_adapters > 0) attach_adapters(want_adapters, seed + 1);
}

void TransformerModel::attach_adapters(int64_t hidden_units, uint64_t seed) {
    if (has_adapters()) throw std::logic_error("adapters already attached");
    if (hidden_units < 1) throw std::invalid_argument("adapter hidden units must be >= 1");

    std::mt19937_64 rng(seed);
    const int64_t d = cfg_.embed_dim;
    auto reg = [&](const std::string& name, Tensor t) {
        ad::Var var = ad::leaf(std::move(t), true, "adapter");
        params_.push_back({name, var, ParamGroup::Adapter});
        return var;
    };
    for (int64_t l = 0; l < cfg_.layers; ++l) {
        Layer& L = layers_[static_cast<size_t>(l)];
        const std::string p = "tf.layer" + std::to_string(l) + ".";
        L.ad1_down = reg(p + "ad1_down", normal_init({d, hidden_units}, rng));
        L.ad1_down_b = reg(p + "ad1_down_b", Tensor({hidden_units}, 0.0f));
        L.ad1_up = reg(p + "ad1_up", Tensor({hidden_units, d}, 0.0f));
        L.ad1_up_b = reg(p + "ad1_up_b", Tensor({d}, 0.0f));
        L.ad2_down = reg(p + "ad2_down", normal_init({d, hidden_units}, rng));
        L.ad2_down_b = reg(p + "ad2_down_b", Tensor({hidden_units}, 0.0f));
        L.ad2_up = reg(p + "ad2_up", Tensor({hidden_units, d}, 0.0f));
        L.ad2_up_b = reg(p + "ad2_up_b", Tensor({d}, 0.0f));
    }
    cfg_.adapter_hidden = hidden_units;
}

int64_t TransformerModel::adapter_param_count() const {
    int64_t n = 0;
    for (const NamedParam& p : params_) {
        if (p.group == ParamGroup::Adapter) n += p.var.value().size();
    }
    return n;
}

NamedParam* TransformerModel::find(std::string_view name) {
    for (NamedParam& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

namespace {

ad::Var affine_ln(const ad::Var& x, const ad::Var& g, const ad::Var& b) {
    return ad::add(ad::mul(ad::layernorm(x), g), b);
}

ad::Var adapter_apply(const ad::Var& y, const ad::Var& down, const ad::Var& down_b,
                      const ad::Var& up, const ad::Var& up_b) {
    ad::Var h = ad::gelu(ad::add(ad::matmul(y, down), down_b));
    return ad::add(y, ad::add(ad::matmul(h, up), up_b));
}

}  // namespace

ad::Var TransformerModel::block(const ad::Var& x, const Layer& L, const ad::Var* mask,
                                int64_t batch, int64_t seq) const {
    const int64_t d = cfg_.embed_dim;
    const int64_t heads = cfg_.heads;
    const int64_t hd = d / heads;
    const float att_scale = 1.0f / std::sqrt(static_cast<float>(hd));
    const std::vector<int> to_heads{0, 2, 1, 3};

    auto split_heads = [&](const ad::Var& y) {
        return ad::transpose(ad::reshape(y, {batch, seq, heads, hd}), to_heads);  // [B,H,T,hd]
    };

    ad::Var h = affine_ln(x, L.ln1_g, L.ln1_b);
    ad::Var flat = ad::reshape(h, {batch * seq, d});
    ad::Var q = split_heads(ad::add(ad::matmul(flat, L.wq), L.bq));
    ad::Var k = split_heads(ad::add(ad::matmul(flat, L.wk), L.bk));
    ad::Var v = split_heads(ad::add(ad::matmul(flat, L.wv), L.bv));

    const std::vector<int> kt_perm{0, 1, 3, 2};
    ad::Var scores = ad::scale(ad::matmul(q, ad::transpose(k, kt_perm)), att_scale);
    if (mask) scores = ad::add(scores, *mask);
    ad::Var att = ad::softmax(scores);
    ad::Var ctx = ad::matmul(att, v);                     // [B,H,T,hd]
    ctx = ad::transpose(ctx, to_heads);                   // [B,T,H,hd]
    ad::Var attn_out = ad::add(ad::matmul(ad::reshape(ctx, {batch * seq, d}), L.wo), L.bo);
    if (has_adapters()) {
        attn_out = adapter_apply(attn_out, L.ad1_down, L.ad1_down_b, L.ad1_up, L.ad1_up_b);
    }
    ad::Var x1 = ad::add(x, ad::reshape(attn_out, {batch, seq, d}));

    ad::Var h2 = ad::reshape(affine_ln(x1, L.ln2_g, L.ln2_b), {batch * seq, d});
    ad::Var m = ad::gelu(ad::add(ad::matmul(h2, L.fc1), L.fc1_b));
    m = ad::add(ad::matmul(m, L.fc2), L.fc2_b);
    if (has_adapters()) {
        m = adapter_apply(m, L.ad2_down, L.ad2_down_b, L.ad2_up, L.ad2_up_b);
    }
    return ad::add(x1, ad::reshape(m, {batch, seq, d}));
}

ad::Var TransformerModel::sequence_logits(const ad::Var& cond, std::span<const int64_t> tokens,
                                          int64_t batch, int64_t vis_len) const {
    const int64_t d = cfg_.embed_dim;
    const int64_t v = cfg_.vocab_size();
    const int64_t hw = cfg_.positions();
    if (cond.shape().size() != 3 || cond.shape()[0] != batch || cond.shape()[2] != d) {
        throw ShapeError("condition must be [batch, S, embed_dim]");
    }
    const int64_t s = cond.shape()[1];
    if (s < 1) throw ShapeError("condition/prompt length must be >= 1");
    if (cfg_.kind == ModelKind::NAR) {
        if (vis_len != hw) throw ShapeError("NAR forward requires all grid positions");
    } else {
        if (vis_len < 0 || vis_len > hw) throw ShapeError("AR prefix too long");
    }
    if (static_cast<int64_t>(tokens.size()) != batch * vis_len) {
        throw ShapeError("token buffer does not match batch * vis_len");
    }
    for (int64_t id : tokens) {
        if (id < 0 || id >= v) throw std::out_of_range("token id " + std::to_string(id) + " out of vocab");
    }

    ad::Var x = cond;
    if (vis_len > 0) {
        ad::Var vis = ad::gather_rows(tok_embed_, tokens);       // [B*vis, D]
        vis = ad::reshape(vis, {batch, vis_len, d});
        ad::Var pos = vis_len == hw ? pos_embed_ : ad::slice(pos_embed_, 0, 0, vis_len);
        vis = ad::add(vis, pos);
        const ad::Var parts[] = {cond, vis};
        x = ad::concat(parts, 1);                                 // [B, S+vis, D]
    }
    const int64_t seq = s + vis_len;

    ad::Var mask;
    if (cfg_.kind == ModelKind::AR) {
        Tensor m({1, 1, seq, seq});
        for (int64_t i = 0; i < seq; ++i) {
            for (int64_t j = i + 1; j < seq; ++j) m.at(i * seq + j) = kMaskedScore;
        }
        mask = ad::constant(std::move(m));
    }

    for (const Layer& layer : layers_) {
        x = block(x, layer, cfg_.kind == ModelKind::AR ? &mask : nullptr, batch, seq);
    }
    x = affine_ln(x, lnf_g_, lnf_b_);
    ad::Var logits = ad::add(ad::matmul(ad::reshape(x, {batch * seq, d}), head_w_), head_b_);
    return ad::reshape(logits, {batch, seq, v});
}

ad::Var TransformerModel::training_logits(const ad::Var& cond, std::span<const int64_t> tokens,
                                          int64_t batch) const {
    const int64_t hw = cfg_.positions();
    const int64_t s = cond.shape()[1];
    ad::Var seq = sequence_logits(cond, tokens, batch, hw);
    if (cfg_.kind == ModelKind::AR) {
        return ad::slice(seq, 1, s - 1, s - 1 + hw);  // row i predicts z_{i+1}
    }
    return ad::slice(seq, 1, s, s + hw);
}

Tensor TransformerModel::ar_logits(std::span<const int64_t> prefix, const Tensor& prompt) const {
    if (cfg_.kind != ModelKind::AR) throw std::logic_error("ar_logits requires an AR model");
    if (static_cast<int64_t>(prefix.size()) >= cfg_.positions()) throw ShapeError("AR prefix too long");
    if (prompt.ndim() != 2 || prompt.dim(1) != cfg_.embed_dim) throw ShapeError("prompt must be [S, D]");
    ad::Var cond = ad::constant(Tensor({1, prompt.dim(0), prompt.dim(1)}, prompt.vec()));
    const int64_t s = prompt.dim(0);
    const int64_t p = static_cast<int64_t>(prefix.size());
    ad::Var seq = sequence_logits(cond, prefix, 1, p);
    ad::Var rows = ad::slice(seq, 1, s - 1, s + p);  // (p+1) predictive rows
    return Tensor({p + 1, cfg_.vocab_size()}, rows.value().vec());
}

Tensor TransformerModel::nar_logits(std::span<const int64_t> tokens_with_mask, const Tensor& prompt) const {
    if (cfg_.kind != ModelKind::NAR) throw std::logic_error("nar_logits requires a NAR model");
    if (prompt.ndim() != 2 || prompt.dim(1) != cfg_.embed_dim) throw ShapeError("prompt must be [S, D]");
    ad::Var cond = ad::constant(Tensor({1, prompt.dim(0), prompt.dim(1)}, prompt.vec()));
    const int64_t s = prompt.dim(0);
    const int64_t hw = cfg_.positions();
    ad::Var seq = sequence_logits(cond, tokens_with_mask, 1, hw);
    ad::Var rows = ad::slice(seq, 1, s, s + hw);
    return Tensor({hw, cfg_.vocab_size()}, rows.value().vec());
}

// --- incremental AR evaluation ---------------------------------------------------

TransformerModel::ArStream::ArStream(const TransformerModel& model, const Tensor& prompt)
    : model_(model) {
    if (model.cfg_.kind != ModelKind::AR) throw std::logic_error("ArStream requires an AR model");
    if (prompt.ndim() != 2 || prompt.dim(1) != model.cfg_.embed_dim || prompt.dim(0) < 1) {
        throw ShapeError("prompt must be [S>=1, D]");
    }
    k_cache_.resize(static_cast<size_t>(model.cfg_.layers));
    v_cache_.resize(static_cast<size_t>(model.cfg_.layers));
    const int64_t d = model.cfg_.embed_dim;
    for (int64_t r = 0; r < prompt.dim(0); ++r) {
        std::vector<float> row(prompt.data() + r * d, prompt.data() + (r + 1) * d);
        feed_row(std::move(row));
    }
}

void TransformerModel::ArStream::push(int64_t token_id, int64_t pos) {
    const ModelConfig& cfg = model_.cfg_;
    if (token_id < 0 || token_id >= cfg.vocab_size()) throw std::out_of_range("token id out of vocab");
    if (pos < 0 || pos >= cfg.positions()) throw std::out_of_range("grid position out of range");
    const int64_t d = cfg.embed_dim;
    std::vector<float> row(static_cast<size_t>(d));
    const float* e = model_.tok_embed_.value().data() + token_id * d;
    const float* p = model_.pos_embed_.value().data() + pos * d;
    for (int64_t j = 0; j < d; ++j) row[static_cast<size_t>(j)] = e[j] + p[j];
    feed_row(std::move(row));
}

void TransformerModel::ArStream::feed_row(std::vector<float> x) {
    const ModelConfig& cfg = model_.cfg_;
    const int64_t d = cfg.embed_dim;
    const int64_t heads = cfg.heads;
    const int64_t hd = d / heads;
    const float att_scale = 1.0f / std::sqrt(static_cast<float>(hd));
    const int64_t t = fed_;  // rows already cached

    std::vector<float> h(static_cast<size_t>(d)), q(static_cast<size_t>(d)),
        kv(static_cast<size_t>(d)), ctx(static_cast<size_t>(d)), tmp;

    auto dense = [&](const std::vector<float>& in, const ad::Var& w, const ad::Var& b,
                     std::vector<float>& out) {
        const int64_t n = w.value().dim(1);
        out.assign(static_cast<size_t>(n), 0.0f);
        gemm_nn(in.data(), w.value().data(), out.data(), 1, w.value().dim(0), n);
        const float* bias = b.value().data();
        for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j)] += bias[j];
    };
    auto adapter = [&](std::vector<float>& y, const ad::Var& down, const ad::Var& down_b,
                       const ad::Var& up, const ad::Var& up_b) {
        std::vector<float> mid;
        dense(y, down, down_b, mid);
        for (float& m : mid) m = gelu_scalar(m);
        std::vector<float> delta;
        dense(mid, up, up_b, delta);
        for (size_t j = 0; j < y.size(); ++j) y[j] += delta[j];
    };

    for (size_t l = 0; l < model_.layers_.size(); ++l) {
        const Layer& L = model_.layers_[l];
        ln_row(x.data(), d, h.data());
        for (int64_t j = 0; j < d; ++j) {
            h[static_cast<size_t>(j)] = h[static_cast<size_t>(j)] * L.ln1_g.value().at(j);
            h[static_cast<size_t>(j)] = h[static_cast<size_t>(j)] + L.ln1_b.value().at(j);
        }
        dense(h, L.wq, L.bq, q);
        dense(h, L.wk, L.bk, kv);
        k_cache_[l].insert(k_cache_[l].end(), kv.begin(), kv.end());
        dense(h, L.wv, L.bv, kv);
        v_cache_[l].insert(v_cache_[l].end(), kv.begin(), kv.end());

        for (int64_t head = 0; head < heads; ++head) {
            const float* qh = q.data() + head * hd;
            // causal attention over the t+1 cached rows
            std::vector<double> sc(static_cast<size_t>(t + 1));
            double mx = -1e300;
            for (int64_t i = 0; i <= t; ++i) {
                const float* kh = k_cache_[l].data() + i * d + head * hd;
                double acc = 0.0;
                for (int64_t j = 0; j < hd; ++j) {
                    acc = std::fma(static_cast<double>(qh[j]), static_cast<double>(kh[j]), acc);
                }
                float s = static_cast<float>(acc);
                s = s * att_scale;
                sc[static_cast<size_t>(i)] = s;
                mx = std::max(mx, static_cast<double>(s));
            }
            double denom = 0.0;
            for (int64_t i = 0; i <= t; ++i) {
                sc[static_cast<size_t>(i)] = std::exp(sc[static_cast<size_t>(i)] - mx);
                denom += sc[static_cast<size_t>(i)];
            }
            std::vector<double> acc(static_cast<size_t>(hd), 0.0);
            for (int64_t i = 0; i <= t; ++i) {
                const float att = static_cast<float>(sc[static_cast<size_t>(i)] / denom);
                const float* vh = v_cache_[l].data() + i * d + head * hd;
                for (int64_t j = 0; j < hd; ++j) {
                    acc[static_cast<size_t>(j)] =
                        std::fma(static_cast<double>(att), static_cast<double>(vh[j]), acc[static_cast<size_t>(j)]);
                }
            }
            for (int64_t j = 0; j < hd; ++j) ctx[static_cast<size_t>(head * hd + j)] = static_cast<float>(acc[static_cast<size_t>(j)]);
        }
        std::vector<float> attn_out;
        dense(ctx, L.wo, L.bo, attn_out);
        if (model_.has_adapters()) adapter(attn_out, L.ad1_down, L.ad1_down_b, L.ad1_up, L.ad1_up_b);
        for (int64_t j = 0; j < d; ++j) x[static_cast<size_t>(j)] += attn_out[static_cast<size_t>(j)];

        ln_row(x.data(), d, h.data());
        for (int64_t j = 0; j < d; ++j) {
            h[static_cast<size_t>(j)] = h[static_cast<size_t>(j)] * L.ln2_g.value().at(j);
            h[static_cast<size_t>(j)] = h[static_cast<size_t>(j)] + L.ln2_b.value().at(j);
        }
        dense(h, L.fc1, L.fc1_b, tmp);
        for (float& m : tmp) m = gelu_scalar(m);
        std::vector<float> mlp_out;
        dense(tmp, L.fc2, L.fc2_b, mlp_out);
        if (model_.has_adapters()) adapter(mlp_out, L.ad2_down, L.ad2_down_b, L.ad2_up, L.ad2_up_b);
        for (int64_t j = 0; j < d; ++j) x[static_cast<size_t>(j)] += mlp_out[static_cast<size_t>(j)];
    }

    ln_row(x.data(), d, h.data());
    for (int64_t j = 0; j < d; ++j) {
        h[static_cast<size_t>(j)] = h[static_cast<size_t>(j)] * model_.lnf_g_.value().at(j);
        h[static_cast<size_t>(j)] = h[static_cast<size_t>(j)] + model_.lnf_b_.value().at(j);
    }
    dense(h, model_.head_w_, model_.head_b_, logits_);
    ++fed_;
}

// --- partition ----------------------------------------------------------------------

TuneMode parse_tune_mode(std::string_view s) {
    if (s == "prompt") return TuneMode::Prompt;
    if (s == "adapter") return TuneMode::Adapter;
    if (s == "finetune") return TuneMode::Finetune;
    if (s == "scratch") return TuneMode::Scratch;
    throw std::invalid_argument("unknown mode '" + std::string(s) +
                                "' (expected prompt|adapter|finetune|scratch)");
}

std::string to_string(TuneMode mode) {
    switch (mode) {
        case TuneMode::Prompt: return "prompt";
        case TuneMode::Adapter: return "adapter";
        case TuneMode::Finetune: return "finetune";
        case TuneMode::Scratch: return "scratch";
    }
    return "?";
}

PartitionReport param_partition(TransformerModel& model, std::span<NamedParam> prompt_params,
                                TuneMode mode) {
    PartitionReport report;
    auto apply = [&](NamedParam& p, bool trainable) {
        p.var.set_requires_grad(trainable);
        if (trainable) {
            report.trainable_count += p.var.value().size();
            report.trainable_names.push_back(p.name);
        } else {
            report.frozen_count += p.var.value().size();
            report.frozen_names.push_back(p.name);
        }
    };
    for (NamedParam& p : model.params()) {
        const bool trainable = mode == TuneMode::Finetune || mode == TuneMode::Scratch ||
                               (mode == TuneMode::Adapter && p.group == ParamGroup::Adapter);
        apply(p, trainable);
    }
    for (NamedParam& p : prompt_params) apply(p, true);  // prompts train in every mode
    return report;
}

}  // namespace gptx
