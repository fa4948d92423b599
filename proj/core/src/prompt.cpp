#include "gptx/prompt.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace gptx {

namespace {

Tensor normal_init(Shape shape, std::mt19937_64& rng, float stddev = 0.02f) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> dist(0.0f, stddev);
    for (int64_t i = 0; i < t.size(); ++i) t.at(i) = dist(rng);
    return t;
}

}  // namespace

PromptKind parse_prompt_kind(std::string_view s) {
    if (s == "baseline") return PromptKind::Baseline;
    if (s == "factorized") return PromptKind::Factorized;
    throw std::invalid_argument("unknown prompt kind '" + std::string(s) +
                                "' (expected baseline|factorized)");
}

std::string to_string(PromptKind kind) {
    return kind == PromptKind::Baseline ? "baseline" : "factorized";
}

void PromptConfig::validate() const {
    if (prompt_len < 1 || conditions < 1 || feature_dim < 1 || token_dim < 1) {
        throw std::invalid_argument("prompt config fields must be >= 1");
    }
    if (kind == PromptKind::Factorized && factors < 1) {
        throw std::invalid_argument("factorized generator needs factors >= 1");
    }
}

int64_t count_params(const PromptConfig& cfg) {
    cfg.validate();
    if (cfg.kind == PromptKind::Baseline) {
        return cfg.feature_dim * (cfg.conditions * cfg.prompt_len + cfg.token_dim);
    }
    return cfg.feature_dim * (cfg.factors * (cfg.conditions + cfg.prompt_len) + cfg.token_dim);
}

double marquee_weight(int64_t t, int64_t t_cutoff) {
    if (t < 1) throw std::invalid_argument("marquee_weight: step t must be >= 1");
    if (t_cutoff < 2) throw std::invalid_argument("marquee_weight: t_cutoff must be >= 2");
    const double x = static_cast<double>(t - 1) / static_cast<double>(t_cutoff - 1);
    return std::min(x * x, 1.0);
}

PromptGenerator::PromptGenerator(PromptConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const int64_t s = cfg_.prompt_len, c = cfg_.conditions, p = cfg_.feature_dim,
                  d = cfg_.token_dim, f = cfg_.factors;

    auto reg = [&](const std::string& name, Tensor t) {
        ad::Var var = ad::leaf(std::move(t), true, "prompt");
        params_.push_back({name, var, ParamGroup::Prompt});
        return var;
    };

    if (cfg_.kind == PromptKind::Factorized) {
        class_table_ = reg("pg.class_table", normal_init({c, p, f}, rng));
        pos_table_ = reg("pg.pos_table", normal_init({s, p, f}, rng));
        // all-ones start keeps gradients flowing through both tables
        factor_ = reg("pg.factor", Tensor({f}, 1.0f));
        ln_g_ = reg("pg.ln_g", Tensor({p}, 1.0f));
        ln_b_ = reg("pg.ln_b", Tensor({p}, 0.0f));
    } else {
        table_ = reg("pg.table", normal_init({c, s, p}, rng));
    }
    out_w_ = reg("pg.out_w", normal_init({p, d}, rng));
    out_b_ = reg("pg.out_b", Tensor({d}, 0.0f));
}

NamedParam* PromptGenerator::find(std::string_view name) {
    for (NamedParam& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

void PromptGenerator::check_condition(int64_t condition) const {
    if (condition < 0 || condition >= cfg_.conditions) {
        throw std::out_of_range("condition id " + std::to_string(condition) + " out of [0," +
                                std::to_string(cfg_.conditions) + ")");
    }
}

ad::Var PromptGenerator::forward_from_cls(const ad::Var& cls_pf) const {
    ad::Var summed = ad::add(pos_table_, cls_pf);        // [S,P,F]
    ad::Var scaled = ad::mul(summed, factor_);           // ⊙ factor vector
    ad::Var reduced = ad::reduce_sum_last(scaled);       // [S,P]
    ad::Var normed = ad::add(ad::mul(ad::layernorm(reduced), ln_g_), ln_b_);
    return ad::add(ad::matmul(normed, out_w_), out_b_);  // [S,D]
}

ad::Var PromptGenerator::forward_from_row(const ad::Var& row_sp) const {
    return ad::add(ad::matmul(row_sp, out_w_), out_b_);
}

ad::Var PromptGenerator::generate(int64_t condition) const {
    check_condition(condition);
    const int64_t ids[1] = {condition};
    if (cfg_.kind == PromptKind::Factorized) {
        return forward_from_cls(ad::gather_rows(class_table_, ids));  // [1,P,F] broadcast over S
    }
    ad::Var row = ad::reshape(ad::gather_rows(table_, ids), {cfg_.prompt_len, cfg_.feature_dim});
    return forward_from_row(row);
}

ad::Var PromptGenerator::generate_batch(std::span<const int64_t> conditions) const {
    if (conditions.empty()) throw std::invalid_argument("generate_batch: empty condition list");
    std::vector<ad::Var> rows;
    rows.reserve(conditions.size());
    for (int64_t c : conditions) {
        rows.push_back(ad::reshape(generate(c), {1, cfg_.prompt_len, cfg_.token_dim}));
    }
    return ad::concat(rows, 0);
}

Tensor PromptGenerator::generate_tensor(int64_t condition) const {
    return generate(condition).value();
}

Tensor PromptGenerator::representation(int64_t condition) const {
    if (cfg_.kind != PromptKind::Factorized) {
        throw std::logic_error("prompt representation requires the factorized generator");
    }
    check_condition(condition);
    const int64_t rowsz = cfg_.feature_dim * cfg_.factors;
    Tensor rep({cfg_.feature_dim, cfg_.factors});
    std::copy_n(class_table_.value().data() + condition * rowsz, rowsz, rep.data());
    return rep;
}

Tensor PromptGenerator::marquee_prompt(int64_t cond1, int64_t cond2, int64_t t, int64_t t_cutoff,
                                       bool token_level) const {
    check_condition(cond1);
    check_condition(cond2);
    const double w = marquee_weight(t, t_cutoff);
    // Exact endpoints: reuse the plain generation path so the outputs match
    // bit for bit at w = 0 and w = 1 (and whenever both conditions coincide).
    if (cond1 == cond2 || w == 0.0) return generate_tensor(cond1);
    if (w == 1.0) return generate_tensor(cond2);

    if (token_level) {
        Tensor a = generate_tensor(cond1);
        Tensor b = generate_tensor(cond2);
        Tensor out(a.shape());
        for (int64_t i = 0; i < out.size(); ++i) {
            out.at(i) = static_cast<float>((1.0 - w) * static_cast<double>(a.at(i)) +
                                           w * static_cast<double>(b.at(i)));
        }
        return out;
    }

    if (cfg_.kind == PromptKind::Factorized) {
        const int64_t rowsz = cfg_.feature_dim * cfg_.factors;
        Tensor mix({1, cfg_.feature_dim, cfg_.factors});
        const float* r1 = class_table_.value().data() + cond1 * rowsz;
        const float* r2 = class_table_.value().data() + cond2 * rowsz;
        for (int64_t i = 0; i < rowsz; ++i) {
            mix.at(i) = static_cast<float>((1.0 - w) * static_cast<double>(r1[i]) +
                                           w * static_cast<double>(r2[i]));
        }
        return forward_from_cls(ad::constant(std::move(mix))).value();
    }

    const int64_t rowsz = cfg_.prompt_len * cfg_.feature_dim;
    Tensor mix({cfg_.prompt_len, cfg_.feature_dim});
    const float* r1 = table_.value().data() + cond1 * rowsz;
    const float* r2 = table_.value().data() + cond2 * rowsz;
    for (int64_t i = 0; i < rowsz; ++i) {
        mix.at(i) = static_cast<float>((1.0 - w) * static_cast<double>(r1[i]) +
                                       w * static_cast<double>(r2[i]));
    }
    return forward_from_row(ad::constant(std::move(mix))).value();
}

int64_t PromptGenerator::total_param_count() const {
    int64_t n = 0;
    for (const NamedParam& p : params_) n += p.var.value().size();
    return n;
}

}  // namespace gptx
