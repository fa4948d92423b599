#include "gptx/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace gptx {

namespace {

// Softmax over the K visual logits in float64; returns probabilities.
std::vector<double> visual_probs(const float* logits, int64_t k, double temperature) {
    std::vector<double> p(static_cast<size_t>(k));
    double mx = -1e300;
    for (int64_t j = 0; j < k; ++j) {
        p[static_cast<size_t>(j)] = static_cast<double>(logits[j]) / temperature;
        mx = std::max(mx, p[static_cast<size_t>(j)]);
    }
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j) {
        p[static_cast<size_t>(j)] = std::exp(p[static_cast<size_t>(j)] - mx);
        sum += p[static_cast<size_t>(j)];
    }
    for (int64_t j = 0; j < k; ++j) p[static_cast<size_t>(j)] /= sum;
    return p;
}

int64_t argmax_token(const float* logits, int64_t k) {
    int64_t best = 0;
    for (int64_t j = 1; j < k; ++j) {
        if (logits[j] > logits[best]) best = j;
    }
    return best;
}

int64_t draw_categorical(const std::vector<double>& probs, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double u = uni(rng);
    double cum = 0.0;
    for (size_t j = 0; j < probs.size(); ++j) {
        cum += probs[j];
        if (u < cum) return static_cast<int64_t>(j);
    }
    return static_cast<int64_t>(probs.size()) - 1;
}

}  // namespace

ScheduleShape parse_schedule_shape(std::string_view s) {
    if (s == "cosine") return ScheduleShape::Cosine;
    if (s == "uniform") return ScheduleShape::Uniform;
    throw std::invalid_argument("unknown schedule '" + std::string(s) + "' (expected cosine|uniform)");
}

int64_t DecodeSchedule::total() const {
    return std::accumulate(tokens_per_step.begin(), tokens_per_step.end(), int64_t{0});
}

void DecodeSchedule::validate(int64_t hw) const {
    if (steps != static_cast<int64_t>(tokens_per_step.size())) {
        throw std::invalid_argument("schedule step count mismatch");
    }
    for (int64_t n : tokens_per_step) {
        if (n < 1) throw std::invalid_argument("schedule entries must be >= 1");
    }
    if (total() != hw) {
        throw std::invalid_argument("schedule must finalize exactly " + std::to_string(hw) + " tokens");
    }
}

DecodeSchedule make_schedule(int64_t steps, int64_t h, int64_t w, ScheduleShape shape) {
    const int64_t hw = h * w;
    if (steps < 1 || steps > hw) throw std::invalid_argument("schedule steps must lie in [1, H*W]");

    DecodeSchedule sched;
    sched.steps = steps;
    sched.tokens_per_step.assign(static_cast<size_t>(steps), 0);

    if (shape == ScheduleShape::Uniform) {
        const int64_t base = hw / steps;
        const int64_t rem = hw % steps;
        for (int64_t t = 0; t < steps; ++t) {
            sched.tokens_per_step[static_cast<size_t>(t)] = base + (t >= steps - rem ? 1 : 0);
        }
        return sched;
    }

    // remaining mask fraction after step t is cos(pi*t/(2T))
    std::vector<double> want(static_cast<size_t>(steps));
    double prev = static_cast<double>(hw);
    for (int64_t t = 1; t <= steps; ++t) {
        const double cur = t == steps ? 0.0
                                      : static_cast<double>(hw) *
                                            std::cos(std::numbers::pi * static_cast<double>(t) /
                                                     (2.0 * static_cast<double>(steps)));
        want[static_cast<size_t>(t - 1)] = prev - cur;
        prev = cur;
    }
    // largest-remainder rounding so the counts sum exactly
    int64_t assigned = 0;
    std::vector<std::pair<double, int64_t>> rema;
    for (int64_t t = 0; t < steps; ++t) {
        const double f = std::floor(want[static_cast<size_t>(t)]);
        sched.tokens_per_step[static_cast<size_t>(t)] = static_cast<int64_t>(f);
        assigned += static_cast<int64_t>(f);
        rema.push_back({want[static_cast<size_t>(t)] - f, t});
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second > b.second;  // ties favor later steps (keeps counts nondecreasing)
    });
    for (int64_t i = 0; i < hw - assigned; ++i) {
        sched.tokens_per_step[static_cast<size_t>(rema[static_cast<size_t>(i)].second)] += 1;
    }
    // every step must finalize something: steal from the last-largest entry
    for (int64_t t = 0; t < steps; ++t) {
        while (sched.tokens_per_step[static_cast<size_t>(t)] == 0) {
            int64_t donor = -1;
            int64_t donor_n = 1;
            for (int64_t u = 0; u < steps; ++u) {
                if (sched.tokens_per_step[static_cast<size_t>(u)] >= donor_n) {
                    donor = u;
                    donor_n = sched.tokens_per_step[static_cast<size_t>(u)];
                }
            }
            sched.tokens_per_step[static_cast<size_t>(donor)] -= 1;
            sched.tokens_per_step[static_cast<size_t>(t)] += 1;
        }
    }
    sched.validate(hw);
    return sched;
}

PromptSource constant_prompt(Tensor prompt) {
    return [prompt = std::move(prompt)](int64_t) { return prompt; };
}

PromptSource marquee_source(const PromptGenerator& gen, const MarqueeSpec& spec) {
    if (spec.t_cutoff < 2) throw std::invalid_argument("marquee t_cutoff must be >= 2");
    return [&gen, spec](int64_t step) {
        return gen.marquee_prompt(spec.cond1, spec.cond2, step, spec.t_cutoff, spec.token_level);
    };
}

NarDecodeResult decode_nar(const TransformerModel& model, const PromptSource& prompt_source,
                           const DecodeSchedule& schedule, std::mt19937_64& rng,
                           double temperature, bool record_steps) {
    if (model.config().kind != ModelKind::NAR) throw std::logic_error("decode_nar requires a NAR model");
    if (temperature < 0.0) throw std::invalid_argument("temperature must be >= 0");
    const int64_t hw = model.config().positions();
    const int64_t k = model.config().codebook_size;
    const int64_t mask_id = model.config().mask_token_id();
    schedule.validate(hw);

    NarDecodeResult res;
    res.grid.h = model.config().grid_h;
    res.grid.w = model.config().grid_w;
    res.grid.tokens.assign(static_cast<size_t>(hw), mask_id);
    res.finalized_step.assign(static_cast<size_t>(hw), 0);
    res.per_step_counts.assign(static_cast<size_t>(schedule.steps), 0);

    std::vector<bool> masked(static_cast<size_t>(hw), true);
    struct Candidate {
        int64_t pos;
        int64_t token;
        double confidence;
    };

    for (int64_t t = 1; t <= schedule.steps; ++t) {
        const Tensor prompt = prompt_source(t);
        const Tensor logits = model.nar_logits(res.grid.tokens, prompt);
        const int64_t v = model.config().vocab_size();

        std::vector<Candidate> cands;
        for (int64_t pos = 0; pos < hw; ++pos) {
            if (!masked[static_cast<size_t>(pos)]) continue;
            const float* row = logits.data() + pos * v;
            int64_t token;
            if (temperature == 0.0) {
                token = argmax_token(row, k);
            } else {
                token = draw_categorical(visual_probs(row, k, temperature), rng);
            }
            // confidence: the model's own probability of the sampled token
            const double conf = visual_probs(row, k, 1.0)[static_cast<size_t>(token)];
            cands.push_back({pos, token, conf});
        }
        const int64_t keep = schedule.tokens_per_step[static_cast<size_t>(t - 1)];
        std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
            if (a.confidence != b.confidence) return a.confidence > b.confidence;
            return a.pos < b.pos;
        });
        for (int64_t i = 0; i < keep; ++i) {
            const Candidate& c = cands[static_cast<size_t>(i)];
            res.grid.tokens[static_cast<size_t>(c.pos)] = c.token;
            masked[static_cast<size_t>(c.pos)] = false;
            res.finalized_step[static_cast<size_t>(c.pos)] = t;
            res.per_step_counts[static_cast<size_t>(t - 1)] += 1;
        }
        if (record_steps) res.step_grids.push_back(res.grid.tokens);
    }
    return res;
}

TokenGrid decode_ar(const TransformerModel& model, const Tensor& prompt, std::mt19937_64& rng,
                    double temperature, int64_t top_k) {
    if (model.config().kind != ModelKind::AR) throw std::logic_error("decode_ar requires an AR model");
    if (temperature < 0.0) throw std::invalid_argument("temperature must be >= 0");
    const int64_t hw = model.config().positions();
    const int64_t k = model.config().codebook_size;
    if (top_k < 0 || top_k > k) throw std::invalid_argument("top_k must lie in [0, K]");

    TokenGrid grid;
    grid.h = model.config().grid_h;
    grid.w = model.config().grid_w;
    grid.tokens.reserve(static_cast<size_t>(hw));

    TransformerModel::ArStream stream(model, prompt);
    std::vector<float> row(static_cast<size_t>(k));
    for (int64_t pos = 0; pos < hw; ++pos) {
        std::copy_n(stream.logits().data(), k, row.data());
        if (top_k > 0 && top_k < k) {
            // keep the top_k visual logits, push the rest out of reach
            std::vector<int64_t> idx(static_cast<size_t>(k));
            for (int64_t j = 0; j < k; ++j) idx[static_cast<size_t>(j)] = j;
            std::sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
                if (row[static_cast<size_t>(a)] != row[static_cast<size_t>(b)]) {
                    return row[static_cast<size_t>(a)] > row[static_cast<size_t>(b)];
                }
                return a < b;
            });
            std::vector<float> trunc(static_cast<size_t>(k), -1e30f);
            for (int64_t j = 0; j < top_k; ++j) {
                trunc[static_cast<size_t>(idx[static_cast<size_t>(j)])] = row[static_cast<size_t>(idx[static_cast<size_t>(j)])];
            }
            row = std::move(trunc);
        }
        int64_t token;
        if (temperature == 0.0) {
            token = argmax_token(row.data(), k);
        } else {
            token = draw_categorical(visual_probs(row.data(), k, temperature), rng);
        }
        grid.tokens.push_back(token);
        if (pos + 1 < hw) stream.push(token, pos);
    }
    return grid;
}

}  // namespace gptx
