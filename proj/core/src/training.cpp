#include "gptx/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>
#include <stdexcept>

namespace gptx {

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (warmup_epochs < 0) throw std::invalid_argument("warmup_epochs must be >= 0");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
    if (instance_sample_prob < 0.0 || instance_sample_prob > 1.0) {
        throw std::invalid_argument("instance_sample_prob must lie in [0,1]");
    }
}

MaskSet sample_mask(int64_t h, int64_t w, std::mt19937_64& rng) {
    const int64_t hw = h * w;
    if (hw < 1) throw std::invalid_argument("sample_mask: empty grid");
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double r = uni(rng);
    const double frac = std::cos(std::numbers::pi * r / 2.0);
    int64_t count = static_cast<int64_t>(std::ceil(frac * static_cast<double>(hw)));
    count = std::clamp<int64_t>(count, 1, hw);

    std::vector<int64_t> pool(static_cast<size_t>(hw));
    for (int64_t i = 0; i < hw; ++i) pool[static_cast<size_t>(i)] = i;
    for (int64_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<int64_t> pick(i, hw - 1);
        std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(pick(rng))]);
    }
    MaskSet mask;
    mask.positions.assign(pool.begin(), pool.begin() + count);
    std::sort(mask.positions.begin(), mask.positions.end());
    return mask;
}

int64_t sample_condition(int64_t class_label, std::optional<int64_t> instance_id,
                         int64_t n_classes, double instance_sample_prob, std::mt19937_64& rng) {
    if (instance_sample_prob < 0.0 || instance_sample_prob > 1.0) {
        throw std::invalid_argument("instance_sample_prob must lie in [0,1]");
    }
    if (instance_sample_prob > 0.0 && !instance_id.has_value()) {
        throw std::invalid_argument("instance conditioning requires an instance id");
    }
    if (instance_sample_prob == 0.0) return class_label;
    if (instance_sample_prob == 1.0) return n_classes + *instance_id;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    return uni(rng) < instance_sample_prob ? n_classes + *instance_id : class_label;
}

namespace {

std::vector<int64_t> flatten_grids(const TransformerModel& model, std::span<const TokenGrid> grids) {
    const int64_t hw = model.config().positions();
    std::vector<int64_t> tokens;
    tokens.reserve(grids.size() * static_cast<size_t>(hw));
    for (const TokenGrid& g : grids) {
        if (g.h != model.config().grid_h || g.w != model.config().grid_w) {
            throw ShapeError("token grid extents do not match the model");
        }
        tokens.insert(tokens.end(), g.tokens.begin(), g.tokens.end());
    }
    return tokens;
}

}  // namespace

ad::Var ar_loss_cond(const TransformerModel& model, const ad::Var& cond,
                     std::span<const int64_t> tokens, int64_t batch) {
    if (model.config().kind != ModelKind::AR) throw std::logic_error("ar_loss requires an AR model");
    ad::Var logits = model.training_logits(cond, tokens, batch);
    const int64_t hw = model.config().positions();
    const int64_t v = model.config().vocab_size();
    ad::Var ce = ad::cross_entropy(ad::reshape(logits, {batch * hw, v}), tokens);
    return ad::reduce_mean_all(ce);
}

ad::Var nar_loss_cond(const TransformerModel& model, const ad::Var& cond,
                      std::span<const int64_t> target_tokens, int64_t batch, std::mt19937_64& rng) {
    if (model.config().kind != ModelKind::NAR) throw std::logic_error("nar_loss requires a NAR model");
    const int64_t hw = model.config().positions();
    const int64_t v = model.config().vocab_size();
    const int64_t mask_id = model.config().mask_token_id();
    if (static_cast<int64_t>(target_tokens.size()) != batch * hw) {
        throw ShapeError("target token count does not match batch");
    }

    std::vector<int64_t> input(target_tokens.begin(), target_tokens.end());
    Tensor weights({batch * hw});
    int64_t total_masked = 0;
    for (int64_t b = 0; b < batch; ++b) {
        const MaskSet mask = sample_mask(model.config().grid_h, model.config().grid_w, rng);
        for (int64_t pos : mask.positions) {
            input[static_cast<size_t>(b * hw + pos)] = mask_id;
            weights.at(b * hw + pos) = 1.0f;
        }
        total_masked += static_cast<int64_t>(mask.positions.size());
    }

    ad::Var logits = model.training_logits(cond, input, batch);
    ad::Var ce = ad::cross_entropy(ad::reshape(logits, {batch * hw, v}), target_tokens);
    ad::Var weighted = ad::mul(ce, ad::constant(std::move(weights)));
    return ad::scale(ad::reduce_sum_all(weighted), 1.0f / static_cast<float>(total_masked));
}

ad::Var ar_loss(const TransformerModel& model, const PromptGenerator& gen,
                std::span<const TokenGrid> grids, std::span<const int64_t> condition_ids) {
    if (grids.size() != condition_ids.size()) throw ShapeError("batch/condition size mismatch");
    const std::vector<int64_t> tokens = flatten_grids(model, grids);
    ad::Var cond = gen.generate_batch(condition_ids);
    return ar_loss_cond(model, cond, tokens, static_cast<int64_t>(grids.size()));
}

ad::Var nar_loss(const TransformerModel& model, const PromptGenerator& gen,
                 std::span<const TokenGrid> grids, std::span<const int64_t> condition_ids,
                 std::mt19937_64& rng) {
    if (grids.size() != condition_ids.size()) throw ShapeError("batch/condition size mismatch");
    const std::vector<int64_t> tokens = flatten_grids(model, grids);
    ad::Var cond = gen.generate_batch(condition_ids);
    return nar_loss_cond(model, cond, tokens, static_cast<int64_t>(grids.size()), rng);
}

// --- optimizer -------------------------------------------------------------

Adam::Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::add_param(const ad::Var& param, double lr_scale, double weight_decay) {
    Slot slot{param, lr_scale, weight_decay, {}, {}};
    slot.m.assign(static_cast<size_t>(param.value().size()), 0.0);
    slot.v.assign(static_cast<size_t>(param.value().size()), 0.0);
    slots_.push_back(std::move(slot));
}

void Adam::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Slot& slot : slots_) {
        if (!slot.param.has_grad()) continue;
        const Tensor& g = slot.param.grad();
        Tensor& p = slot.param.mutable_value();
        const double lr_eff = lr * slot.lr_scale;
        const int64_t n = p.size();
        for (int64_t i = 0; i < n; ++i) {
            const double gi = g.at(i);
            double& m = slot.m[static_cast<size_t>(i)];
            double& v = slot.v[static_cast<size_t>(i)];
            m = beta1_ * m + (1.0 - beta1_) * gi;
            v = beta2_ * v + (1.0 - beta2_) * gi * gi;
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            double x = p.at(i);
            x -= lr_eff * (mhat / (std::sqrt(vhat) + eps_) + slot.weight_decay * x);
            p.at(i) = static_cast<float>(x);
        }
        p.check_finite("adam update");
    }
}

void Adam::zero_grad() {
    for (Slot& slot : slots_) slot.param.zero_grad();
}

double lr_at_step(double base_lr, int64_t step, int64_t total_steps, int64_t warmup_steps) {
    if (warmup_steps > 0 && step < warmup_steps) {
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    const int64_t span = std::max<int64_t>(1, total_steps - warmup_steps);
    const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(span);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::string TrainResult::metrics_text() const {
    std::string out;
    char line[96];
    for (const EpochLog& e : log) {
        std::snprintf(line, sizeof(line), "%lld,%.9g,%.9g\n", static_cast<long long>(e.epoch),
                      e.loss, e.lr);
        out += line;
    }
    return out;
}

uint64_t hash_tensor(const Tensor& t) {
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    const size_t len = static_cast<size_t>(t.size()) * sizeof(float);
    for (size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
    }
    return h;
}

TrainResult train_model(TransformerModel& model, PromptGenerator* gen, const TrainSet& data,
                        const TrainConfig& cfg) {
    cfg.validate();
    if (data.grids.empty()) throw std::invalid_argument("train_model: empty dataset");
    if (data.labels.size() != data.grids.size()) throw std::invalid_argument("label count mismatch");
    if (data.n_classes < 1) throw std::invalid_argument("n_classes must be >= 1");

    const int64_t n = static_cast<int64_t>(data.grids.size());
    const int64_t hw = model.config().positions();

    // Partition: pretraining trains the whole source model; transfer modes
    // split per param_partition.
    if (gen) {
        const int64_t needed =
            data.n_classes + (cfg.instance_conditioning ? n : 0);
        if (gen->config().conditions < needed) {
            throw std::invalid_argument("prompt generator has too few conditions for this dataset");
        }
        param_partition(model, gen->params(), cfg.mode);
    } else {
        for (NamedParam& p : model.params()) p.var.set_requires_grad(true);
    }

    // Frozen set + baseline hashes.
    std::vector<const NamedParam*> frozen;
    std::vector<uint64_t> frozen_hash;
    std::vector<ad::Var> trainable;
    auto collect = [&](std::vector<NamedParam>& ps) {
        for (NamedParam& p : ps) {
            if (p.var.requires_grad()) {
                trainable.push_back(p.var);
            } else {
                frozen.push_back(&p);
                frozen_hash.push_back(hash_tensor(p.var.value()));
            }
        }
    };
    collect(model.params());
    if (gen) collect(gen->params());

    Adam adam;
    const double pre_lr = cfg.pretrained_lr > 0.0 ? cfg.pretrained_lr : cfg.learning_rate;
    for (NamedParam& p : model.params()) {
        if (!p.var.requires_grad()) continue;
        const double lr_scale =
            (cfg.mode == TuneMode::Finetune && p.group == ParamGroup::Transformer)
                ? pre_lr / cfg.learning_rate
                : 1.0;
        adam.add_param(p.var, lr_scale, cfg.weight_decay);
    }
    if (gen) {
        for (NamedParam& p : gen->params()) {
            if (p.var.requires_grad()) adam.add_param(p.var, 1.0, cfg.weight_decay);
        }
    }

    const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;
    const int64_t warmup_steps = steps_per_epoch * cfg.warmup_epochs;

    std::mt19937_64 rng(cfg.seed);
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    auto snapshot = [&]() {
        std::vector<Tensor> snap;
        snap.reserve(trainable.size());
        for (const ad::Var& v : trainable) snap.push_back(v.value());
        return snap;
    };
    std::vector<Tensor> last_good = snapshot();

    TrainResult result;
    int64_t step = 0;
    double lr_now = cfg.learning_rate;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        bool aborted = false;
        for (int64_t start = 0; start < n; start += cfg.batch_size) {
            const int64_t bsz = std::min<int64_t>(cfg.batch_size, n - start);
            std::vector<int64_t> tokens;
            tokens.reserve(static_cast<size_t>(bsz * hw));
            std::vector<int64_t> cond_ids(static_cast<size_t>(bsz));
            for (int64_t b = 0; b < bsz; ++b) {
                const int64_t idx = order[static_cast<size_t>(start + b)];
                const TokenGrid& g = data.grids[static_cast<size_t>(idx)];
                tokens.insert(tokens.end(), g.tokens.begin(), g.tokens.end());
                const int64_t label = data.labels[static_cast<size_t>(idx)];
                if (gen) {
                    cond_ids[static_cast<size_t>(b)] =
                        cfg.instance_conditioning
                            ? sample_condition(label, idx, data.n_classes, cfg.instance_sample_prob, rng)
                            : label;
                } else {
                    cond_ids[static_cast<size_t>(b)] = model.config().class_token_id(label);
                }
            }

            lr_now = lr_at_step(cfg.learning_rate, step, total_steps, warmup_steps);
            try {
                ad::Var cond;
                if (gen) {
                    cond = gen->generate_batch(cond_ids);
                } else {
                    NamedParam* emb = model.find("tf.tok_embed");
                    cond = ad::reshape(ad::gather_rows(emb->var, cond_ids),
                                       {bsz, 1, model.config().embed_dim});
                }
                ad::Var loss = model.config().kind == ModelKind::AR
                                   ? ar_loss_cond(model, cond, tokens, bsz)
                                   : nar_loss_cond(model, cond, tokens, bsz, rng);
                epoch_loss += static_cast<double>(loss.value().at(0));
                ad::backward(loss);
                adam.step(lr_now);
                adam.zero_grad();
            } catch (const NumericsError&) {
                // divergence: roll back to the last finished epoch
                for (size_t i = 0; i < trainable.size(); ++i) trainable[i].assign_value(last_good[i]);
                result.diverged = true;
                aborted = true;
                break;
            }
            ++step;
        }
        if (aborted) break;

        for (size_t i = 0; i < frozen.size(); ++i) {
            if (hash_tensor(frozen[i]->var.value()) != frozen_hash[i]) {
                throw std::logic_error("frozen parameter changed during training: " + frozen[i]->name);
            }
        }
        const int64_t steps_this_epoch = std::min(steps_per_epoch, step - epoch * steps_per_epoch);
        result.log.push_back({epoch, epoch_loss / static_cast<double>(std::max<int64_t>(1, steps_this_epoch)), lr_now});
        last_good = snapshot();
    }
    result.steps = step;
    return result;
}

}  // namespace gptx
