#include "gptx/workbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "gptx/config.hpp"
#include "gptx/image_io.hpp"
#include "gptx/metrics.hpp"

namespace gptx {

// --- checkpoint bridging ----------------------------------------------------

Checkpoint bundle_to_checkpoint(const ModelBundle& bundle) {
    Checkpoint ckpt;
    const ModelConfig& mc = bundle.model->config();

    CheckpointTensor vq;
    vq.name = "vq.codewords";
    vq.shape = {bundle.codebook.k(), bundle.codebook.patch_elems()};
    vq.data = bundle.codebook.codewords;
    vq.trainable = false;
    ckpt.tensors.push_back(std::move(vq));

    auto push_params = [&](const std::vector<NamedParam>& params) {
        for (const NamedParam& p : params) {
            CheckpointTensor t;
            t.name = p.name;
            t.shape = p.var.value().shape();
            t.data = p.var.value().vec();
            t.trainable = p.var.requires_grad();
            ckpt.tensors.push_back(std::move(t));
        }
    };
    push_params(bundle.model->params());
    if (bundle.gen) push_params(bundle.gen->params());

    ckpt.set_meta("kind", to_string(mc.kind));
    ckpt.set_meta("layers", std::to_string(mc.layers));
    ckpt.set_meta("embed_dim", std::to_string(mc.embed_dim));
    ckpt.set_meta("heads", std::to_string(mc.heads));
    ckpt.set_meta("mlp_ratio", std::to_string(mc.mlp_ratio));
    ckpt.set_meta("codebook_size", std::to_string(mc.codebook_size));
    ckpt.set_meta("grid_h", std::to_string(mc.grid_h));
    ckpt.set_meta("grid_w", std::to_string(mc.grid_w));
    ckpt.set_meta("source_classes", std::to_string(mc.source_classes));
    ckpt.set_meta("adapter_hidden", std::to_string(mc.adapter_hidden));
    ckpt.set_meta("patch_h", std::to_string(bundle.codebook.patch_h));
    ckpt.set_meta("patch_w", std::to_string(bundle.codebook.patch_w));
    ckpt.set_meta("channels", std::to_string(bundle.codebook.channels));
    ckpt.set_meta("seed", std::to_string(bundle.seed));
    ckpt.set_meta("mode", bundle.mode);
    ckpt.set_meta("target_classes", std::to_string(bundle.target_classes));
    ckpt.set_meta("target_instances", std::to_string(bundle.target_instances));
    if (bundle.gen) {
        const PromptConfig& pc = bundle.gen->config();
        ckpt.set_meta("prompt_kind", to_string(pc.kind));
        ckpt.set_meta("prompt_len", std::to_string(pc.prompt_len));
        ckpt.set_meta("feature_dim", std::to_string(pc.feature_dim));
        ckpt.set_meta("factors", std::to_string(pc.factors));
        ckpt.set_meta("conditions", std::to_string(pc.conditions));
    }
    return ckpt;
}

ModelBundle bundle_from_checkpoint(const Checkpoint& ckpt) {
    ModelBundle bundle;
    ModelConfig mc;
    mc.kind = parse_model_kind(ckpt.meta("kind", "nar"));
    mc.layers = ckpt.meta_int("layers", 4);
    mc.embed_dim = ckpt.meta_int("embed_dim", 64);
    mc.heads = ckpt.meta_int("heads", 4);
    mc.mlp_ratio = ckpt.meta_int("mlp_ratio", 4);
    mc.codebook_size = ckpt.meta_int("codebook_size", 64);
    mc.grid_h = ckpt.meta_int("grid_h", 8);
    mc.grid_w = ckpt.meta_int("grid_w", 8);
    mc.source_classes = ckpt.meta_int("source_classes", 0);
    mc.adapter_hidden = ckpt.meta_int("adapter_hidden", 0);

    bundle.model = std::make_unique<TransformerModel>(mc, 0);
    bundle.seed = static_cast<uint64_t>(ckpt.meta_int("seed", 0));
    bundle.mode = ckpt.meta("mode", "pretrain");
    bundle.target_classes = ckpt.meta_int("target_classes", 0);
    bundle.target_instances = ckpt.meta_int("target_instances", 0);

    if (!ckpt.meta("prompt_kind").empty()) {
        PromptConfig pc;
        pc.kind = parse_prompt_kind(ckpt.meta("prompt_kind"));
        pc.prompt_len = ckpt.meta_int("prompt_len", 16);
        pc.feature_dim = ckpt.meta_int("feature_dim", mc.embed_dim);
        pc.token_dim = mc.embed_dim;
        pc.factors = ckpt.meta_int("factors", 1);
        pc.conditions = ckpt.meta_int("conditions", 1);
        bundle.gen = std::make_unique<PromptGenerator>(pc, 0);
    }

    auto load_params = [&](std::vector<NamedParam>& params) {
        for (NamedParam& p : params) {
            const CheckpointTensor* t = ckpt.find(p.name);
            if (!t) throw std::runtime_error("checkpoint is missing tensor " + p.name);
            if (t->shape != p.var.value().shape()) {
                throw std::runtime_error("checkpoint tensor " + p.name + " has shape " +
                                         shape_str(t->shape) + ", expected " +
                                         shape_str(p.var.value().shape()));
            }
            p.var.assign_value(Tensor(t->shape, t->data));
            p.var.set_requires_grad(t->trainable);
        }
    };
    load_params(bundle.model->params());
    if (bundle.gen) load_params(bundle.gen->params());

    const CheckpointTensor* vq = ckpt.find("vq.codewords");
    if (!vq) throw std::runtime_error("checkpoint is missing tensor vq.codewords");
    bundle.codebook.patch_h = ckpt.meta_int("patch_h", 4);
    bundle.codebook.patch_w = ckpt.meta_int("patch_w", 4);
    bundle.codebook.channels = ckpt.meta_int("channels", 3);
    bundle.codebook.codewords = vq->data;
    if (bundle.codebook.k() != mc.codebook_size) {
        throw std::runtime_error("codebook size does not match model vocabulary");
    }
    return bundle;
}

Tensor condition_prompt(const ModelBundle& bundle, int64_t condition_id) {
    if (bundle.gen) return bundle.gen->generate_tensor(condition_id);
    const ModelConfig& mc = bundle.model->config();
    const int64_t token = mc.class_token_id(condition_id);
    const NamedParam* emb = const_cast<TransformerModel&>(*bundle.model).find("tf.tok_embed");
    Tensor prompt({1, mc.embed_dim});
    std::copy_n(emb->var.value().data() + token * mc.embed_dim, mc.embed_dim, prompt.data());
    return prompt;
}

std::vector<Image> sample_images(const ModelBundle& bundle, std::span<const int64_t> condition_ids,
                                 int64_t steps, ScheduleShape shape, double temperature,
                                 int64_t top_k, uint64_t seed) {
    const ModelConfig& mc = bundle.model->config();
    std::mt19937_64 rng(seed);
    std::vector<Image> images;
    images.reserve(condition_ids.size());
    for (int64_t cond : condition_ids) {
        const Tensor prompt = condition_prompt(bundle, cond);
        TokenGrid grid;
        if (mc.kind == ModelKind::NAR) {
            const DecodeSchedule sched = make_schedule(steps, mc.grid_h, mc.grid_w, shape);
            grid = decode_nar(*bundle.model, constant_prompt(prompt), sched, rng, temperature).grid;
        } else {
            grid = decode_ar(*bundle.model, prompt, rng, temperature, top_k);
        }
        images.push_back(decode(grid, bundle.codebook));
    }
    return images;
}

std::vector<Image> sample_images_marquee(const ModelBundle& bundle,
                                         std::span<const std::pair<int64_t, int64_t>> cond_pairs,
                                         int64_t steps, ScheduleShape shape, int64_t t_cutoff,
                                         bool token_level, double temperature, uint64_t seed) {
    if (!bundle.gen) throw std::invalid_argument("marquee decoding needs a prompt generator");
    const ModelConfig& mc = bundle.model->config();
    if (mc.kind != ModelKind::NAR) throw std::invalid_argument("marquee decoding applies to NAR models");
    if (t_cutoff < 2 || t_cutoff > steps) {
        throw std::invalid_argument("t_cutoff must lie in [2, steps]");
    }
    std::mt19937_64 rng(seed);
    std::vector<Image> images;
    images.reserve(cond_pairs.size());
    const DecodeSchedule sched = make_schedule(steps, mc.grid_h, mc.grid_w, shape);
    for (const auto& [c1, c2] : cond_pairs) {
        MarqueeSpec spec{c1, c2, t_cutoff, token_level};
        const auto res = decode_nar(*bundle.model, marquee_source(*bundle.gen, spec), sched, rng, temperature);
        images.push_back(decode(res.grid, bundle.codebook));
    }
    return images;
}

// --- CLI ----------------------------------------------------------------------

namespace cli {

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::map<std::string, std::string> values;

    bool has(const std::string& key) const { return values.count(key) > 0; }
    std::string str(const std::string& key, const std::string& fallback = "") const {
        auto it = values.find(key);
        return it == values.end() ? fallback : it->second;
    }
    std::string require(const std::string& key) const {
        auto it = values.find(key);
        if (it == values.end()) throw UsageError("missing required option --" + key);
        return it->second;
    }
    int64_t i64(const std::string& key, int64_t fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        try {
            size_t pos = 0;
            const int64_t v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw UsageError("option --" + key + " expects an integer, got '" + it->second + "'");
        }
    }
    double f64(const std::string& key, double fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        try {
            size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw UsageError("option --" + key + " expects a number, got '" + it->second + "'");
        }
    }
    bool flag(const std::string& key, bool fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        const std::string& v = it->second;
        if (v == "1" || v == "true" || v == "on") return true;
        if (v == "0" || v == "false" || v == "off") return false;
        throw UsageError("option --" + key + " expects a boolean, got '" + v + "'");
    }
};

const std::set<std::string> kDatasetKeys = {"data-dir",     "classes",      "images-per-class",
                                            "image-size",   "jitter",       "dataset-seed",
                                            "class-offset"};
const std::set<std::string> kVqKeys = {"patch", "codebook", "vq-iters"};
const std::set<std::string> kArchKeys = {"kind", "layers", "dim", "heads"};
const std::set<std::string> kTrainKeys = {"epochs",        "batch",   "lr",   "pretrained-lr",
                                          "weight-decay",  "warmup-epochs", "seed", "metrics"};

std::set<std::string> known_keys(const std::string& cmd) {
    std::set<std::string> keys = {"config"};
    auto merge = [&](const std::set<std::string>& more) { keys.insert(more.begin(), more.end()); };
    if (cmd == "pretrain") {
        merge(kDatasetKeys);
        merge(kVqKeys);
        merge(kArchKeys);
        merge(kTrainKeys);
        keys.insert("out");
    } else if (cmd == "transfer") {
        merge(kDatasetKeys);
        merge(kVqKeys);
        merge(kArchKeys);
        merge(kTrainKeys);
        keys.insert({"source", "out", "mode", "prompt-kind", "prompt-len", "prompt-dim", "factors",
                     "instance-conditioning", "instance-prob", "adapter-hidden"});
    } else if (cmd == "generate") {
        keys.insert({"ckpt", "out", "n", "cond", "marquee", "steps", "schedule", "temperature",
                     "top-k", "seed", "columns"});
    } else if (cmd == "eval") {
        merge(kDatasetKeys);
        keys.insert({"ckpt", "n", "steps", "schedule", "temperature", "top-k", "seed", "report"});
    } else if (cmd == "inspect") {
        keys.insert({"ckpt", "prompt-config"});
    } else {
        throw UsageError("unknown subcommand '" + cmd +
                         "' (expected pretrain|transfer|generate|eval|inspect)");
    }
    return keys;
}

Options parse_options(const std::string& cmd, std::span<const std::string> args) {
    const std::set<std::string> keys = known_keys(cmd);
    std::map<std::string, std::string> flags;
    for (size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a.size() < 3 || a.substr(0, 2) != "--") {
            throw UsageError("expected --key value pairs, got '" + a + "'");
        }
        const std::string key = a.substr(2);
        if (!keys.count(key)) throw UsageError("unknown option --" + key + " for " + cmd);
        if (i + 1 >= args.size()) throw UsageError("option --" + key + " expects a value");
        flags[key] = args[++i];
    }

    Options opts;
    if (flags.count("config")) {
        for (const auto& [k, v] : parse_config_file(flags.at("config"))) {
            if (!keys.count(k)) {
                throw UsageError("unknown config key '" + k + "' for " + cmd);
            }
            opts.values[k] = v;
        }
    }
    for (const auto& [k, v] : flags) opts.values[k] = v;  // flags override config
    opts.values.erase("config");
    return opts;
}

Dataset make_dataset(const Options& opts) {
    if (opts.has("data-dir")) return load_ppm_directory(opts.str("data-dir"));
    SyntheticDatasetSpec spec;
    spec.n_classes = opts.i64("classes", 8);
    spec.images_per_class = opts.i64("images-per-class", 50);
    spec.image_size = opts.i64("image-size", 32);
    spec.jitter = opts.f64("jitter", 0.25);
    spec.seed = static_cast<uint64_t>(opts.i64("dataset-seed", 7));
    spec.class_offset = opts.i64("class-offset", 0);
    return synth_dataset(spec);
}

std::vector<Image> dataset_images(const Dataset& ds) {
    std::vector<Image> images;
    images.reserve(ds.items.size());
    for (const LabeledImage& item : ds.items) images.push_back(item.image);
    return images;
}

TrainSet encode_dataset(const Dataset& ds, const Codebook& cb) {
    TrainSet set;
    set.n_classes = ds.n_classes;
    for (const LabeledImage& item : ds.items) {
        set.grids.push_back(encode(item.image, cb));
        set.labels.push_back(item.class_label);
    }
    return set;
}

void write_metrics_file(const Options& opts, const TrainResult& result) {
    if (!opts.has("metrics")) return;
    std::ofstream out(opts.str("metrics"));
    if (!out) throw std::runtime_error("cannot open metrics file " + opts.str("metrics"));
    out << result.metrics_text();
}

int cmd_pretrain(const Options& opts, std::ostream& out) {
    const std::string out_path = opts.require("out");
    const Dataset ds = make_dataset(opts);
    const std::vector<Image> images = dataset_images(ds);

    const int64_t patch = opts.i64("patch", 4);
    const int64_t k = opts.i64("codebook", 64);
    Codebook cb = fit_codebook(images, k, patch, patch,
                               static_cast<int>(opts.i64("vq-iters", 20)),
                               static_cast<uint64_t>(opts.i64("dataset-seed", 7)));

    ModelConfig mc;
    mc.kind = parse_model_kind(opts.str("kind", "nar"));
    mc.layers = opts.i64("layers", 4);
    mc.embed_dim = opts.i64("dim", 64);
    mc.heads = opts.i64("heads", 4);
    mc.codebook_size = cb.k();
    mc.grid_h = images[0].height / patch;
    mc.grid_w = images[0].width / patch;
    mc.source_classes = ds.n_classes;

    const uint64_t seed = static_cast<uint64_t>(opts.i64("seed", 1));
    ModelBundle bundle;
    bundle.model = std::make_unique<TransformerModel>(mc, seed);
    bundle.codebook = std::move(cb);
    bundle.seed = seed;
    bundle.mode = "pretrain";

    TrainConfig tc;
    tc.mode = TuneMode::Scratch;
    tc.learning_rate = opts.f64("lr", mc.kind == ModelKind::NAR ? 1e-4 : 5e-4);
    tc.batch_size = opts.i64("batch", 32);
    tc.epochs = opts.i64("epochs", 30);
    tc.warmup_epochs = opts.i64("warmup-epochs", 2);
    tc.weight_decay = opts.f64("weight-decay", 0.045);
    tc.seed = seed;

    const TrainSet set = encode_dataset(ds, bundle.codebook);
    const TrainResult result = train_model(*bundle.model, nullptr, set, tc);
    write_metrics_file(opts, result);

    save_checkpoint(out_path, bundle_to_checkpoint(bundle));
    char line[160];
    std::snprintf(line, sizeof(line), "pretrain kind=%s epochs=%lld final_loss=%.9g diverged=%d\n",
                  to_string(mc.kind).c_str(), static_cast<long long>(tc.epochs),
                  result.log.empty() ? 0.0 : result.log.back().loss, result.diverged ? 1 : 0);
    out << line;
    return result.diverged ? 2 : 0;
}

int cmd_transfer(const Options& opts, std::ostream& out) {
    const std::string out_path = opts.require("out");
    const TuneMode mode = parse_tune_mode(opts.require("mode"));
    if (!opts.has("source") && mode != TuneMode::Scratch) {
        throw UsageError("transfer --mode " + to_string(mode) + " requires --source");
    }

    const Dataset ds = make_dataset(opts);
    const uint64_t seed = static_cast<uint64_t>(opts.i64("seed", 1));

    ModelBundle bundle;
    if (opts.has("source")) {
        bundle = bundle_from_checkpoint(load_checkpoint(opts.str("source")));
        bundle.gen.reset();  // transfer learns a fresh prompt generator
    } else {
        const std::vector<Image> images = dataset_images(ds);
        const int64_t patch = opts.i64("patch", 4);
        bundle.codebook = fit_codebook(images, opts.i64("codebook", 64), patch, patch,
                                       static_cast<int>(opts.i64("vq-iters", 20)),
                                       static_cast<uint64_t>(opts.i64("dataset-seed", 7)));
        ModelConfig mc;
        mc.kind = parse_model_kind(opts.str("kind", "nar"));
        mc.layers = opts.i64("layers", 4);
        mc.embed_dim = opts.i64("dim", 64);
        mc.heads = opts.i64("heads", 4);
        mc.codebook_size = bundle.codebook.k();
        mc.grid_h = images[0].height / patch;
        mc.grid_w = images[0].width / patch;
        mc.source_classes = 0;
        bundle.model = std::make_unique<TransformerModel>(mc, seed);
    }
    const ModelConfig& mc = bundle.model->config();

    if (mode == TuneMode::Adapter && !bundle.model->has_adapters()) {
        bundle.model->attach_adapters(opts.i64("adapter-hidden", 64), seed + 17);
    }

    const bool instance_cond = opts.flag("instance-conditioning", false);
    const int64_t n_items = static_cast<int64_t>(ds.items.size());

    PromptConfig pc;
    pc.kind = parse_prompt_kind(opts.str("prompt-kind", "factorized"));
    const bool short_prompt_mode = mode == TuneMode::Finetune || mode == TuneMode::Scratch;
    pc.prompt_len = opts.i64("prompt-len", short_prompt_mode ? 1 : 16);
    pc.feature_dim = opts.i64("prompt-dim", mc.embed_dim);
    pc.token_dim = mc.embed_dim;
    pc.factors = opts.i64("factors", mc.kind == ModelKind::NAR ? 1 : 16);
    pc.conditions = ds.n_classes + (instance_cond ? n_items : 0);
    auto gen = std::make_unique<PromptGenerator>(pc, seed + 23);

    TrainConfig tc;
    tc.mode = mode;
    const double default_lr = (mode == TuneMode::Scratch)
                                  ? (mc.kind == ModelKind::NAR ? 1e-4 : 5e-4)
                                  : 1e-3;
    tc.learning_rate = opts.f64("lr", default_lr);
    if (mode == TuneMode::Finetune) tc.pretrained_lr = opts.f64("pretrained-lr", 1e-4);
    tc.batch_size = opts.i64("batch", 32);
    tc.epochs = opts.i64("epochs", 30);
    tc.warmup_epochs = opts.i64("warmup-epochs", mode == TuneMode::Scratch ? 2 : 0);
    const bool decay_mode = mode == TuneMode::Finetune || mode == TuneMode::Scratch;
    tc.weight_decay = opts.f64("weight-decay", decay_mode ? 0.045 : 0.0);
    tc.seed = seed;
    tc.instance_conditioning = instance_cond;
    tc.instance_sample_prob = opts.f64("instance-prob", 0.5);

    const TrainSet set = encode_dataset(ds, bundle.codebook);
    const TrainResult result = train_model(*bundle.model, gen.get(), set, tc);
    write_metrics_file(opts, result);

    bundle.gen = std::move(gen);
    bundle.seed = seed;
    bundle.mode = to_string(mode);
    bundle.target_classes = ds.n_classes;
    bundle.target_instances = instance_cond ? n_items : 0;
    save_checkpoint(out_path, bundle_to_checkpoint(bundle));

    char line[160];
    std::snprintf(line, sizeof(line), "transfer mode=%s epochs=%lld final_loss=%.9g diverged=%d\n",
                  to_string(mode).c_str(), static_cast<long long>(tc.epochs),
                  result.log.empty() ? 0.0 : result.log.back().loss, result.diverged ? 1 : 0);
    out << line;
    return result.diverged ? 2 : 0;
}

std::pair<std::string, int64_t> parse_condition(const std::string& text) {
    const size_t colon = text.find(':');
    if (colon == std::string::npos) throw UsageError("condition must look like class:3 or instance:7");
    const std::string kind = text.substr(0, colon);
    if (kind != "class" && kind != "instance") {
        throw UsageError("condition kind must be class or instance, got '" + kind + "'");
    }
    try {
        return {kind, std::stoll(text.substr(colon + 1))};
    } catch (const std::exception&) {
        throw UsageError("bad condition id in '" + text + "'");
    }
}

int64_t condition_to_id(const ModelBundle& bundle, const std::string& kind, int64_t id) {
    if (kind == "class") return id;
    if (!bundle.gen || bundle.target_instances == 0) {
        throw UsageError("instance conditions need an instance-conditioned checkpoint");
    }
    return bundle.target_classes + id;
}

int cmd_generate(const Options& opts, std::ostream& out) {
    const ModelBundle bundle = bundle_from_checkpoint(load_checkpoint(opts.require("ckpt")));
    const std::string out_dir = opts.require("out");
    const int64_t n = opts.i64("n", 16);
    if (n < 1) throw UsageError("--n must be >= 1");
    const int64_t steps = opts.i64("steps", 8);
    const ScheduleShape shape = parse_schedule_shape(opts.str("schedule", "cosine"));
    const double temperature = opts.f64("temperature", 1.0);
    const int64_t top_k = opts.i64("top-k", 0);
    const uint64_t seed = static_cast<uint64_t>(opts.i64("seed", 1));

    std::vector<Image> images;
    std::vector<std::string> descs;

    if (opts.has("marquee")) {
        // cond1=instance:3,cond2=class:1,tcutoff=4
        std::map<std::string, std::string> kv;
        std::stringstream ss(opts.str("marquee"));
        std::string part;
        while (std::getline(ss, part, ',')) {
            const size_t eq = part.find('=');
            if (eq == std::string::npos) throw UsageError("bad marquee spec near '" + part + "'");
            kv[part.substr(0, eq)] = part.substr(eq + 1);
        }
        for (const std::string key : {"cond1", "cond2", "tcutoff"}) {
            if (!kv.count(key)) throw UsageError("marquee spec is missing " + key);
        }
        const auto [k1, i1] = parse_condition(kv.at("cond1"));
        const auto [k2, i2] = parse_condition(kv.at("cond2"));
        int64_t t_cutoff;
        try {
            t_cutoff = std::stoll(kv.at("tcutoff"));
        } catch (const std::exception&) {
            throw UsageError("bad tcutoff in marquee spec");
        }
        const std::pair<int64_t, int64_t> pair{condition_to_id(bundle, k1, i1),
                                               condition_to_id(bundle, k2, i2)};
        std::vector<std::pair<int64_t, int64_t>> pairs(static_cast<size_t>(n), pair);
        images = sample_images_marquee(bundle, pairs, steps, shape, t_cutoff, false, temperature, seed);
        for (int64_t i = 0; i < n; ++i) descs.push_back(opts.str("marquee"));
    } else if (opts.has("cond")) {
        const auto [kind, id] = parse_condition(opts.str("cond"));
        const std::vector<int64_t> conds(static_cast<size_t>(n), condition_to_id(bundle, kind, id));
        images = sample_images(bundle, conds, steps, shape, temperature, top_k, seed);
        for (int64_t i = 0; i < n; ++i) descs.push_back(opts.str("cond"));
    } else {
        const int64_t n_classes = bundle.gen ? bundle.target_classes
                                             : bundle.model->config().source_classes;
        if (n_classes < 1) throw UsageError("checkpoint has no class conditions; pass --cond");
        std::vector<int64_t> conds(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) conds[static_cast<size_t>(i)] = i % n_classes;
        images = sample_images(bundle, conds, steps, shape, temperature, top_k, seed);
        for (int64_t i = 0; i < n; ++i) descs.push_back("class:" + std::to_string(i % n_classes));
    }

    std::filesystem::create_directories(out_dir);
    const int64_t columns = opts.i64("columns", std::min<int64_t>(n, 8));
    write_ppm(out_dir + "/grid.ppm", tile_images(images, columns));
    std::ofstream index(out_dir + "/index.txt");
    if (!index) throw std::runtime_error("cannot write index file in " + out_dir);
    for (size_t i = 0; i < descs.size(); ++i) {
        index << i << "," << descs[i] << "\n";
    }
    out << "generate n=" << n << " out=" << out_dir << "\n";
    return 0;
}

int cmd_eval(const Options& opts, std::ostream& out) {
    const ModelBundle bundle = bundle_from_checkpoint(load_checkpoint(opts.require("ckpt")));
    const Dataset ds = make_dataset(opts);
    const int64_t n = opts.i64("n", 64);
    const int64_t steps = opts.i64("steps", 8);
    const ScheduleShape shape = parse_schedule_shape(opts.str("schedule", "cosine"));
    const double temperature = opts.f64("temperature", 1.0);
    const int64_t top_k = opts.i64("top-k", 0);
    const uint64_t seed = static_cast<uint64_t>(opts.i64("seed", 1));

    std::vector<int64_t> conds(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) conds[static_cast<size_t>(i)] = i % ds.n_classes;
    const std::vector<Image> generated = sample_images(bundle, conds, steps, shape, temperature, top_k, seed);
    const std::vector<Image> reference = dataset_images(ds);

    std::vector<float> feats_gen, feats_ref;
    for (const Image& img : generated) {
        const auto f = pooled_gray_features(img);
        feats_gen.insert(feats_gen.end(), f.begin(), f.end());
    }
    for (const Image& img : reference) {
        const auto f = pooled_gray_features(img);
        feats_ref.insert(feats_ref.end(), f.begin(), f.end());
    }
    const double fd = frechet_distance(feats_gen, static_cast<int64_t>(generated.size()), feats_ref,
                                       static_cast<int64_t>(reference.size()), kFeatureDim);
    const DiversityResult div = intra_cluster_diversity(generated, reference);

    std::vector<std::pair<std::string, double>> report;
    report.push_back({"frechet", fd});
    report.push_back({"diversity", div.value});
    report.push_back({"diversity_singletons", static_cast<double>(div.singleton_clusters)});

    if (bundle.gen && bundle.target_instances > 0 &&
        bundle.gen->config().kind == PromptKind::Factorized) {
        const int64_t n_inst = bundle.target_instances;
        const int64_t dim = bundle.gen->config().feature_dim * bundle.gen->config().factors;
        std::vector<float> reps;
        std::vector<int64_t> labels;
        for (int64_t i = 0; i < n_inst; ++i) {
            const Tensor rep = bundle.gen->representation(bundle.target_classes + i);
            reps.insert(reps.end(), rep.vec().begin(), rep.vec().end());
            labels.push_back(ds.items[static_cast<size_t>(i)].class_label);
        }
        const KMeansResult km = kmeans(reps, n_inst, dim, ds.n_classes, seed, 50);
        report.push_back({"nmi", nmi(km.assignments, labels)});
    }

    char line[96];
    for (const auto& [name, value] : report) {
        std::snprintf(line, sizeof(line), "%s=%.9g\n", name.c_str(), value);
        out << line;
    }
    if (opts.has("report")) {
        std::ofstream csv(opts.str("report"));
        if (!csv) throw std::runtime_error("cannot write report " + opts.str("report"));
        csv << "metric,value\n";
        for (const auto& [name, value] : report) {
            std::snprintf(line, sizeof(line), "%s,%.9g\n", name.c_str(), value);
            csv << line;
        }
    }
    return 0;
}

int cmd_inspect(const Options& opts, std::ostream& out) {
    if (opts.has("prompt-config")) {
        // e.g. P=768,D=768,C=100,S=128,F=1[,kind=baseline]
        std::map<std::string, std::string> kv;
        std::stringstream ss(opts.str("prompt-config"));
        std::string part;
        while (std::getline(ss, part, ',')) {
            const size_t eq = part.find('=');
            if (eq == std::string::npos) throw UsageError("bad prompt-config near '" + part + "'");
            kv[part.substr(0, eq)] = part.substr(eq + 1);
        }
        auto get = [&](const std::string& key) -> int64_t {
            if (!kv.count(key)) throw UsageError("prompt-config is missing " + key);
            try {
                return std::stoll(kv.at(key));
            } catch (const std::exception&) {
                throw UsageError("bad value for " + key + " in prompt-config");
            }
        };
        PromptConfig pc;
        pc.feature_dim = get("P");
        pc.token_dim = get("D");
        pc.conditions = get("C");
        pc.prompt_len = get("S");
        if (kv.count("kind")) {
            pc.kind = parse_prompt_kind(kv.at("kind"));
        } else {
            pc.kind = kv.count("F") ? PromptKind::Factorized : PromptKind::Baseline;
        }
        pc.factors = kv.count("F") ? get("F") : 1;
        out << count_params(pc) << "\n";
        return 0;
    }
    if (!opts.has("ckpt")) throw UsageError("inspect needs --ckpt or --prompt-config");

    const Checkpoint ckpt = load_checkpoint(opts.str("ckpt"));
    for (const auto& [k, v] : ckpt.metadata) out << k << "=" << v << "\n";

    int64_t prompt_n = 0, adapter_n = 0, transformer_n = 0;
    for (const CheckpointTensor& t : ckpt.tensors) {
        const int64_t sz = numel(t.shape);
        out << t.name << " " << shape_str(t.shape) << " n=" << sz
            << (t.trainable ? " trainable" : " frozen") << "\n";
        if (t.name.rfind("pg.", 0) == 0) {
            prompt_n += sz;
        } else if (t.name.find(".ad1_") != std::string::npos ||
                   t.name.find(".ad2_") != std::string::npos) {
            adapter_n += sz;
        } else if (t.name.rfind("tf.", 0) == 0) {
            transformer_n += sz;
        }
    }
    const int64_t all = prompt_n + adapter_n + transformer_n;
    out << "partition mode=prompt trainable=" << prompt_n << " frozen=" << (all - prompt_n) << "\n";
    out << "partition mode=adapter trainable=" << (prompt_n + adapter_n) << " frozen=" << transformer_n
        << "\n";
    out << "partition mode=finetune trainable=" << all << " frozen=0\n";
    out << "partition mode=scratch trainable=" << all << " frozen=0\n";
    return 0;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    if (args.empty()) {
        err << "usage: gptx <pretrain|transfer|generate|eval|inspect> [--key value ...]\n";
        return 1;
    }
    try {
        const std::string cmd = args[0];
        const Options opts = parse_options(cmd, args.subspan(1));
        if (cmd == "pretrain") return cmd_pretrain(opts, out);
        if (cmd == "transfer") return cmd_transfer(opts, out);
        if (cmd == "generate") return cmd_generate(opts, out);
        if (cmd == "eval") return cmd_eval(opts, out);
        if (cmd == "inspect") return cmd_inspect(opts, out);
        err << "unknown subcommand '" << cmd << "'\n";
        return 1;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        err << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, out, err);
}

}  // namespace cli

}  // namespace gptx
