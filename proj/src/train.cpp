// SPDX-License-Identifier: Apache-2.0

#include "petlab/train.h"

#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "petlab/errors.h"
#include "petlab/metrics.h"
#include "petlab/rng.h"

#ifndef PETLAB_BUILD_ID
#define PETLAB_BUILD_ID "unknown"
#endif

namespace petlab {

namespace {

constexpr std::uint64_t kOrderSalt = 0x6f72646572ULL;
constexpr std::uint64_t kDropoutSalt = 0x64726f706f7574ULL;

}  // namespace

std::string build_id() { return PETLAB_BUILD_ID; }

std::string_view to_string(Scheduler s) { return s == Scheduler::constant ? "constant" : "linear_warmup"; }

Scheduler scheduler_from_string(std::string_view s) {
    if (s == "constant") return Scheduler::constant;
    if (s == "linear_warmup" || s == "warmup") return Scheduler::linear_warmup;
    throw ConfigError("unknown scheduler: " + std::string(s));
}

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(learning_rate >= 1e-6 && learning_rate <= 1e-2)) throw ConfigError("learning_rate must lie in [1e-6, 1e-2]");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
    if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw ConfigError("warmup_ratio must lie in [0, 1)");
    if (total_steps == 0) throw ConfigError("total_steps must be positive");
    if (eval_every == 0 || total_steps % eval_every != 0) throw ConfigError("eval_every must divide total_steps");
    if (!(max_grad_norm >= 0.0)) throw ConfigError("max_grad_norm must be nonnegative");
    if (beam < 1) throw ConfigError("beam must be at least 1");
    if (no_repeat_ngram < 0) throw ConfigError("no_repeat_ngram must be nonnegative");
    if (max_decode_len < 1) throw ConfigError("max_decode_len must be at least 1");
}

AdaptationConfig TrainConfig::adaptation() const {
    AdaptationConfig a;
    a.mode = mode;
    a.prompt_length = prompt_length;
    a.adapter_hidden = adapter_hidden;
    a.reparam = reparam;
    a.seed = seed;
    return a;
}

DecodeOptions TrainConfig::decode_options() const {
    DecodeOptions d;
    d.beam = beam;
    d.max_len = max_decode_len;
    d.no_repeat_ngram = no_repeat_ngram;
    return d;
}

nlohmann::json TrainConfig::to_json() const {
    return {{"mode", std::string(to_string(mode))},
            {"prompt_length", prompt_length},
            {"adapter_hidden", adapter_hidden},
            {"reparam", reparam},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"scheduler", std::string(to_string(scheduler))},
            {"warmup_ratio", warmup_ratio},
            {"total_steps", total_steps},
            {"eval_every", eval_every},
            {"max_grad_norm", max_grad_norm},
            {"seed", seed},
            {"beam", beam},
            {"no_repeat_ngram", no_repeat_ngram},
            {"max_decode_len", max_decode_len}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("train config must be an object");
    static const std::set<std::string> known{"mode",         "prompt_length", "adapter_hidden", "reparam",
                                             "batch_size",   "learning_rate", "weight_decay",   "scheduler",
                                             "warmup_ratio", "total_steps",   "eval_every",     "max_grad_norm",
                                             "seed",         "beam",          "no_repeat_ngram", "max_decode_len"};
    for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) throw ConfigError("unknown train config key: " + k);
    }
    TrainConfig c;
    try {
        if (j.contains("mode")) c.mode = tuning_mode_from_string(j.at("mode").get<std::string>());
        c.prompt_length = j.value("prompt_length", c.prompt_length);
        c.adapter_hidden = j.value("adapter_hidden", c.adapter_hidden);
        c.reparam = j.value("reparam", c.reparam);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        if (j.contains("scheduler")) c.scheduler = scheduler_from_string(j.at("scheduler").get<std::string>());
        c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
        c.total_steps = j.value("total_steps", c.total_steps);
        c.eval_every = j.value("eval_every", c.eval_every);
        c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
        c.seed = j.value("seed", c.seed);
        c.beam = j.value("beam", c.beam);
        c.no_repeat_ngram = j.value("no_repeat_ngram", c.no_repeat_ngram);
        c.max_decode_len = j.value("max_decode_len", c.max_decode_len);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

double lr_at(const TrainConfig& c, std::size_t step) {
    if (c.scheduler == Scheduler::constant) return c.learning_rate;
    const double total = static_cast<double>(c.total_steps);
    const double warm = c.warmup_ratio * total;
    const double s = static_cast<double>(std::min(step, c.total_steps));
    if (s < warm) return c.learning_rate * s / warm;
    if (total <= warm) return c.learning_rate;
    return c.learning_rate * (total - s) / (total - warm);
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

AdamW::AdamW(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void AdamW::step(double lr, double weight_decay) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) continue;
        auto w = p.mutable_values();
        auto g = p.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            w[j] -= lr * weight_decay * w[j];
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

std::vector<TokenId> with_eos(const std::vector<TokenId>& y) {
    std::vector<TokenId> t = y;
    t.push_back(tokens::eos);
    return t;
}

double mean_token_loss(const TunableModel& model, const Corpus& split) {
    NoGradGuard no_grad;
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& p : split.pairs) {
        const auto target = with_eos(p.y);
        sum += cross_entropy(model.forward(p.x, target), target).item();
        count += target.size();
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

std::vector<std::vector<TokenId>> generate(const TunableModel& model, std::span<const EvalItem> items,
                                           const DecodeOptions& options) {
    NoGradGuard no_grad;
    std::vector<std::vector<TokenId>> out;
    out.reserve(items.size());
    for (const auto& item : items) {
        BackboneStepModel step(model.backbone(), model.source_embeddings(item.x));
        out.push_back(decode(step, options));
    }
    return out;
}

EvalMetrics evaluate(const TunableModel& model, const Corpus& split, const TrainConfig& config) {
    EvalMetrics m;
    m.loss = mean_token_loss(model, split);
    const auto items = group_references(split);
    EvalBatch batch;
    batch.hypotheses = generate(model, items, config.decode_options());
    for (const auto& it : items) batch.references.push_back(it.references);
    m.bleu = bleu(batch);
    m.rouge_l = rouge_l(batch);
    return m;
}

nlohmann::json EvalRow::to_json() const {
    return {{"step", step},
            {"lr", lr},
            {"train_loss", train_loss},
            {"dev_loss", dev.loss},
            {"dev_bleu", dev.bleu},
            {"dev_rouge_l", dev.rouge_l}};
}

std::size_t best_eval_index(const std::vector<EvalRow>& rows) {
    if (rows.empty()) throw DomainError("no evaluations recorded");
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].dev.bleu > rows[best].dev.bleu) best = i;
    }
    return best;
}

// ---------------------------------------------------------------------------
// RunRecord
// ---------------------------------------------------------------------------

namespace {

nlohmann::json metrics_json(const EvalMetrics& m) { return {{"loss", m.loss}, {"bleu", m.bleu}, {"rouge_l", m.rouge_l}}; }

EvalMetrics metrics_from(const nlohmann::json& j) {
    return {j.at("loss").get<double>(), j.at("bleu").get<double>(), j.at("rouge_l").get<double>()};
}

}  // namespace

nlohmann::json RunRecord::summary() const {
    return {{"header", header},
            {"status", status},
            {"best_step", best_step},
            {"best_dev", metrics_json(best_dev)},
            {"test", metrics_json(test)},
            {"checkpoints", checkpoints}};
}

std::string RunRecord::metrics_jsonl() const {
    std::string out;
    for (const auto& r : evals) {
        nlohmann::json row = r.to_json();
        row["config_hash"] = header.value("config_hash", "");
        out += row.dump() + "\n";
    }
    return out;
}

void RunRecord::save(const std::filesystem::path& dir) const {
    nlohmann::json j = summary();
    j["wall_clock_seconds"] = wall_clock_seconds;
    write_text_file(dir / "run.json", j.dump(2) + "\n");
    write_text_file(dir / "metrics.jsonl", metrics_jsonl());
}

RunRecord RunRecord::load(const std::filesystem::path& dir) {
    RunRecord r;
    try {
        const auto j = nlohmann::json::parse(read_text_file(dir / "run.json"));
        r.header = j.at("header");
        r.status = j.at("status").get<std::string>();
        r.best_step = j.at("best_step").get<std::size_t>();
        r.best_dev = metrics_from(j.at("best_dev"));
        r.test = metrics_from(j.at("test"));
        r.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
        r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
        std::istringstream in(read_text_file(dir / "metrics.jsonl"));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto row = nlohmann::json::parse(line);
            EvalRow e;
            e.step = row.at("step").get<std::size_t>();
            e.lr = row.at("lr").get<double>();
            e.train_loss = row.at("train_loss").get<double>();
            e.dev = {row.at("dev_loss").get<double>(), row.at("dev_bleu").get<double>(),
                     row.at("dev_rouge_l").get<double>()};
            r.evals.push_back(e);
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed run record in " + dir.string() + ": " + e.what());
    }
    return r;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

struct Trainable {
    std::vector<std::string> names;
    std::vector<Tensor> tensors;
};

Trainable collect_trainable(TunableModel& model) {
    Trainable t;
    model.for_each_param([&](const std::string& name, Tensor& p, bool frozen) {
        if (!frozen) {
            t.names.push_back(name);
            t.tensors.push_back(p);
        }
    });
    return t;
}

class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
        std::iota(order_.begin(), order_.end(), 0);
        rng_.shuffle(order_);
    }

    std::size_t next() {
        if (cursor_ == order_.size()) {
            rng_.shuffle(order_);
            cursor_ = 0;
        }
        return order_[cursor_++];
    }

private:
    std::vector<std::size_t> order_;
    Rng rng_;
    std::size_t cursor_ = 0;
};

void clip_gradients(std::vector<Tensor>& params, double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const double f = max_norm / norm;
    for (auto& p : params) {
        if (!p.has_grad()) continue;
        for (double& g : p.mutable_grad()) g *= f;
    }
}

// One optimizer step on a sampled batch; returns the batch's mean token loss.
double train_step(TunableModel& model, const Corpus& data, BatchSampler& sampler, std::size_t batch_size,
                  Trainable& trainable, AdamW& opt, double lr, const TrainConfig& config, Rng& dropout_rng,
                  std::size_t step) {
    for (auto& p : trainable.tensors) p.zero_grad();
    Tensor total;
    std::size_t count = 0;
    const ForwardOptions fwd{true, &dropout_rng};
    for (std::size_t b = 0; b < batch_size; ++b) {
        const Pair& p = data.pairs[sampler.next()];
        const auto target = with_eos(p.y);
        Tensor ce = cross_entropy(model.forward(p.x, target, fwd), target);
        total = total.defined() ? add(total, ce) : ce;
        count += target.size();
    }
    Tensor loss = scale(total, 1.0 / static_cast<double>(count));
    const double value = loss.item();
    if (!std::isfinite(value)) {
        throw TrainingAbort("non-finite loss at step " + std::to_string(step) + " (lr " + std::to_string(lr) + ")");
    }
    loss.backward();
    clip_gradients(trainable.tensors, config.max_grad_norm);
    opt.step(lr, config.weight_decay);
    return value;
}

}  // namespace

RunRecord tune(const Backbone& backbone, const TaskSplits& task, const TrainConfig& config,
               const std::filesystem::path& out_dir, const ProgressFn& progress) {
    config.validate();
    TunableModel model(backbone, config.adaptation());
    return tune_model(model, task, config, out_dir, progress);
}

RunRecord tune_model(TunableModel& model, const TaskSplits& task, const TrainConfig& config,
                     const std::filesystem::path& out_dir, const ProgressFn& progress) {
    config.validate();
    const auto started = std::chrono::steady_clock::now();
    if (task.train.pairs.empty()) throw ConfigError("empty training split");
    if (task.dev.pairs.empty() || task.test.pairs.empty()) throw ConfigError("empty dev or test split");

    Trainable trainable = collect_trainable(model);
    if (trainable.tensors.empty() || model.trainable_count() == 0) {
        throw ConfigError(std::string("mode ") + std::string(to_string(config.mode)) + " has an empty trainable set");
    }

    RunRecord record;
    const nlohmann::json cfg_json = config.to_json();
    record.header = {{"kind", "run"},
                     {"config", cfg_json},
                     {"config_hash", config_hash(cfg_json)},
                     {"backbone", model.backbone().metadata()},
                     {"backbone_hash", model.backbone().hash()},
                     {"trainable_params", model.trainable_count()},
                     {"trainable_names", trainable.names},
                     {"task", {{"train", task.train.origin}, {"dev", task.dev.origin}, {"test", task.test.origin}}},
                     {"build", build_id()}};

    AdamW opt(trainable.tensors);
    BatchSampler sampler(task.train.pairs.size(), derive_seed(config.seed, kOrderSalt));
    Rng dropout_rng(derive_seed(config.seed, kDropoutSalt));

    std::vector<std::vector<double>> best_values;
    auto snapshot = [&] {
        best_values.clear();
        for (const auto& p : trainable.tensors) best_values.emplace_back(p.values().begin(), p.values().end());
    };
    auto record_eval = [&](std::size_t step, double train_loss) {
        EvalRow row;
        row.step = step;
        row.lr = step == 0 ? 0.0 : lr_at(config, step);
        row.train_loss = train_loss;
        row.dev = evaluate(model, task.dev, config);
        record.evals.push_back(row);
        if (record.evals.size() == 1 || row.dev.bleu > record.best_dev.bleu) {
            record.best_dev = row.dev;
            record.best_step = step;
            snapshot();
        }
        if (progress) progress(row);
    };

    record_eval(0, 0.0);
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    for (std::size_t step = 1; step <= config.total_steps; ++step) {
        const double lr = lr_at(config, step);
        loss_sum += train_step(model, task.train, sampler, config.batch_size, trainable, opt, lr, config, dropout_rng, step);
        ++loss_n;
        if (step % config.eval_every == 0) {
            record_eval(step, loss_sum / static_cast<double>(loss_n));
            loss_sum = 0.0;
            loss_n = 0;
        }
    }

    // Restore the best evaluation, then score the test split with it.
    for (std::size_t i = 0; i < trainable.tensors.size(); ++i) {
        auto w = trainable.tensors[i].mutable_values();
        std::copy(best_values[i].begin(), best_values[i].end(), w.begin());
    }
    record.test = evaluate(model, task.test, config);

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        const nlohmann::json stamp = {{"config_hash", record.header.at("config_hash")}};
        if (config.mode == TuningMode::fine_tune) {
            model.backbone().save(out_dir / "backbone.ckpt", stamp);
            record.checkpoints.push_back("backbone.ckpt");
        } else {
            model.save_adaptation(out_dir / "adaptation.ckpt", stamp);
            record.checkpoints.push_back("adaptation.ckpt");
        }
    }
    record.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (!out_dir.empty()) record.save(out_dir);
    return record;
}

Backbone pretrain(Backbone backbone, const Corpus& corpus, const TrainConfig& config, PretrainLog* log,
                  const std::function<void(std::size_t, double)>& progress) {
    config.validate();
    if (config.mode != TuningMode::fine_tune) throw ConfigError("pretraining requires mode fine_tune");
    if (corpus.pairs.empty()) throw ConfigError("empty pretraining corpus");
    AdaptationConfig a = config.adaptation();
    TunableModel model(std::move(backbone), a);
    Trainable trainable = collect_trainable(model);
    AdamW opt(trainable.tensors);
    BatchSampler sampler(corpus.pairs.size(), derive_seed(config.seed, kOrderSalt));
    Rng dropout_rng(derive_seed(config.seed, kDropoutSalt));
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    for (std::size_t step = 1; step <= config.total_steps; ++step) {
        const double lr = lr_at(config, step);
        loss_sum += train_step(model, corpus, sampler, config.batch_size, trainable, opt, lr, config, dropout_rng, step);
        ++loss_n;
        if (step % config.eval_every == 0) {
            const double mean = loss_sum / static_cast<double>(loss_n);
            if (log) log->losses.emplace_back(step, mean);
            if (progress) progress(step, mean);
            loss_sum = 0.0;
            loss_n = 0;
        }
    }
    Backbone out = std::move(model.backbone());
    out.freeze();
    return out;
}

}  // namespace petlab
