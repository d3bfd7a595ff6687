// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "petlab/adaptation.h"
#include "petlab/corpus.h"
#include "petlab/decode.h"

namespace petlab {

enum class Scheduler { constant, linear_warmup };

std::string_view to_string(Scheduler s);
Scheduler scheduler_from_string(std::string_view s);

struct TrainConfig {
    TuningMode mode = TuningMode::input_tune;
    std::size_t prompt_length = kDefaultPromptLength;
    std::size_t adapter_hidden = 0;  // 0 selects 2e
    bool reparam = true;

    std::size_t batch_size = 16;
    double learning_rate = 5e-4;
    double weight_decay = 1e-2;
    Scheduler scheduler = Scheduler::constant;
    double warmup_ratio = 0.0;
    std::size_t total_steps = 5000;
    std::size_t eval_every = 500;
    double max_grad_norm = 0.0;  // 0 disables clipping
    std::uint64_t seed = 0;

    int beam = 1;
    int no_repeat_ngram = 3;
    int max_decode_len = 48;

    // Throws ConfigError on any violated constraint.
    void validate() const;
    AdaptationConfig adaptation() const;
    DecodeOptions decode_options() const;

    nlohmann::json to_json() const;
    // Missing keys keep their defaults; unknown keys are rejected.
    static TrainConfig from_json(const nlohmann::json& j);
};

// Learning rate for optimizer step `step` (1-based; 0 is allowed).
// linear_warmup rises linearly from 0 to the peak at warmup_ratio *
// total_steps, then falls linearly to 0 at total_steps.
double lr_at(const TrainConfig& config, std::size_t step);

// Adam with decoupled weight decay over an explicit trainable list:
// p <- p - lr * wd * p, then the bias-corrected Adam update.
class AdamW {
public:
    explicit AdamW(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(double lr, double weight_decay);
    std::size_t steps_taken() const { return t_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

// Target ids with EOS appended.
std::vector<TokenId> with_eos(const std::vector<TokenId>& y);

struct EvalMetrics {
    double loss = 0.0;  // mean per-token NLL
    double bleu = 0.0;
    double rouge_l = 0.0;
};

// Teacher-forced loss over every pair, then decoding against references
// grouped by identical input.
EvalMetrics evaluate(const TunableModel& model, const Corpus& split, const TrainConfig& config);
double mean_token_loss(const TunableModel& model, const Corpus& split);
std::vector<std::vector<TokenId>> generate(const TunableModel& model, std::span<const EvalItem> items,
                                           const DecodeOptions& options);

struct EvalRow {
    std::size_t step = 0;
    double lr = 0.0;
    double train_loss = 0.0;  // mean batch loss since the previous row
    EvalMetrics dev;

    nlohmann::json to_json() const;
};

struct TaskSplits {
    Corpus train, dev, test;
};

// One tuning run. Everything except wall_clock_seconds is a deterministic
// function of (backbone, splits, config).
struct RunRecord {
    nlohmann::json header;
    std::vector<EvalRow> evals;
    std::size_t best_step = 0;
    EvalMetrics best_dev;
    EvalMetrics test;
    std::vector<std::string> checkpoints;
    double wall_clock_seconds = 0.0;
    std::string status = "ok";

    // Header and results without timing.
    nlohmann::json summary() const;
    std::string metrics_jsonl() const;
    // run.json (summary + wall clock) and metrics.jsonl.
    void save(const std::filesystem::path& dir) const;
    static RunRecord load(const std::filesystem::path& dir);
};

// Argmax over dev BLEU, earliest step on ties.
std::size_t best_eval_index(const std::vector<EvalRow>& rows);

using ProgressFn = std::function<void(const EvalRow&)>;

// Tunes a copy of `backbone` in config.mode. When out_dir is nonempty the
// best adaptation (or, for fine_tune, the best backbone) and the run record
// are written there. Throws ConfigError for an empty trainable set and
// TrainingAbort on a non-finite loss.
RunRecord tune(const Backbone& backbone, const TaskSplits& task, const TrainConfig& config,
               const std::filesystem::path& out_dir = {}, const ProgressFn& progress = {});

// Same, returning the tuned model restored to its best evaluation.
RunRecord tune_model(TunableModel& model, const TaskSplits& task, const TrainConfig& config,
                     const std::filesystem::path& out_dir = {}, const ProgressFn& progress = {});

struct PretrainLog {
    std::vector<std::pair<std::size_t, double>> losses;  // (step, mean loss since previous entry)
};

// Trains every backbone parameter on the corpus pairs, then freezes all of
// them. config.mode must be fine_tune.
Backbone pretrain(Backbone backbone, const Corpus& corpus, const TrainConfig& config, PretrainLog* log = nullptr,
                  const std::function<void(std::size_t, double)>& progress = {});

std::string build_id();

}  // namespace petlab
