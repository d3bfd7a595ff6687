// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration and the drivers behind the command line: pretrain,
// tune, evaluate, sweep and familiarity reports. Every artifact written here
// carries the experiment's config hash.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "petlab/backbone.h"
#include "petlab/grammar.h"
#include "petlab/train.h"
#include "petlab/transform.h"

namespace petlab {

// Step count of the reference schedule the desk-scale runs are rescaled from.
inline constexpr std::size_t kReferenceSteps = 100000;

struct BackboneSection {
    std::string size = "small";
    Architecture arch = Architecture::encoder_decoder;
    int max_positions = 256;
    double dropout = 0.0;
    std::uint64_t seed = 0;
    // Existing checkpoint to tune from; empty means <output_dir>/backbone.ckpt.
    std::string checkpoint;

    BackboneConfig backbone_config(int vocab_size) const;
};

struct PretrainSection {
    std::size_t corpus_size = 50000;
    std::uint64_t grammar_seed = 0;
    TrainConfig train;  // mode must be fine_tune
};

struct TaskSection {
    TaskKind kind = TaskKind::table_to_text;
    std::size_t train_size = 1000;
    std::size_t dev_size = 100;
    std::size_t test_size = 100;
    std::uint64_t seed = 0;
    TaskOptions options;
    // Applied in order, each with one remap shared across the three splits.
    std::vector<TransformSpec> transforms;
    // Seeded subsample of the training split.
    double data_fraction = 1.0;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::filesystem::path output_dir = "runs";
    BackboneSection backbone;
    PretrainSection pretrain;
    TaskSection task;
    TrainConfig train;
    std::vector<std::uint64_t> seeds{0};
    // Optional per-size checkpoints for the backbone_size sweep.
    std::map<std::string, std::string> backbone_checkpoints;
    // Optional bigram file for familiarity; otherwise the pretraining corpus
    // is regenerated from its seed.
    std::string bigram_table;

    // Throws ConfigError on unknown keys or invalid values.
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    std::string hash() const;
};

// Train/dev/test from independent seed streams, transforms applied jointly,
// training split subsampled last.
TaskSplits build_splits(const TaskSection& task);

// "step rescaling: ..." line printed with every report.
std::string rescaling_note(const TrainConfig& train);

// Throws InputError when `dir` cannot be created or written.
void ensure_writable(const std::filesystem::path& dir);

struct PretrainOutputs {
    std::filesystem::path checkpoint;
    std::filesystem::path bigrams;
    std::filesystem::path vocab;
};

// Generates the corpus, pretrains, freezes, and writes backbone.ckpt,
// bigrams.txt, vocab.txt and pretrain.json into output_dir.
PretrainOutputs run_pretrain(const ExperimentConfig& config, std::ostream& log);

// Backbone referenced by the config; throws InputError when missing.
Backbone load_backbone(const ExperimentConfig& config);

// One run per seed into <output_dir>/tune/<mode>_seed<seed>.
std::vector<RunRecord> run_tune(const ExperimentConfig& config, std::ostream& log);

// Reloads a run directory against the config's backbone and scores a split.
EvalMetrics run_eval(const ExperimentConfig& config, const std::filesystem::path& run_dir, const std::string& split);

enum class SweepAxis { prompt_length, data_scale, backbone_size, design, familiarity };

std::string_view to_string(SweepAxis axis);
SweepAxis sweep_axis_from_string(std::string_view s);

struct SweepRow {
    std::string axis_value;
    std::string mode;
    std::uint64_t seed = 0;
    std::optional<double> dev_bleu, test_bleu, rp, fam;
    std::string status = "ok";
};

struct SweepOptions {
    SweepAxis axis = SweepAxis::prompt_length;
    std::vector<std::string> values;
    std::vector<TuningMode> modes;  // ignored for the design axis
    std::size_t jobs = 1;
    bool svg = false;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::filesystem::path csv, figure, svg;
};

// Cross product values x modes x seeds. A failing sub-run is recorded with
// its status and the sweep continues. RP is test BLEU over the mean
// fine_tune test BLEU at the same axis value, when fine_tune is included.
SweepResult run_sweep(const ExperimentConfig& config, const SweepOptions& options, std::ostream& log);

// Fixed column order: axis_value,mode,seed,dev_bleu,test_bleu,rp,fam,status,config_hash.
std::string sweep_csv(const std::vector<SweepRow>& rows, const std::string& config_hash);
// Means per (axis value, mode) in first-seen order.
std::string sweep_figure_csv(const std::vector<SweepRow>& rows, const std::string& config_hash);
std::string sweep_svg(const std::vector<SweepRow>& rows, std::string_view title);

struct FamiliarityRow {
    std::string variant;
    std::optional<double> rp;  // fraction, printed as a percentage
    double fam = 0.0;
};

// Two-column report: variant,RP(%),Fam.
std::string familiarity_report(const std::vector<FamiliarityRow>& rows);

// Test-BLEU ratio of two run records. Throws ConfigError when their backbone
// hashes differ.
double relative_performance_of(const RunRecord& tuned, const RunRecord& fine_tuned);

// Text table over run directories; refuses mixed backbone hashes.
std::string report_runs(const std::vector<RunRecord>& runs);

}  // namespace petlab
