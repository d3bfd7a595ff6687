// SPDX-License-Identifier: Apache-2.0
//
// petlab command line: pretrain, tune, eval, sweep, familiarity, transform
// and report. Exit codes: 0 success, 2 config or input error, 3 training
// failure.

#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "petlab/bigram.h"
#include "petlab/corpus.h"
#include "petlab/errors.h"
#include "petlab/experiment.h"
#include "petlab/metrics.h"
#include "petlab/transform.h"
#include "petlab/vocab.h"

namespace fs = std::filesystem;
using namespace petlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitTraining = 3;

struct TuneArgs {
    std::string config;
    std::string mode;
    std::optional<std::size_t> prompt_length;
    std::vector<std::uint64_t> seeds;
};

struct SweepArgs {
    std::string config;
    std::string axis;
    std::vector<std::string> values;
    std::vector<std::string> modes;
    std::size_t jobs = 1;
    bool svg = false;
};

struct FamiliarityArgs {
    std::vector<std::string> corpora;
    std::vector<std::string> variants;
    std::string bigrams;
    std::string vocab;
    std::vector<std::string> tuned;
    std::vector<std::string> fine_tuned;
    std::string out;
};

struct TransformArgs {
    std::string input;
    std::string output;
    std::string kind = "identity";
    std::uint64_t seed = 0;
    std::string map;
    std::string config;
    std::string out_dir;
};

std::shared_ptr<const Vocab> load_vocab(const std::string& path) {
    return std::make_shared<const Vocab>(path.empty() ? Vocab::standard() : Vocab::load(path));
}

int cmd_tune(const TuneArgs& a) {
    ExperimentConfig config = ExperimentConfig::load(a.config);
    if (!a.mode.empty()) config.train.mode = tuning_mode_from_string(a.mode);
    if (a.prompt_length) config.train.prompt_length = *a.prompt_length;
    if (!a.seeds.empty()) config.seeds = a.seeds;
    config.train.validate();
    const auto runs = run_tune(config, std::cout);
    for (const auto& r : runs) {
        std::cout << "run " << (config.output_dir / "tune" / (r.header.at("config").value("mode", "") + "_seed" +
                                                            std::to_string(r.header.at("config").value("seed", 0))))
                                   .string()
                  << "\n";
    }
    return kExitOk;
}

int cmd_sweep(const SweepArgs& a) {
    const ExperimentConfig config = ExperimentConfig::load(a.config);
    SweepOptions opt;
    opt.axis = sweep_axis_from_string(a.axis);
    opt.values = a.values;
    for (const auto& m : a.modes) opt.modes.push_back(tuning_mode_from_string(m));
    opt.jobs = a.jobs;
    opt.svg = a.svg;
    const SweepResult r = run_sweep(config, opt, std::cout);
    std::cout << "csv " << r.csv.string() << "\nfigure " << r.figure.string() << "\n";
    if (!r.svg.empty()) std::cout << "svg " << r.svg.string() << "\n";
    return kExitOk;
}

int cmd_familiarity(const FamiliarityArgs& a) {
    if (!a.variants.empty() && a.variants.size() != a.corpora.size()) {
        throw ConfigError("--variant must be given once per --corpus");
    }
    if (a.tuned.size() != a.fine_tuned.size()) throw ConfigError("--tuned and --fine-tuned must pair up");
    if (!a.tuned.empty() && a.tuned.size() != a.corpora.size()) {
        throw ConfigError("--tuned/--fine-tuned must be given once per --corpus");
    }
    const auto vocab = load_vocab(a.vocab);
    const BigramTable table = load_bigram_table(a.bigrams, *vocab);
    std::vector<FamiliarityRow> rows;
    for (std::size_t i = 0; i < a.corpora.size(); ++i) {
        const Corpus corpus = load_corpus(a.corpora[i], vocab);
        FamiliarityRow row;
        row.variant = a.variants.empty() ? fs::path(a.corpora[i]).stem().string() : a.variants[i];
        row.fam = familiarity(inputs_of(corpus), table);
        if (!a.tuned.empty()) {
            row.rp = relative_performance_of(RunRecord::load(a.tuned[i]), RunRecord::load(a.fine_tuned[i]));
        }
        rows.push_back(row);
    }
    const std::string report = familiarity_report(rows);
    std::cout << report;
    if (!a.out.empty()) write_text_file(a.out, report);
    return kExitOk;
}

int cmd_transform(const TransformArgs& a) {
    if (!a.config.empty()) {
        if (a.out_dir.empty()) throw ConfigError("--config needs --out-dir");
        const ExperimentConfig config = ExperimentConfig::load(a.config);
        ensure_writable(a.out_dir);
        const TaskSplits s = build_splits(config.task);
        save_corpus(s.train, fs::path(a.out_dir) / "train.tsv");
        save_corpus(s.dev, fs::path(a.out_dir) / "dev.tsv");
        save_corpus(s.test, fs::path(a.out_dir) / "test.tsv");
        std::cout << "wrote train/dev/test.tsv to " << a.out_dir << " (config_hash " << config.hash() << ")\n";
        return kExitOk;
    }
    if (a.input.empty() || a.output.empty()) throw ConfigError("transform needs --input and --output, or --config");
    const Corpus corpus = load_corpus(a.input, std::make_shared<const Vocab>(Vocab::standard()));
    TransformSpec spec;
    spec.kind = transform_kind_from_string(a.kind);
    spec.seed = a.seed;
    if (!a.map.empty()) {
        try {
            spec.remap = nlohmann::json::parse(read_text_file(a.map)).get<std::map<std::string, std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw InputError("cannot parse remap file " + a.map + ": " + e.what());
        }
    }
    save_corpus(transform_inputs(corpus, spec), a.output);
    std::cout << "wrote " << a.output << "\n";
    return kExitOk;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out) {
    std::vector<RunRecord> runs;
    for (const auto& d : dirs) runs.push_back(RunRecord::load(d));
    const std::string text = report_runs(runs);
    std::cout << text;
    if (!out.empty()) write_text_file(out, text);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"petlab: frozen-backbone prompt tuning and input tuning lab"};
    app.require_subcommand(1);

    std::string pretrain_config;
    auto* pretrain_cmd = app.add_subcommand("pretrain", "pretrain and freeze a backbone, write checkpoint and bigrams");
    pretrain_cmd->add_option("config", pretrain_config, "experiment config (JSON)")->required();

    TuneArgs tune_args;
    auto* tune_cmd = app.add_subcommand("tune", "tune the frozen backbone, one run per seed");
    tune_cmd->add_option("config", tune_args.config, "experiment config (JSON)")->required();
    tune_cmd->add_option("--mode", tune_args.mode, "override train.mode");
    tune_cmd->add_option("--prompt-length", tune_args.prompt_length, "override train.prompt_length");
    tune_cmd->add_option("--seeds", tune_args.seeds, "override the seed list");

    std::string eval_config, eval_run, eval_split = "test";
    auto* eval_cmd = app.add_subcommand("eval", "score a saved run on a split");
    eval_cmd->add_option("config", eval_config, "experiment config (JSON)")->required();
    eval_cmd->add_option("run_dir", eval_run, "run directory written by tune")->required();
    eval_cmd->add_option("--split", eval_split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));

    SweepArgs sweep_args;
    auto* sweep_cmd = app.add_subcommand("sweep", "cross product of axis values, modes and seeds");
    sweep_cmd->add_option("config", sweep_args.config, "experiment config (JSON)")->required();
    sweep_cmd->add_option("--axis", sweep_args.axis, "prompt_length, data_scale, backbone_size, design or familiarity")
        ->required();
    sweep_cmd->add_option("--values", sweep_args.values, "axis values")->required()->delimiter(',');
    sweep_cmd->add_option("--modes", sweep_args.modes, "tuning modes (default: train.mode)")->delimiter(',');
    sweep_cmd->add_option("--jobs", sweep_args.jobs, "worker threads")->check(CLI::PositiveNumber);
    sweep_cmd->add_flag("--svg", sweep_args.svg, "also write figure.svg");

    FamiliarityArgs fam_args;
    auto* fam_cmd = app.add_subcommand("familiarity", "familiarity of task inputs against a bigram table");
    fam_cmd->add_option("--corpus", fam_args.corpora, "task corpus file (x<TAB>y lines), repeatable")->required();
    fam_cmd->add_option("--bigrams", fam_args.bigrams, "bigram table file")->required();
    fam_cmd->add_option("--variant", fam_args.variants, "row label per corpus");
    fam_cmd->add_option("--vocab", fam_args.vocab, "vocabulary file (default: standard vocabulary)");
    fam_cmd->add_option("--tuned", fam_args.tuned, "tuned run directory per corpus");
    fam_cmd->add_option("--fine-tuned", fam_args.fine_tuned, "fine-tuned run directory per corpus");
    fam_cmd->add_option("--out", fam_args.out, "write the report here");

    TransformArgs tr_args;
    auto* tr_cmd = app.add_subcommand("transform", "apply an input transform to a corpus, or export a config's splits");
    tr_cmd->add_option("--input", tr_args.input, "corpus file");
    tr_cmd->add_option("--output", tr_args.output, "output corpus file");
    tr_cmd->add_option("--kind", tr_args.kind, "identity, remap_keys, remap_values, remap_all or familiar_plus");
    tr_cmd->add_option("--seed", tr_args.seed, "seed for the drawn remap");
    tr_cmd->add_option("--map", tr_args.map, "explicit remap as a JSON object");
    tr_cmd->add_option("--config", tr_args.config, "export train/dev/test of this experiment config");
    tr_cmd->add_option("--out-dir", tr_args.out_dir, "directory for exported splits");

    std::vector<std::string> report_dirs;
    std::string report_out;
    auto* report_cmd = app.add_subcommand("report", "summary table over run directories");
    report_cmd->add_option("run_dirs", report_dirs, "run directories")->required();
    report_cmd->add_option("--out", report_out, "write the table here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (*pretrain_cmd) {
            const auto out = run_pretrain(ExperimentConfig::load(pretrain_config), std::cout);
            std::cout << "checkpoint " << out.checkpoint.string() << "\nbigrams " << out.bigrams.string() << "\n";
            return kExitOk;
        }
        if (*tune_cmd) return cmd_tune(tune_args);
        if (*eval_cmd) {
            const EvalMetrics m = run_eval(ExperimentConfig::load(eval_config), eval_run, eval_split);
            std::cout << eval_split << " loss " << m.loss << " bleu " << m.bleu << " rouge_l " << m.rouge_l << "\n";
            return kExitOk;
        }
        if (*sweep_cmd) return cmd_sweep(sweep_args);
        if (*fam_cmd) return cmd_familiarity(fam_args);
        if (*tr_cmd) return cmd_transform(tr_args);
        if (*report_cmd) return cmd_report(report_dirs, report_out);
    } catch (const TrainingAbort& e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return kExitTraining;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    return kExitInput;
}
