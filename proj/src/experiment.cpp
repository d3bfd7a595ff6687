// SPDX-License-Identifier: Apache-2.0

#include "petlab/experiment.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "petlab/bigram.h"
#include "petlab/errors.h"
#include "petlab/metrics.h"
#include "petlab/rng.h"
#include "petlab/vocab.h"

namespace petlab {

namespace {

constexpr std::uint64_t kTrainSplitSalt = 1;
constexpr std::uint64_t kDevSplitSalt = 2;
constexpr std::uint64_t kTestSplitSalt = 3;
constexpr std::uint64_t kSubsampleSalt = 4;

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

nlohmann::json backbone_json(const BackboneSection& b) {
    return {{"size", b.size},         {"arch", std::string(to_string(b.arch))}, {"max_positions", b.max_positions},
            {"dropout", b.dropout},   {"seed", b.seed},                          {"checkpoint", b.checkpoint}};
}

BackboneSection backbone_from(const nlohmann::json& j) {
    reject_unknown(j, {"size", "arch", "max_positions", "dropout", "seed", "checkpoint"}, "backbone");
    BackboneSection b;
    b.size = j.value("size", b.size);
    if (j.contains("arch")) b.arch = architecture_from_string(j.at("arch").get<std::string>());
    b.max_positions = j.value("max_positions", b.max_positions);
    b.dropout = j.value("dropout", b.dropout);
    b.seed = j.value("seed", b.seed);
    b.checkpoint = j.value("checkpoint", b.checkpoint);
    return b;
}

nlohmann::json task_json(const TaskSection& t) {
    nlohmann::json transforms = nlohmann::json::array();
    for (const auto& s : t.transforms) transforms.push_back(s.to_json());
    return {{"kind", std::string(to_string(t.kind))},
            {"train_size", t.train_size},
            {"dev_size", t.dev_size},
            {"test_size", t.test_size},
            {"seed", t.seed},
            {"attribute_rate", t.options.attribute_rate},
            {"max_depth", t.options.max_depth},
            {"all_references", t.options.all_references},
            {"transforms", transforms},
            {"data_fraction", t.data_fraction}};
}

TaskSection task_from(const nlohmann::json& j) {
    reject_unknown(j,
                   {"kind", "train_size", "dev_size", "test_size", "seed", "attribute_rate", "max_depth",
                    "all_references", "transforms", "data_fraction"},
                   "task");
    TaskSection t;
    if (j.contains("kind")) t.kind = task_kind_from_string(j.at("kind").get<std::string>());
    t.train_size = j.value("train_size", t.train_size);
    t.dev_size = j.value("dev_size", t.dev_size);
    t.test_size = j.value("test_size", t.test_size);
    t.seed = j.value("seed", t.seed);
    t.options.attribute_rate = j.value("attribute_rate", t.options.attribute_rate);
    t.options.max_depth = j.value("max_depth", t.options.max_depth);
    t.options.all_references = j.value("all_references", t.options.all_references);
    if (j.contains("transforms")) {
        for (const auto& s : j.at("transforms")) t.transforms.push_back(TransformSpec::from_json(s));
    }
    t.data_fraction = j.value("data_fraction", t.data_fraction);
    if (t.train_size == 0 || t.dev_size == 0 || t.test_size == 0) throw ConfigError("task split sizes must be positive");
    if (!(t.data_fraction > 0.0 && t.data_fraction <= 1.0)) throw ConfigError("data_fraction must be in (0, 1]");
    return t;
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
}

std::string opt_fmt(const std::optional<double>& v) { return v ? fmt(*v, 6) : std::string(); }

std::string csv_safe(std::string s) {
    for (auto& c : s) {
        if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
    }
    return s;
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

BackboneConfig BackboneSection::backbone_config(int vocab_size) const {
    BackboneConfig c = BackboneConfig::preset(size, arch, vocab_size);
    c.max_positions = max_positions;
    c.dropout = dropout;
    c.seed = seed;
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
        reject_unknown(j,
                       {"name", "output_dir", "backbone", "pretrain", "task", "train", "seeds", "backbone_checkpoints",
                        "bigram_table"},
                       "experiment");
        c.name = j.value("name", c.name);
        c.output_dir = j.value("output_dir", c.output_dir.string());
        if (j.contains("backbone")) c.backbone = backbone_from(j.at("backbone"));
        c.pretrain.train.mode = TuningMode::fine_tune;
        c.pretrain.train.learning_rate = 1e-3;
        c.pretrain.train.scheduler = Scheduler::linear_warmup;
        c.pretrain.train.warmup_ratio = 0.05;
        c.pretrain.train.total_steps = 20000;
        c.pretrain.train.eval_every = 1000;
        if (j.contains("pretrain")) {
            const auto& p = j.at("pretrain");
            reject_unknown(p, {"corpus_size", "grammar_seed", "train"}, "pretrain");
            c.pretrain.corpus_size = p.value("corpus_size", c.pretrain.corpus_size);
            c.pretrain.grammar_seed = p.value("grammar_seed", c.pretrain.grammar_seed);
            if (p.contains("train")) {
                nlohmann::json merged = c.pretrain.train.to_json();
                merged.update(p.at("train"));
                c.pretrain.train = TrainConfig::from_json(merged);
            }
        }
        if (c.pretrain.train.mode != TuningMode::fine_tune) throw ConfigError("pretrain.train.mode must be fine_tune");
        if (j.contains("task")) c.task = task_from(j.at("task"));
        if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
        if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
        if (j.contains("backbone_checkpoints")) {
            c.backbone_checkpoints = j.at("backbone_checkpoints").get<std::map<std::string, std::string>>();
        }
        c.bigram_table = j.value("bigram_table", c.bigram_table);
        c.backbone.backbone_config(static_cast<int>(Vocab::standard().size()));
        c.train.validate();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("experiment config: ") + e.what());
    }
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    } catch (const InputError& e) {
        throw ConfigError(e.what());
    }
    return from_json(j);
}

nlohmann::json ExperimentConfig::to_json() const {
    return {{"name", name},
            {"output_dir", output_dir.string()},
            {"backbone", backbone_json(backbone)},
            {"pretrain",
             {{"corpus_size", pretrain.corpus_size},
              {"grammar_seed", pretrain.grammar_seed},
              {"train", pretrain.train.to_json()}}},
            {"task", task_json(task)},
            {"train", train.to_json()},
            {"seeds", seeds},
            {"backbone_checkpoints", backbone_checkpoints},
            {"bigram_table", bigram_table}};
}

std::string ExperimentConfig::hash() const { return config_hash(to_json()); }

TaskSplits build_splits(const TaskSection& task) {
    TaskSplits s{gen_task(task.kind, task.train_size, derive_seed(task.seed, kTrainSplitSalt), task.options),
                 gen_task(task.kind, task.dev_size, derive_seed(task.seed, kDevSplitSalt), task.options),
                 gen_task(task.kind, task.test_size, derive_seed(task.seed, kTestSplitSalt), task.options)};
    for (const auto& spec : task.transforms) {
        auto out = transform_jointly({s.train, s.dev, s.test}, spec);
        s = {std::move(out[0]), std::move(out[1]), std::move(out[2])};
    }
    if (task.data_fraction < 1.0) s.train = subsample(s.train, task.data_fraction, derive_seed(task.seed, kSubsampleSalt));
    return s;
}

std::string rescaling_note(const TrainConfig& train) {
    const double factor = static_cast<double>(kReferenceSteps) / static_cast<double>(train.total_steps);
    return "step rescaling: " + std::to_string(kReferenceSteps) + " reference steps -> " +
           std::to_string(train.total_steps) + " desk steps (factor " + fmt(factor, 2) + ")";
}

void ensure_writable(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());
    const auto probe = dir / ".petlab_write_probe";
    {
        std::ofstream out(probe);
        if (!out || !(out << "probe")) throw InputError("output directory is not writable: " + dir.string());
    }
    std::filesystem::remove(probe, ec);
}

// ---------------------------------------------------------------------------
// Pretrain / tune / eval
// ---------------------------------------------------------------------------

PretrainOutputs run_pretrain(const ExperimentConfig& config, std::ostream& log) {
    ensure_writable(config.output_dir);
    const auto vocab = std::make_shared<const Vocab>(Vocab::standard());
    const Corpus corpus = gen_pretrain_corpus(config.pretrain.grammar_seed, config.pretrain.corpus_size);
    const BackboneConfig bc = config.backbone.backbone_config(static_cast<int>(vocab->size()));
    log << "pretraining " << config.backbone.size << " " << to_string(bc.arch) << " (" << Backbone::parameter_count(bc)
        << " parameters) on " << corpus.size() << " pairs for " << config.pretrain.train.total_steps << " steps\n";
    PretrainLog plog;
    const Backbone trained = pretrain(Backbone(bc), corpus, config.pretrain.train, &plog, [&](std::size_t step, double loss) {
        log << "  step " << step << " loss " << fmt(loss) << "\n" << std::flush;
    });

    const std::string hash = config.hash();
    PretrainOutputs out{config.output_dir / "backbone.ckpt", config.output_dir / "bigrams.txt",
                        config.output_dir / "vocab.txt"};
    const BigramTable table = build_bigram_table(corpus);
    trained.save(out.checkpoint, {{"config_hash", hash}, {"name", config.name}});
    save_bigram_table(table, *vocab, out.bigrams,
                      "config_hash=" + hash + " grammar_seed=" + std::to_string(config.pretrain.grammar_seed) +
                          " size=" + std::to_string(config.pretrain.corpus_size));
    vocab->save(out.vocab);
    nlohmann::json losses = nlohmann::json::array();
    for (const auto& [step, loss] : plog.losses) losses.push_back({{"step", step}, {"loss", loss}});
    write_text_file(config.output_dir / "pretrain.json",
                    nlohmann::json{{"config_hash", hash},
                                   {"config", config.to_json()},
                                   {"backbone_hash", trained.hash()},
                                   {"corpus", corpus.origin},
                                   {"losses", losses},
                                   {"build", build_id()}}
                            .dump(2) +
                        "\n");
    log << "wrote " << out.checkpoint.string() << " (backbone hash " << trained.hash() << ")\n";
    return out;
}

Backbone load_backbone(const ExperimentConfig& config) {
    const std::filesystem::path path =
        config.backbone.checkpoint.empty() ? config.output_dir / "backbone.ckpt" : std::filesystem::path(config.backbone.checkpoint);
    if (!std::filesystem::exists(path)) throw InputError("backbone checkpoint not found: " + path.string());
    Backbone b = Backbone::load(path);
    b.freeze();
    return b;
}

std::vector<RunRecord> run_tune(const ExperimentConfig& config, std::ostream& log) {
    const Backbone backbone = load_backbone(config);
    const TaskSplits splits = build_splits(config.task);
    ensure_writable(config.output_dir / "tune");
    std::vector<RunRecord> out;
    for (std::uint64_t seed : config.seeds) {
        TrainConfig tc = config.train;
        tc.seed = seed;
        const auto dir = config.output_dir / "tune" / (std::string(to_string(tc.mode)) + "_seed" + std::to_string(seed));
        RunRecord r = tune(backbone, splits, tc, dir, [&](const EvalRow& row) {
            log << "  seed " << seed << " step " << row.step << " dev_loss " << fmt(row.dev.loss) << " dev_bleu "
                << fmt(row.dev.bleu) << "\n"
                << std::flush;
        });
        r.header["experiment_hash"] = config.hash();
        r.save(dir);
        out.push_back(std::move(r));
    }
    log << report_runs(out);
    return out;
}

EvalMetrics run_eval(const ExperimentConfig& config, const std::filesystem::path& run_dir, const std::string& split) {
    const RunRecord record = RunRecord::load(run_dir);
    Backbone backbone = load_backbone(config);
    if (record.header.value("backbone_hash", "") != backbone.hash()) {
        throw ConfigError("run " + run_dir.string() + " was trained against a different backbone");
    }
    const TrainConfig tc = TrainConfig::from_json(record.header.at("config"));
    TunableModel model(std::move(backbone), tc.adaptation());
    if (tc.mode == TuningMode::fine_tune) {
        Backbone tuned = Backbone::load(run_dir / "backbone.ckpt");
        model = TunableModel(std::move(tuned), tc.adaptation());
    } else {
        model.load_adaptation(run_dir / "adaptation.ckpt");
    }
    const TaskSplits splits = build_splits(config.task);
    if (split == "dev") return evaluate(model, splits.dev, tc);
    if (split == "test") return evaluate(model, splits.test, tc);
    if (split == "train") return evaluate(model, splits.train, tc);
    throw ConfigError("unknown split: " + split);
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

std::string_view to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::prompt_length: return "prompt_length";
        case SweepAxis::data_scale: return "data_scale";
        case SweepAxis::backbone_size: return "backbone_size";
        case SweepAxis::design: return "design";
        case SweepAxis::familiarity: return "familiarity";
    }
    return "unknown";
}

SweepAxis sweep_axis_from_string(std::string_view s) {
    for (auto a : {SweepAxis::prompt_length, SweepAxis::data_scale, SweepAxis::backbone_size, SweepAxis::design,
                   SweepAxis::familiarity}) {
        if (to_string(a) == s) return a;
    }
    throw ConfigError("unknown sweep axis: " + std::string(s));
}

namespace {

struct SweepJob {
    std::string value;
    TuningMode mode;
    std::uint64_t seed;
};

double parse_number(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(std::string("bad ") + what + " value: " + s);
    }
}

// Backbone for a size tag: explicit checkpoint, the configured one for the
// configured size, or a cached pretrain under the sweep directory.
Backbone backbone_for_size(const ExperimentConfig& config, const std::string& size, const std::filesystem::path& root,
                           std::ostream& log) {
    if (auto it = config.backbone_checkpoints.find(size); it != config.backbone_checkpoints.end()) {
        Backbone b = Backbone::load(it->second);
        b.freeze();
        return b;
    }
    if (size == config.backbone.size) {
        const std::filesystem::path p =
            config.backbone.checkpoint.empty() ? config.output_dir / "backbone.ckpt" : std::filesystem::path(config.backbone.checkpoint);
        if (std::filesystem::exists(p)) return load_backbone(config);
    }
    ExperimentConfig sub = config;
    sub.backbone.size = size;
    sub.backbone.checkpoint.clear();
    sub.output_dir = root / "backbones" / size;
    const auto ckpt = sub.output_dir / "backbone.ckpt";
    if (std::filesystem::exists(ckpt)) {
        const Checkpoint ck = load_checkpoint(ckpt);
        if (ck.metadata.contains("experiment") && ck.metadata["experiment"].value("config_hash", "") == sub.hash()) {
            Backbone b = Backbone::load(ckpt);
            b.freeze();
            return b;
        }
    }
    run_pretrain(sub, log);
    return load_backbone(sub);
}

}  // namespace

SweepResult run_sweep(const ExperimentConfig& config, const SweepOptions& options, std::ostream& log) {
    if (options.values.empty()) throw ConfigError("sweep needs at least one axis value");
    std::vector<TuningMode> modes = options.modes;
    if (options.axis != SweepAxis::design && modes.empty()) modes = {config.train.mode};

    // Validate every axis value up front.
    for (const auto& v : options.values) {
        switch (options.axis) {
            case SweepAxis::prompt_length: {
                const double k = parse_number(v, "prompt_length");
                if (k < 0 || k != std::floor(k)) throw ConfigError("prompt_length must be a nonnegative integer: " + v);
                break;
            }
            case SweepAxis::data_scale: {
                double f = parse_number(v.back() == '%' ? v.substr(0, v.size() - 1) : v, "data_scale");
                if (v.back() == '%') f /= 100.0;
                if (!(f > 0 && f <= 1)) throw ConfigError("data_scale must be in (0, 1]: " + v);
                break;
            }
            case SweepAxis::backbone_size: BackboneConfig::preset(v, config.backbone.arch, 16); break;
            case SweepAxis::design: tuning_mode_from_string(v); break;
            case SweepAxis::familiarity: transform_kind_from_string(v); break;
        }
    }

    const auto root = config.output_dir / ("sweep_" + std::string(to_string(options.axis)));
    ensure_writable(root);
    log << rescaling_note(config.train) << "\n";

    std::vector<SweepJob> jobs;
    for (const auto& v : options.values) {
        const std::vector<TuningMode> ms =
            options.axis == SweepAxis::design ? std::vector<TuningMode>{tuning_mode_from_string(v)} : modes;
        for (auto m : ms) {
            // Length 0 leaves prompt-only modes with nothing to train.
            if (options.axis == SweepAxis::prompt_length && parse_number(v, "prompt_length") == 0 && !has_adapter(m) &&
                m != TuningMode::fine_tune) {
                continue;
            }
            for (auto seed : config.seeds) jobs.push_back({v, m, seed});
        }
    }

    // Shared read-only inputs per axis value.
    std::map<std::string, Backbone> backbones;
    std::map<std::string, TaskSplits> splits;
    std::map<std::string, double> fams;
    std::optional<BigramTable> table;
    for (const auto& v : options.values) {
        ExperimentConfig c = config;
        if (options.axis == SweepAxis::data_scale) {
            double f = parse_number(v.back() == '%' ? v.substr(0, v.size() - 1) : v, "data_scale");
            c.task.data_fraction = v.back() == '%' ? f / 100.0 : f;
        }
        if (options.axis == SweepAxis::familiarity) {
            TransformSpec spec;
            spec.kind = transform_kind_from_string(v);
            spec.seed = config.task.transforms.empty() ? config.task.seed : config.task.transforms.front().seed;
            c.task.transforms = {spec};
        }
        try {
            backbones.emplace(v, options.axis == SweepAxis::backbone_size ? backbone_for_size(config, v, root, log)
                                                                          : load_backbone(config));
        } catch (const std::exception& e) {
            log << "axis value " << v << ": " << e.what() << "\n";
        }
        splits.emplace(v, build_splits(c.task));
        if (options.axis == SweepAxis::familiarity) {
            if (!table) {
                const Vocab vocab = Vocab::standard();
                table = config.bigram_table.empty()
                            ? build_bigram_table(gen_pretrain_corpus(config.pretrain.grammar_seed, config.pretrain.corpus_size))
                            : load_bigram_table(config.bigram_table, vocab);
            }
            fams[v] = familiarity(inputs_of(splits.at(v).train), *table);
        }
    }

    const std::string hash = config.hash();
    std::vector<SweepRow> rows(jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            const SweepJob& job = jobs[i];
            SweepRow& row = rows[i];
            row.axis_value = job.value;
            row.mode = std::string(to_string(job.mode));
            row.seed = job.seed;
            if (fams.count(job.value)) row.fam = fams.at(job.value);
            try {
                auto bit = backbones.find(job.value);
                if (bit == backbones.end()) throw InputError("no backbone for axis value " + job.value);
                TrainConfig tc = config.train;
                tc.mode = job.mode;
                tc.seed = job.seed;
                if (options.axis == SweepAxis::prompt_length) {
                    tc.prompt_length = static_cast<std::size_t>(parse_number(job.value, "prompt_length"));
                }
                const auto dir = root / csv_safe(job.value) / (row.mode + "_seed" + std::to_string(job.seed));
                RunRecord r = tune(bit->second, splits.at(job.value), tc, dir);
                r.header["experiment_hash"] = hash;
                r.save(dir);
                row.dev_bleu = r.best_dev.bleu;
                row.test_bleu = r.test.bleu;
            } catch (const std::exception& e) {
                row.status = "failed: " + csv_safe(e.what());
            }
            std::lock_guard lock(log_mutex);
            log << "  [" << (i + 1) << "/" << jobs.size() << "] " << row.axis_value << " " << row.mode << " seed "
                << row.seed << " " << (row.status == "ok" ? "test_bleu " + fmt(*row.test_bleu) : row.status) << "\n"
                << std::flush;
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(options.jobs, jobs.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    // RP against the mean fine_tune test BLEU at the same axis value.
    std::map<std::string, std::vector<double>> ft;
    for (const auto& r : rows) {
        if (r.mode == "fine_tune" && r.test_bleu) ft[r.axis_value].push_back(*r.test_bleu);
    }
    if (options.axis == SweepAxis::design) {
        for (const auto& r : rows) {
            if (r.mode == "fine_tune" && r.test_bleu) ft[""].push_back(*r.test_bleu);
        }
    }
    for (auto& r : rows) {
        if (!r.test_bleu) continue;
        const auto key = options.axis == SweepAxis::design ? std::string() : r.axis_value;
        auto it = ft.find(key);
        if (it == ft.end()) continue;
        const double base = mean_of(it->second);
        if (base > 0) r.rp = relative_performance(*r.test_bleu, base);
    }

    SweepResult result;
    result.rows = rows;
    result.csv = root / "sweep.csv";
    result.figure = root / "figure.csv";
    write_text_file(result.csv, sweep_csv(rows, hash));
    write_text_file(result.figure, sweep_figure_csv(rows, hash));
    if (options.svg) {
        result.svg = root / "figure.svg";
        write_text_file(result.svg, sweep_svg(rows, config.name + " / " + std::string(to_string(options.axis))));
    }
    log << "wrote " << result.csv.string() << "\n";
    return result;
}

std::string sweep_csv(const std::vector<SweepRow>& rows, const std::string& config_hash) {
    std::string out = "axis_value,mode,seed,dev_bleu,test_bleu,rp,fam,status,config_hash\n";
    for (const auto& r : rows) {
        out += csv_safe(r.axis_value) + "," + r.mode + "," + std::to_string(r.seed) + "," + opt_fmt(r.dev_bleu) + "," +
               opt_fmt(r.test_bleu) + "," + opt_fmt(r.rp) + "," + opt_fmt(r.fam) + "," + csv_safe(r.status) + "," +
               config_hash + "\n";
    }
    return out;
}

std::string sweep_figure_csv(const std::vector<SweepRow>& rows, const std::string& config_hash) {
    struct Agg {
        std::vector<double> dev, test, rp;
        std::optional<double> fam;
    };
    std::vector<std::pair<std::string, std::string>> order;
    std::map<std::pair<std::string, std::string>, Agg> agg;
    for (const auto& r : rows) {
        const auto key = std::make_pair(r.axis_value, r.mode);
        if (!agg.count(key)) order.push_back(key);
        Agg& a = agg[key];
        if (r.dev_bleu) a.dev.push_back(*r.dev_bleu);
        if (r.test_bleu) a.test.push_back(*r.test_bleu);
        if (r.rp) a.rp.push_back(*r.rp);
        if (r.fam) a.fam = r.fam;
    }
    std::string out = "axis_value,mode,runs,mean_dev_bleu,mean_test_bleu,std_test_bleu,mean_rp,fam,config_hash\n";
    for (const auto& key : order) {
        const Agg& a = agg.at(key);
        double sd = 0;
        const double m = mean_of(a.test);
        for (double x : a.test) sd += (x - m) * (x - m);
        sd = a.test.size() > 1 ? std::sqrt(sd / static_cast<double>(a.test.size() - 1)) : 0.0;
        out += csv_safe(key.first) + "," + key.second + "," + std::to_string(a.test.size()) + "," +
               (a.dev.empty() ? "" : fmt(mean_of(a.dev), 6)) + "," + (a.test.empty() ? "" : fmt(m, 6)) + "," +
               (a.test.empty() ? "" : fmt(sd, 6)) + "," + (a.rp.empty() ? "" : fmt(mean_of(a.rp), 6)) + "," +
               opt_fmt(a.fam) + "," + config_hash + "\n";
    }
    return out;
}

std::string sweep_svg(const std::vector<SweepRow>& rows, std::string_view title) {
    std::vector<std::string> values, modes;
    std::map<std::pair<std::string, std::string>, std::vector<double>> pts;
    for (const auto& r : rows) {
        if (std::find(values.begin(), values.end(), r.axis_value) == values.end()) values.push_back(r.axis_value);
        if (std::find(modes.begin(), modes.end(), r.mode) == modes.end()) modes.push_back(r.mode);
        if (r.test_bleu) pts[{r.axis_value, r.mode}].push_back(*r.test_bleu);
    }
    const double w = 640, h = 400, left = 60, right = 160, top = 40, bottom = 50;
    double ymax = 0.0;
    for (const auto& [k, v] : pts) ymax = std::max(ymax, mean_of(v));
    ymax = ymax > 0 ? ymax * 1.1 : 1.0;
    auto x_of = [&](std::size_t i) {
        return left + (values.size() == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(values.size() - 1)) *
                          (w - left - right);
    };
    auto y_of = [&](double v) { return h - bottom - v / ymax * (h - top - bottom); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<text x=\"" << left << "\" y=\"20\">" << title << " (mean test BLEU)</text>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = ymax * t / 4;
        s << "<text x=\"5\" y=\"" << y_of(v) + 4 << "\">" << fmt(v, 3) << "</text>\n";
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        s << "<text x=\"" << x_of(i) - 10 << "\" y=\"" << h - bottom + 20 << "\">" << values[i] << "</text>\n";
    }
    for (std::size_t m = 0; m < modes.size(); ++m) {
        const char* color = colors[m % 6];
        std::string path;
        for (std::size_t i = 0; i < values.size(); ++i) {
            auto it = pts.find({values[i], modes[m]});
            if (it == pts.end() || it->second.empty()) continue;
            const double x = x_of(i), y = y_of(mean_of(it->second));
            path += (path.empty() ? "" : " ") + fmt(x, 1) + "," + fmt(y, 1);
            s << "<circle cx=\"" << fmt(x, 1) << "\" cy=\"" << fmt(y, 1) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
        if (!path.empty()) s << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"" << path << "\"/>\n";
        s << "<text x=\"" << w - right + 10 << "\" y=\"" << top + 16 * m << "\" fill=\"" << color << "\">" << modes[m] << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

std::string familiarity_report(const std::vector<FamiliarityRow>& rows) {
    std::string out = "variant,RP(%),Fam\n";
    for (const auto& r : rows) {
        out += csv_safe(r.variant) + "," + (r.rp ? fmt(*r.rp * 100.0, 1) : std::string()) + "," + fmt(r.fam, 4) + "\n";
    }
    return out;
}

double relative_performance_of(const RunRecord& tuned, const RunRecord& fine_tuned) {
    if (tuned.header.value("backbone_hash", "") != fine_tuned.header.value("backbone_hash", "")) {
        throw ConfigError("refusing to compare runs trained against different backbones");
    }
    return relative_performance(tuned.test.bleu, fine_tuned.test.bleu);
}

std::string report_runs(const std::vector<RunRecord>& runs) {
    if (runs.empty()) return "no runs\n";
    const std::string hash = runs.front().header.value("backbone_hash", "");
    for (const auto& r : runs) {
        if (r.header.value("backbone_hash", "") != hash) {
            throw ConfigError("refusing to compare runs trained against different backbones");
        }
    }
    std::ostringstream s;
    s << "backbone " << hash << "\n";
    s << std::left << std::setw(16) << "mode" << std::setw(8) << "seed" << std::setw(10) << "best_step" << std::setw(10)
      << "dev_bleu" << std::setw(10) << "test_bleu" << "config_hash\n";
    std::map<std::string, std::vector<double>> by_mode;
    std::vector<std::string> order;
    for (const auto& r : runs) {
        const auto& cfg = r.header.at("config");
        const std::string mode = cfg.value("mode", "?");
        s << std::left << std::setw(16) << mode << std::setw(8) << cfg.value("seed", std::uint64_t{0}) << std::setw(10)
          << r.best_step << std::setw(10) << fmt(r.best_dev.bleu) << std::setw(10) << fmt(r.test.bleu)
          << r.header.value("config_hash", "") << "\n";
        if (!by_mode.count(mode)) order.push_back(mode);
        by_mode[mode].push_back(r.test.bleu);
    }
    s << "mean test BLEU:";
    for (const auto& m : order) s << " " << m << "=" << fmt(mean_of(by_mode[m]));
    s << "\n";
    if (by_mode.count("fine_tune") && mean_of(by_mode["fine_tune"]) > 0) {
        const double ft = mean_of(by_mode["fine_tune"]);
        s << "relative performance (%):";
        for (const auto& m : order) {
            if (m != "fine_tune") s << " " << m << "=" << fmt(100.0 * mean_of(by_mode[m]) / ft, 1);
        }
        s << "\n";
    }
    s << rescaling_note(TrainConfig::from_json(runs.front().header.at("config"))) << "\n";
    return s.str();
}

}  // namespace petlab
