// SPDX-License-Identifier: Apache-2.0

#include "petlab/adaptation.h"

#include <cmath>

#include "petlab/errors.h"
#include "petlab/rng.h"

namespace petlab {

namespace {

constexpr std::uint64_t kPromptSalt = 0x70726f6d7074ULL;
constexpr std::uint64_t kAdapterSalt = 0x61646170746572ULL;

Tensor scaled_normal(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = rng.normal() * stddev;
    return Tensor::from_values({rows, cols}, std::move(v));
}

}  // namespace

// ---------------------------------------------------------------------------
// SoftPrompt
// ---------------------------------------------------------------------------

Tensor SoftPrompt::materialize() const {
    if (length_ == 0) throw ShapeError("empty prompt has no matrix");
    if (!reparam_) return params_.at("direct");
    Tensor hidden = relu(matmul(params_.at("core"), params_.at("wa")));
    return add(params_.at("base"), matmul(hidden, params_.at("wb")));
}

nlohmann::json SoftPrompt::metadata() const {
    return {{"length", length_}, {"embed_dim", embed_dim_}, {"reparam", reparam_}};
}

SoftPrompt make_soft_prompt(std::size_t k, const Backbone& backbone, std::uint64_t seed, bool reparam) {
    const auto& cfg = backbone.config();
    if (k > static_cast<std::size_t>(cfg.max_positions)) {
        throw LengthError("prompt length " + std::to_string(k) + " exceeds max_positions " +
                          std::to_string(cfg.max_positions));
    }
    SoftPrompt p;
    p.length_ = k;
    p.embed_dim_ = static_cast<std::size_t>(cfg.embed_dim);
    p.reparam_ = reparam;
    if (k == 0) return p;

    Rng rng(seed);
    const auto e = p.embed_dim_;
    std::vector<TokenId> ids(k);
    const auto choices = static_cast<std::uint64_t>(cfg.vocab_size - tokens::reserved_count);
    for (auto& id : ids) id = static_cast<TokenId>(tokens::reserved_count + rng.below(choices));
    Tensor rows;
    {
        NoGradGuard no_grad;
        rows = embedding(backbone.embedding_table(), ids).detach();
    }
    if (!reparam) {
        p.params_.add("direct", rows);
        return p;
    }
    p.params_.add("base", rows, /*frozen=*/true);
    p.params_.add("core", rows.clone());
    p.params_.add("wa", scaled_normal(rng, e, 2 * e, 1.0 / std::sqrt(double(e))));
    p.params_.add("wb", Tensor::zeros({2 * e, e}));
    return p;
}

SoftPrompt collapse_reparam(const SoftPrompt& prompt) {
    if (!prompt.reparam_ || prompt.length_ == 0) {
        SoftPrompt copy = prompt;
        copy.reparam_ = false;
        return copy;
    }
    SoftPrompt p;
    p.length_ = prompt.length_;
    p.embed_dim_ = prompt.embed_dim_;
    p.reparam_ = false;
    Tensor m;
    {
        NoGradGuard no_grad;
        m = prompt.materialize().detach();
    }
    p.params_.add("direct", m);
    return p;
}

SoftPrompt soft_prompt_from(const nlohmann::json& metadata, ParamStore params) {
    SoftPrompt p;
    p.length_ = metadata.at("length").get<std::size_t>();
    p.embed_dim_ = metadata.at("embed_dim").get<std::size_t>();
    p.reparam_ = metadata.at("reparam").get<bool>();
    p.params_ = std::move(params);
    if (p.length_ > 0) {
        const Tensor m = p.materialize();
        if (m.rows() != p.length_ || m.cols() != p.embed_dim_) throw InputError("prompt parameters do not match metadata");
    }
    return p;
}

// ---------------------------------------------------------------------------
// InputAdapter
// ---------------------------------------------------------------------------

std::string_view to_string(AdapterKind kind) { return kind == AdapterKind::token_wise ? "token_wise" : "sequence_wise"; }

Tensor InputAdapter::apply(const Tensor& x) const {
    if (x.cols() != embed_dim_) {
        throw ShapeError("adapter expects " + std::to_string(embed_dim_) + " columns, got " + std::to_string(x.cols()));
    }
    if (kind_ == AdapterKind::token_wise) {
        return add(x, matmul(relu(matmul(x, params_.at("w1"))), params_.at("w2")));
    }
    Tensor q = matmul(x, params_.at("wq"));
    Tensor k = matmul(x, params_.at("wk"));
    Tensor v = matmul(x, params_.at("wv"));
    Tensor a = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(double(embed_dim_))));
    return add(x, matmul(matmul(a, v), params_.at("wo")));
}

nlohmann::json InputAdapter::metadata() const {
    return {{"kind", std::string(to_string(kind_))}, {"embed_dim", embed_dim_}, {"hidden_dim", hidden_dim_}};
}

InputAdapter make_input_adapter(AdapterKind kind, std::size_t embed_dim, std::size_t hidden_dim, std::uint64_t seed) {
    if (embed_dim == 0) throw ConfigError("adapter embed_dim must be positive");
    InputAdapter a;
    a.kind_ = kind;
    a.embed_dim_ = embed_dim;
    Rng rng(seed);
    const double s = 1.0 / std::sqrt(double(embed_dim));
    if (kind == AdapterKind::token_wise) {
        if (hidden_dim == 0) throw ConfigError("adapter hidden_dim must be positive");
        a.hidden_dim_ = hidden_dim;
        a.params_.add("w1", scaled_normal(rng, embed_dim, hidden_dim, s));
        a.params_.add("w2", Tensor::zeros({hidden_dim, embed_dim}));
    } else {
        a.hidden_dim_ = embed_dim;
        a.params_.add("wq", scaled_normal(rng, embed_dim, embed_dim, s));
        a.params_.add("wk", scaled_normal(rng, embed_dim, embed_dim, s));
        a.params_.add("wv", scaled_normal(rng, embed_dim, embed_dim, s));
        a.params_.add("wo", Tensor::zeros({embed_dim, embed_dim}));
    }
    return a;
}

InputAdapter input_adapter_from(const nlohmann::json& metadata, ParamStore params) {
    InputAdapter a;
    const auto kind = metadata.at("kind").get<std::string>();
    if (kind == "token_wise") {
        a.kind_ = AdapterKind::token_wise;
    } else if (kind == "sequence_wise") {
        a.kind_ = AdapterKind::sequence_wise;
    } else {
        throw InputError("unknown adapter kind: " + kind);
    }
    a.embed_dim_ = metadata.at("embed_dim").get<std::size_t>();
    a.hidden_dim_ = metadata.at("hidden_dim").get<std::size_t>();
    a.params_ = std::move(params);
    return a;
}

Tensor compose_input(const SoftPrompt& prompt, const Tensor& adapted) {
    if (prompt.empty()) return adapted;
    Tensor c = prompt.materialize();
    if (c.cols() != adapted.cols()) throw ShapeError("prompt and input widths differ");
    const std::vector<Tensor> parts{c, adapted};
    return concat_rows(parts);
}

// ---------------------------------------------------------------------------
// Modes
// ---------------------------------------------------------------------------

std::string_view to_string(TuningMode mode) {
    switch (mode) {
        case TuningMode::fine_tune: return "fine_tune";
        case TuningMode::prompt_tune: return "prompt_tune";
        case TuningMode::input_tune: return "input_tune";
        case TuningMode::adapter_only: return "adapter_only";
        case TuningMode::input_tune_seq: return "input_tune_seq";
    }
    return "unknown";
}

TuningMode tuning_mode_from_string(std::string_view s) {
    for (auto m : {TuningMode::fine_tune, TuningMode::prompt_tune, TuningMode::input_tune, TuningMode::adapter_only,
                   TuningMode::input_tune_seq}) {
        if (to_string(m) == s) return m;
    }
    throw ConfigError("unknown tuning mode: " + std::string(s));
}

bool has_adapter(TuningMode mode) {
    return mode == TuningMode::input_tune || mode == TuningMode::adapter_only || mode == TuningMode::input_tune_seq;
}

bool uses_prompt(TuningMode mode) {
    return mode == TuningMode::prompt_tune || mode == TuningMode::input_tune || mode == TuningMode::input_tune_seq;
}

nlohmann::json AdaptationConfig::to_json() const {
    return {{"mode", std::string(to_string(mode))},
            {"prompt_length", prompt_length},
            {"adapter_hidden", adapter_hidden},
            {"reparam", reparam},
            {"seed", seed}};
}

AdaptationConfig AdaptationConfig::from_json(const nlohmann::json& j) {
    AdaptationConfig c;
    try {
        c.mode = tuning_mode_from_string(j.at("mode").get<std::string>());
        c.prompt_length = j.value("prompt_length", kDefaultPromptLength);
        c.adapter_hidden = j.value("adapter_hidden", std::size_t{0});
        c.reparam = j.value("reparam", true);
        c.seed = j.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("adaptation config: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// TunableModel
// ---------------------------------------------------------------------------

TunableModel::TunableModel(Backbone backbone, const AdaptationConfig& config)
    : config_(config), backbone_(std::move(backbone)) {
    if (!uses_prompt(config_.mode)) config_.prompt_length = 0;
    if (config_.mode == TuningMode::prompt_tune && config_.prompt_length == 0) {
        throw ConfigError("prompt_tune with prompt_length 0 has no trainable parameters");
    }
    const auto e = static_cast<std::size_t>(backbone_.config().embed_dim);
    if (config_.adapter_hidden == 0) config_.adapter_hidden = 2 * e;

    if (config_.mode == TuningMode::fine_tune) {
        backbone_.unfreeze();
    } else {
        backbone_.freeze();
    }
    prompt_ = make_soft_prompt(config_.prompt_length, backbone_, derive_seed(config_.seed, kPromptSalt), config_.reparam);
    if (has_adapter(config_.mode)) {
        const auto kind =
            config_.mode == TuningMode::input_tune_seq ? AdapterKind::sequence_wise : AdapterKind::token_wise;
        adapter_ = make_input_adapter(kind, e, config_.adapter_hidden, derive_seed(config_.seed, kAdapterSalt));
    }
}

Tensor TunableModel::source_embeddings(std::span<const TokenId> x) const {
    Tensor embeds = backbone_.embed(x);
    if (adapter_) embeds = adapter_->apply(embeds);
    return compose_input(prompt_, embeds);
}

Tensor TunableModel::forward(std::span<const TokenId> x, std::span<const TokenId> y,
                             const ForwardOptions& options) const {
    return backbone_.forward(source_embeddings(x), y, options);
}

void TunableModel::for_each_param(const std::function<void(const std::string&, Tensor&, bool)>& fn) {
    for (auto& e : backbone_.params().entries()) fn("backbone." + e.name, e.tensor, e.frozen);
    for (auto& e : prompt_.params().entries()) fn("prompt." + e.name, e.tensor, e.frozen);
    if (adapter_) {
        for (auto& e : adapter_->params().entries()) fn("adapter." + e.name, e.tensor, e.frozen);
    }
}

std::size_t TunableModel::trainable_count() const {
    std::size_t n = backbone_.params().trainable_element_count() + prompt_.params().trainable_element_count();
    if (adapter_) n += adapter_->params().trainable_element_count();
    return n;
}

void TunableModel::save_adaptation(const std::filesystem::path& path, const nlohmann::json& extra) const {
    const SoftPrompt collapsed = collapse_reparam(prompt_);
    ParamStore out;
    for (const auto& e : collapsed.params().entries()) out.add("prompt." + e.name, e.tensor.clone(), e.frozen);
    nlohmann::json meta = {{"kind", "adaptation"},
                           {"config", config_.to_json()},
                           {"prompt", collapsed.metadata()},
                           {"backbone_hash", backbone_.hash()}};
    if (adapter_) {
        for (const auto& e : adapter_->params().entries()) out.add("adapter." + e.name, e.tensor.clone(), e.frozen);
        meta["adapter"] = adapter_->metadata();
    }
    if (extra.is_object()) meta["experiment"] = extra;
    save_checkpoint(path, meta, out);
}

void TunableModel::load_adaptation(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.metadata.value("kind", "") != "adaptation") throw InputError("not an adaptation checkpoint: " + path.string());
    if (ck.metadata.value("backbone_hash", "") != backbone_.hash()) {
        throw InputError("adaptation was trained against a different backbone");
    }
    ParamStore prompt_params, adapter_params;
    for (auto& e : ck.params.entries()) {
        if (e.name.rfind("prompt.", 0) == 0) {
            prompt_params.add(e.name.substr(7), e.tensor, e.frozen);
        } else if (e.name.rfind("adapter.", 0) == 0) {
            adapter_params.add(e.name.substr(8), e.tensor, e.frozen);
        }
    }
    prompt_ = soft_prompt_from(ck.metadata.at("prompt"), std::move(prompt_params));
    if (ck.metadata.contains("adapter")) {
        adapter_ = input_adapter_from(ck.metadata.at("adapter"), std::move(adapter_params));
    } else {
        adapter_.reset();
    }
}

}  // namespace petlab
