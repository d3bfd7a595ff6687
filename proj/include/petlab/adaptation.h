// SPDX-License-Identifier: Apache-2.0
//
// Soft prompts, input adapters and the tunable model that composes them with
// a backbone: F(x) = [C; T(X)] fed to the encoder (or to the front of the
// packed decoder-only sequence).

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

#include "petlab/backbone.h"
#include "petlab/params.h"
#include "petlab/tensor.h"

namespace petlab {

inline constexpr std::size_t kDefaultPromptLength = 100;

// k x e continuous prompt. Direct form stores the matrix itself. The
// reparameterized form stores a frozen base B, a trainable core Z and a
// two-layer perceptron, materializing as B + relu(Z Wa) Wb with Wb zeroed at
// initialization.
class SoftPrompt {
public:
    SoftPrompt() = default;

    std::size_t length() const { return length_; }
    std::size_t embed_dim() const { return embed_dim_; }
    bool reparameterized() const { return reparam_; }
    bool empty() const { return length_ == 0; }

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // The k x e prompt matrix, differentiable w.r.t. the trainable parts.
    Tensor materialize() const;

    nlohmann::json metadata() const;

    friend SoftPrompt make_soft_prompt(std::size_t k, const Backbone& backbone, std::uint64_t seed, bool reparam);
    friend SoftPrompt collapse_reparam(const SoftPrompt& prompt);
    friend SoftPrompt soft_prompt_from(const nlohmann::json& metadata, ParamStore params);

private:
    std::size_t length_ = 0;
    std::size_t embed_dim_ = 0;
    bool reparam_ = false;
    ParamStore params_;
};

// Rows are drawn with replacement from the backbone's embedding table.
// Throws LengthError when k alone exceeds the backbone's position budget.
SoftPrompt make_soft_prompt(std::size_t k, const Backbone& backbone, std::uint64_t seed, bool reparam);
// Direct-form prompt with the same materialized matrix. No-op on direct form.
SoftPrompt collapse_reparam(const SoftPrompt& prompt);
SoftPrompt soft_prompt_from(const nlohmann::json& metadata, ParamStore params);

enum class AdapterKind { token_wise, sequence_wise };

std::string_view to_string(AdapterKind kind);

// token_wise: T(X)_i = X_i + relu(X_i W1) W2 with W1 e x h, W2 h x e.
// sequence_wise: T(X) = X + softmax(X Wq (X Wk)^T / sqrt(e)) X Wv Wo, one
// head over all rows.
class InputAdapter {
public:
    InputAdapter() = default;

    AdapterKind kind() const { return kind_; }
    std::size_t embed_dim() const { return embed_dim_; }
    std::size_t hidden_dim() const { return hidden_dim_; }

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    Tensor apply(const Tensor& x) const;

    nlohmann::json metadata() const;

    friend InputAdapter make_input_adapter(AdapterKind kind, std::size_t embed_dim, std::size_t hidden_dim,
                                           std::uint64_t seed);
    friend InputAdapter input_adapter_from(const nlohmann::json& metadata, ParamStore params);

private:
    AdapterKind kind_ = AdapterKind::token_wise;
    std::size_t embed_dim_ = 0;
    std::size_t hidden_dim_ = 0;
    ParamStore params_;
};

// W1 (or Wq, Wk, Wv) scaled-normal, W2 (or Wo) zero, so T starts as the
// identity. hidden_dim is ignored for sequence_wise.
InputAdapter make_input_adapter(AdapterKind kind, std::size_t embed_dim, std::size_t hidden_dim, std::uint64_t seed);
InputAdapter input_adapter_from(const nlohmann::json& metadata, ParamStore params);

// Row-wise [prompt; adapted], prompt first. An empty prompt returns adapted.
Tensor compose_input(const SoftPrompt& prompt, const Tensor& adapted);

enum class TuningMode { fine_tune, prompt_tune, input_tune, adapter_only, input_tune_seq };

std::string_view to_string(TuningMode mode);
TuningMode tuning_mode_from_string(std::string_view s);
// Whether the mode can run with an empty prompt.
bool has_adapter(TuningMode mode);
bool uses_prompt(TuningMode mode);

struct AdaptationConfig {
    TuningMode mode = TuningMode::input_tune;
    std::size_t prompt_length = kDefaultPromptLength;
    std::size_t adapter_hidden = 0;  // 0 selects 2e
    bool reparam = true;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    static AdaptationConfig from_json(const nlohmann::json& j);
};

// A backbone plus the mode's prompt and adapter. Frozen flags follow the
// mode: fine_tune trains the whole backbone, every other mode freezes it.
// Prompt and adapter seeds come from independent streams, so two modes
// built with the same seed share an identical prompt.
class TunableModel {
public:
    TunableModel(Backbone backbone, const AdaptationConfig& config);

    const AdaptationConfig& config() const { return config_; }
    Backbone& backbone() { return backbone_; }
    const Backbone& backbone() const { return backbone_; }
    const SoftPrompt& prompt() const { return prompt_; }
    SoftPrompt& prompt() { return prompt_; }
    const std::optional<InputAdapter>& adapter() const { return adapter_; }
    std::optional<InputAdapter>& adapter() { return adapter_; }

    // F(x) = [C; T(X)].
    Tensor source_embeddings(std::span<const TokenId> x) const;
    Tensor forward(std::span<const TokenId> x, std::span<const TokenId> y, const ForwardOptions& options = {}) const;

    // Every parameter with a component-qualified name ("backbone.", "prompt.",
    // "adapter."), in a fixed order.
    void for_each_param(const std::function<void(const std::string&, Tensor&, bool frozen)>& fn);
    std::size_t trainable_count() const;

    // Prompt (collapsed to direct form) and adapter in one container, stored
    // apart from the backbone.
    void save_adaptation(const std::filesystem::path& path, const nlohmann::json& extra = nullptr) const;
    void load_adaptation(const std::filesystem::path& path);

private:
    AdaptationConfig config_;
    Backbone backbone_;
    SoftPrompt prompt_;
    std::optional<InputAdapter> adapter_;
};

}  // namespace petlab
