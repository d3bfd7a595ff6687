// SPDX-License-Identifier: Apache-2.0
//
// Compact pre-LN transformer language models. The encoder-decoder variant
// reads a source embedding matrix in its encoder; the decoder-only variant
// packs [source rows; SEP; target prefix] into one causally masked sequence.
// Both take source embeddings rather than token ids at the bottom layer, so
// prompts and input adapters attach without touching backbone internals.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "petlab/params.h"
#include "petlab/tensor.h"

namespace petlab {

class Rng;

enum class Architecture { encoder_decoder, decoder_only };

std::string_view to_string(Architecture arch);
Architecture architecture_from_string(std::string_view s);

// Reserved token ids shared by the vocabulary and the backbone.
namespace tokens {
inline constexpr TokenId pad = 0;
inline constexpr TokenId bos = 1;
inline constexpr TokenId eos = 2;
inline constexpr TokenId sep = 3;
inline constexpr TokenId unk = 4;
inline constexpr TokenId reserved_count = 5;
}  // namespace tokens

struct BackboneConfig {
    Architecture arch = Architecture::encoder_decoder;
    int vocab_size = 0;
    int embed_dim = 64;
    int layers = 2;
    int heads = 4;
    int ffn_dim = 256;
    int max_positions = 256;
    double dropout = 0.0;
    std::uint64_t seed = 0;

    // Throws ConfigError on any violated constraint.
    void validate() const;

    nlohmann::json to_json() const;
    static BackboneConfig from_json(const nlohmann::json& j);

    // Desk-scale size presets: small (64, 2), base (128, 4), large (256, 6),
    // four heads and a 4x feed-forward width.
    static BackboneConfig preset(std::string_view size, Architecture arch, int vocab_size);
};

struct ForwardOptions {
    bool training = false;
    Rng* rng = nullptr;  // required when training with dropout > 0
};

class Backbone {
public:
    // Seeded scaled-normal initialization. Nothing is frozen.
    explicit Backbone(BackboneConfig config);
    Backbone(BackboneConfig config, ParamStore params);

    Backbone(const Backbone& other);
    Backbone& operator=(const Backbone& other);
    Backbone(Backbone&&) noexcept = default;
    Backbone& operator=(Backbone&&) noexcept = default;

    const BackboneConfig& config() const { return config_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const Tensor& embedding_table() const { return layout_.tokens; }

    void freeze() { params_.set_all_frozen(true); }
    void unfreeze() { params_.set_all_frozen(false); }

    // Token embeddings without positions: X in R^{n x e}.
    Tensor embed(std::span<const TokenId> ids) const;

    // Teacher-forced logits, one row per target token: row i scores
    // targets[i] given the source and targets[0..i). Positions are added to
    // the source rows here.
    Tensor forward(const Tensor& source_embeds, std::span<const TokenId> targets,
                   const ForwardOptions& options = {}) const;

    // Rows a (source, target) pair occupies in positional terms.
    std::size_t required_positions(std::size_t source_rows, std::size_t target_len) const;

    // Precomputed state for autoregressive next-token scoring.
    struct DecodeContext {
        Tensor source;                   // decoder-only: raw source rows
        Tensor memory;                   // encoder-decoder: encoder output
        std::vector<Tensor> cross_keys;  // [layer * heads + head]
        std::vector<Tensor> cross_values;
    };

    DecodeContext prepare_decoding(const Tensor& source_embeds) const;
    // Logits for the token following `prefix` (generated tokens, no BOS).
    std::vector<double> next_token_logits(const DecodeContext& context, std::span<const TokenId> prefix) const;

    nlohmann::json metadata() const;
    std::string hash() const;
    // `extra` (an object) is stored under "experiment" and excluded from hash().
    void save(const std::filesystem::path& path, const nlohmann::json& extra = nullptr) const;
    static Backbone load(const std::filesystem::path& path);

    // Closed-form parameter count for a configuration.
    static std::size_t parameter_count(const BackboneConfig& config);

private:
    struct Attention {
        std::vector<Tensor> wq, wk, wv, wo;
    };
    struct Norm {
        Tensor gain, bias;
    };
    struct FeedForward {
        Tensor w1, w2;
    };
    struct EncoderBlock {
        Norm ln1;
        Attention attn;
        Norm ln2;
        FeedForward ffn;
    };
    struct DecoderBlock {
        Norm ln1;
        Attention self_attn;
        Norm ln2;
        Attention cross_attn;
        Norm ln3;
        FeedForward ffn;
    };
    struct Layout {
        Tensor tokens;
        Tensor enc_pos, dec_pos;
        std::vector<EncoderBlock> encoder;
        std::vector<DecoderBlock> decoder;
        Norm enc_final, dec_final;
    };

    void initialize();
    void bind_layout();

    Tensor add_positions(const Tensor& rows, const Tensor& table, std::size_t offset) const;
    Tensor attention(const Tensor& query_rows, const Tensor& key_rows, const Attention& w, AttentionMask mask) const;
    Tensor cached_cross_attention(const Tensor& query_rows, const DecodeContext& ctx, std::size_t layer,
                                  const Attention& w) const;
    Tensor feed_forward(const Tensor& x, const FeedForward& w, const ForwardOptions& opt) const;
    Tensor norm(const Tensor& x, const Norm& n) const;
    Tensor maybe_dropout(const Tensor& x, const ForwardOptions& opt) const;
    Tensor encode(const Tensor& source_embeds, const ForwardOptions& opt) const;
    Tensor decode_rows(const Tensor& target_rows, const Tensor& memory, const DecodeContext* ctx,
                       const ForwardOptions& opt) const;
    Tensor output_logits(const Tensor& hidden) const;
    std::vector<TokenId> shifted_inputs(std::span<const TokenId> targets) const;

    BackboneConfig config_;
    ParamStore params_;
    Layout layout_;
};

}  // namespace petlab
