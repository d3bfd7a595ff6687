// SPDX-License-Identifier: Apache-2.0

#include "petlab/backbone.h"

#include <cmath>
#include <string>

#include "petlab/errors.h"
#include "petlab/rng.h"

namespace petlab {

std::string_view to_string(Architecture arch) {
    return arch == Architecture::encoder_decoder ? "encoder_decoder" : "decoder_only";
}

Architecture architecture_from_string(std::string_view s) {
    if (s == "encoder_decoder") return Architecture::encoder_decoder;
    if (s == "decoder_only") return Architecture::decoder_only;
    throw ConfigError("unknown architecture: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void BackboneConfig::validate() const {
    if (vocab_size <= tokens::reserved_count) throw ConfigError("vocab_size must exceed the reserved token count");
    if (embed_dim <= 0) throw ConfigError("embed_dim must be positive");
    if (layers < 0) throw ConfigError("layers must be nonnegative");
    if (heads <= 0) throw ConfigError("heads must be positive");
    if (embed_dim % heads != 0) {
        throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " +
                          std::to_string(heads));
    }
    if (ffn_dim <= 0) throw ConfigError("ffn_dim must be positive");
    if (max_positions <= 0) throw ConfigError("max_positions must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
}

nlohmann::json BackboneConfig::to_json() const {
    return {{"arch", std::string(to_string(arch))},
            {"vocab_size", vocab_size},
            {"embed_dim", embed_dim},
            {"layers", layers},
            {"heads", heads},
            {"ffn_dim", ffn_dim},
            {"max_positions", max_positions},
            {"dropout", dropout},
            {"seed", seed}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
    BackboneConfig c;
    try {
        c.arch = architecture_from_string(j.at("arch").get<std::string>());
        c.vocab_size = j.at("vocab_size").get<int>();
        c.embed_dim = j.at("embed_dim").get<int>();
        c.layers = j.at("layers").get<int>();
        c.heads = j.at("heads").get<int>();
        c.ffn_dim = j.at("ffn_dim").get<int>();
        c.max_positions = j.at("max_positions").get<int>();
        c.dropout = j.at("dropout").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("backbone config: ") + e.what());
    }
    c.validate();
    return c;
}

BackboneConfig BackboneConfig::preset(std::string_view size, Architecture arch, int vocab_size) {
    BackboneConfig c;
    c.arch = arch;
    c.vocab_size = vocab_size;
    if (size == "small") {
        c.embed_dim = 64;
        c.layers = 2;
    } else if (size == "base") {
        c.embed_dim = 128;
        c.layers = 4;
    } else if (size == "large") {
        c.embed_dim = 256;
        c.layers = 6;
    } else {
        throw ConfigError("unknown backbone size: " + std::string(size));
    }
    c.heads = 4;
    c.ffn_dim = 4 * c.embed_dim;
    c.max_positions = 256;
    return c;
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

Backbone::Backbone(BackboneConfig config) : config_(std::move(config)) {
    config_.validate();
    initialize();
    bind_layout();
}

Backbone::Backbone(BackboneConfig config, ParamStore params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    bind_layout();
    if (params_.element_count() != parameter_count(config_)) {
        throw InputError("parameter set does not match the backbone configuration");
    }
}

Backbone::Backbone(const Backbone& other) : config_(other.config_), params_(other.params_) { bind_layout(); }

Backbone& Backbone::operator=(const Backbone& other) {
    if (this != &other) {
        config_ = other.config_;
        params_ = other.params_;
        bind_layout();
    }
    return *this;
}

void Backbone::initialize() {
    Rng rng(config_.seed);
    const auto e = static_cast<std::size_t>(config_.embed_dim);
    const auto f = static_cast<std::size_t>(config_.ffn_dim);
    const auto v = static_cast<std::size_t>(config_.vocab_size);
    const auto p = static_cast<std::size_t>(config_.max_positions);
    const auto h = static_cast<std::size_t>(config_.heads);
    const std::size_t d = e / h;
    const double residual_scale = 1.0 / std::sqrt(2.0 * std::max(1, config_.layers));

    auto normal = [&](std::size_t r, std::size_t c, double stddev) {
        std::vector<double> vals(r * c);
        for (auto& x : vals) x = rng.normal() * stddev;
        return Tensor::from_values({r, c}, std::move(vals));
    };
    auto constant = [](std::size_t c, double value) {
        return Tensor::from_values({1, c}, std::vector<double>(c, value));
    };
    auto add_norm = [&](const std::string& prefix) {
        params_.add(prefix + ".gain", constant(e, 1.0));
        params_.add(prefix + ".bias", constant(e, 0.0));
    };
    auto add_attention = [&](const std::string& prefix) {
        for (std::size_t j = 0; j < h; ++j) {
            const std::string hp = prefix + ".h" + std::to_string(j);
            params_.add(hp + ".wq", normal(e, d, 1.0 / std::sqrt(double(e))));
            params_.add(hp + ".wk", normal(e, d, 1.0 / std::sqrt(double(e))));
            params_.add(hp + ".wv", normal(e, d, 1.0 / std::sqrt(double(e))));
            params_.add(hp + ".wo", normal(d, e, residual_scale / std::sqrt(double(e))));
        }
    };
    auto add_ffn = [&](const std::string& prefix) {
        params_.add(prefix + ".w1", normal(e, f, 1.0 / std::sqrt(double(e))));
        params_.add(prefix + ".w2", normal(f, e, residual_scale / std::sqrt(double(f))));
    };

    params_.add("tokens", normal(v, e, 1.0 / std::sqrt(double(e))));
    if (config_.arch == Architecture::encoder_decoder) {
        params_.add("enc.pos", normal(p, e, 0.5 / std::sqrt(double(e))));
        params_.add("dec.pos", normal(p, e, 0.5 / std::sqrt(double(e))));
        for (int l = 0; l < config_.layers; ++l) {
            const std::string lp = "enc." + std::to_string(l);
            add_norm(lp + ".ln1");
            add_attention(lp + ".attn");
            add_norm(lp + ".ln2");
            add_ffn(lp + ".ffn");
        }
        if (config_.layers > 0) add_norm("enc.ln_f");
        for (int l = 0; l < config_.layers; ++l) {
            const std::string lp = "dec." + std::to_string(l);
            add_norm(lp + ".ln1");
            add_attention(lp + ".self");
            add_norm(lp + ".ln2");
            add_attention(lp + ".cross");
            add_norm(lp + ".ln3");
            add_ffn(lp + ".ffn");
        }
        if (config_.layers > 0) add_norm("dec.ln_f");
    } else {
        params_.add("dec.pos", normal(p, e, 0.5 / std::sqrt(double(e))));
        for (int l = 0; l < config_.layers; ++l) {
            const std::string lp = "dec." + std::to_string(l);
            add_norm(lp + ".ln1");
            add_attention(lp + ".self");
            add_norm(lp + ".ln2");
            add_ffn(lp + ".ffn");
        }
        if (config_.layers > 0) add_norm("dec.ln_f");
    }
}

void Backbone::bind_layout() {
    Layout l;
    const auto h = static_cast<std::size_t>(config_.heads);
    auto norm_at = [&](const std::string& prefix) { return Norm{params_.at(prefix + ".gain"), params_.at(prefix + ".bias")}; };
    auto attn_at = [&](const std::string& prefix) {
        Attention a;
        for (std::size_t j = 0; j < h; ++j) {
            const std::string hp = prefix + ".h" + std::to_string(j);
            a.wq.push_back(params_.at(hp + ".wq"));
            a.wk.push_back(params_.at(hp + ".wk"));
            a.wv.push_back(params_.at(hp + ".wv"));
            a.wo.push_back(params_.at(hp + ".wo"));
        }
        return a;
    };
    auto ffn_at = [&](const std::string& prefix) { return FeedForward{params_.at(prefix + ".w1"), params_.at(prefix + ".w2")}; };

    l.tokens = params_.at("tokens");
    l.dec_pos = params_.at("dec.pos");
    if (config_.arch == Architecture::encoder_decoder) {
        l.enc_pos = params_.at("enc.pos");
        for (int i = 0; i < config_.layers; ++i) {
            const std::string lp = "enc." + std::to_string(i);
            l.encoder.push_back({norm_at(lp + ".ln1"), attn_at(lp + ".attn"), norm_at(lp + ".ln2"), ffn_at(lp + ".ffn")});
        }
        if (config_.layers > 0) l.enc_final = norm_at("enc.ln_f");
    }
    for (int i = 0; i < config_.layers; ++i) {
        const std::string lp = "dec." + std::to_string(i);
        DecoderBlock b;
        b.ln1 = norm_at(lp + ".ln1");
        b.self_attn = attn_at(lp + ".self");
        b.ln2 = norm_at(lp + ".ln2");
        if (config_.arch == Architecture::encoder_decoder) {
            b.cross_attn = attn_at(lp + ".cross");
            b.ln3 = norm_at(lp + ".ln3");
        }
        b.ffn = ffn_at(lp + ".ffn");
        l.decoder.push_back(std::move(b));
    }
    if (config_.layers > 0) l.dec_final = norm_at("dec.ln_f");
    layout_ = std::move(l);
}

std::size_t Backbone::parameter_count(const BackboneConfig& c) {
    const std::size_t e = c.embed_dim, f = c.ffn_dim, v = c.vocab_size, p = c.max_positions, L = c.layers;
    const std::size_t norm = 2 * e;
    const std::size_t attn = 4 * e * e;
    const std::size_t ffn = 2 * e * f;
    const std::size_t final_norm = L > 0 ? norm : 0;
    if (c.arch == Architecture::encoder_decoder) {
        return v * e + 2 * p * e + L * (2 * norm + attn + ffn) + final_norm + L * (3 * norm + 2 * attn + ffn) +
               final_norm;
    }
    return v * e + p * e + L * (2 * norm + attn + ffn) + final_norm;
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

Tensor Backbone::embed(std::span<const TokenId> ids) const { return embedding(layout_.tokens, ids); }

Tensor Backbone::add_positions(const Tensor& rows, const Tensor& table, std::size_t offset) const {
    std::vector<TokenId> pos(rows.rows());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<TokenId>(offset + i);
    return add(rows, embedding(table, pos));
}

Tensor Backbone::norm(const Tensor& x, const Norm& n) const { return layer_norm(x, n.gain, n.bias, 1e-10); }

Tensor Backbone::maybe_dropout(const Tensor& x, const ForwardOptions& opt) const {
    if (!opt.training || config_.dropout <= 0.0) return x;
    if (opt.rng == nullptr) throw ConfigError("training with dropout requires an rng");
    return dropout(x, config_.dropout, *opt.rng);
}

Tensor Backbone::attention(const Tensor& query_rows, const Tensor& key_rows, const Attention& w,
                           AttentionMask mask) const {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config_.embed_dim / config_.heads));
    Tensor out;
    for (std::size_t j = 0; j < w.wq.size(); ++j) {
        Tensor q = matmul(query_rows, w.wq[j]);
        Tensor k = matmul(key_rows, w.wk[j]);
        Tensor v = matmul(key_rows, w.wv[j]);
        Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_d);
        Tensor head = matmul(matmul(softmax_rows(scores, mask), v), w.wo[j]);
        out = out.defined() ? add(out, head) : head;
    }
    return out;
}

Tensor Backbone::cached_cross_attention(const Tensor& query_rows, const DecodeContext& ctx, std::size_t layer,
                                        const Attention& w) const {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config_.embed_dim / config_.heads));
    const std::size_t h = w.wq.size();
    Tensor out;
    for (std::size_t j = 0; j < h; ++j) {
        Tensor q = matmul(query_rows, w.wq[j]);
        Tensor scores = scale(matmul(q, ctx.cross_keys[layer * h + j]), inv_sqrt_d);
        Tensor head = matmul(matmul(softmax_rows(scores), ctx.cross_values[layer * h + j]), w.wo[j]);
        out = out.defined() ? add(out, head) : head;
    }
    return out;
}

Tensor Backbone::feed_forward(const Tensor& x, const FeedForward& w, const ForwardOptions& opt) const {
    return matmul(maybe_dropout(relu(matmul(x, w.w1)), opt), w.w2);
}

Tensor Backbone::encode(const Tensor& source_embeds, const ForwardOptions& opt) const {
    Tensor x = maybe_dropout(add_positions(source_embeds, layout_.enc_pos, 0), opt);
    for (const auto& b : layout_.encoder) {
        Tensor n1 = norm(x, b.ln1);
        x = add(x, maybe_dropout(attention(n1, n1, b.attn, AttentionMask::none), opt));
        x = add(x, maybe_dropout(feed_forward(norm(x, b.ln2), b.ffn, opt), opt));
    }
    if (!layout_.encoder.empty()) x = norm(x, layout_.enc_final);
    return x;
}

// Decoder stack over already position-encoded rows. For the encoder-decoder
// variant exactly one of `memory` / `ctx` supplies the encoder side.
Tensor Backbone::decode_rows(const Tensor& rows, const Tensor& memory, const DecodeContext* ctx,
                             const ForwardOptions& opt) const {
    Tensor x = rows;
    const bool cross = config_.arch == Architecture::encoder_decoder;
    for (std::size_t l = 0; l < layout_.decoder.size(); ++l) {
        const auto& b = layout_.decoder[l];
        Tensor n1 = norm(x, b.ln1);
        x = add(x, maybe_dropout(attention(n1, n1, b.self_attn, AttentionMask::causal), opt));
        if (cross) {
            Tensor n2 = norm(x, b.ln2);
            Tensor c = ctx ? cached_cross_attention(n2, *ctx, l, b.cross_attn)
                           : attention(n2, memory, b.cross_attn, AttentionMask::none);
            x = add(x, maybe_dropout(c, opt));
            x = add(x, maybe_dropout(feed_forward(norm(x, b.ln3), b.ffn, opt), opt));
        } else {
            x = add(x, maybe_dropout(feed_forward(norm(x, b.ln2), b.ffn, opt), opt));
        }
    }
    if (!layout_.decoder.empty()) x = norm(x, layout_.dec_final);
    return x;
}

Tensor Backbone::output_logits(const Tensor& hidden) const { return matmul(hidden, transpose(layout_.tokens)); }

std::vector<TokenId> Backbone::shifted_inputs(std::span<const TokenId> targets) const {
    std::vector<TokenId> in;
    in.reserve(targets.size());
    in.push_back(tokens::bos);
    for (std::size_t i = 0; i + 1 < targets.size(); ++i) in.push_back(targets[i]);
    return in;
}

std::size_t Backbone::required_positions(std::size_t source_rows, std::size_t target_len) const {
    if (config_.arch == Architecture::encoder_decoder) return std::max(source_rows, target_len);
    return source_rows + target_len;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

Tensor Backbone::forward(const Tensor& source_embeds, std::span<const TokenId> targets,
                         const ForwardOptions& opt) const {
    if (targets.empty()) throw ShapeError("forward requires at least one target token");
    if (source_embeds.cols() != static_cast<std::size_t>(config_.embed_dim)) {
        throw ShapeError("source embedding width does not match the backbone");
    }
    const std::size_t s = source_embeds.rows();
    const std::size_t m = targets.size();
    if (required_positions(s, m) > static_cast<std::size_t>(config_.max_positions)) {
        throw LengthError("sequence of " + std::to_string(required_positions(s, m)) + " positions exceeds max_positions " +
                          std::to_string(config_.max_positions));
    }
    const auto inputs = shifted_inputs(targets);

    if (config_.arch == Architecture::encoder_decoder) {
        Tensor memory = encode(source_embeds, opt);
        Tensor rows = maybe_dropout(add_positions(embed(inputs), layout_.dec_pos, 0), opt);
        return output_logits(decode_rows(rows, memory, nullptr, opt));
    }

    // Decoder-only: [source; SEP; targets[0..m-1)], logits from the SEP row on.
    std::vector<Tensor> parts{source_embeds, embed(std::vector<TokenId>{tokens::sep})};
    if (m > 1) parts.push_back(embed(std::span<const TokenId>(inputs).subspan(1)));
    Tensor packed = maybe_dropout(add_positions(concat_rows(parts), layout_.dec_pos, 0), opt);
    Tensor hidden = decode_rows(packed, Tensor(), nullptr, opt);
    // Row selection as a 0/1 matmul keeps the kernel set closed.
    std::vector<double> select(m * hidden.rows(), 0.0);
    for (std::size_t i = 0; i < m; ++i) select[i * hidden.rows() + s + i] = 1.0;
    Tensor target_hidden = matmul(Tensor::from_values({m, hidden.rows()}, std::move(select)), hidden);
    return output_logits(target_hidden);
}

Backbone::DecodeContext Backbone::prepare_decoding(const Tensor& source_embeds) const {
    NoGradGuard no_grad;
    DecodeContext ctx;
    if (config_.arch == Architecture::decoder_only) {
        ctx.source = source_embeds.detach();
        return ctx;
    }
    if (source_embeds.rows() > static_cast<std::size_t>(config_.max_positions)) {
        throw LengthError("source exceeds max_positions");
    }
    ctx.memory = encode(source_embeds.detach(), {});
    for (const auto& b : layout_.decoder) {
        for (std::size_t j = 0; j < b.cross_attn.wk.size(); ++j) {
            ctx.cross_keys.push_back(transpose(matmul(ctx.memory, b.cross_attn.wk[j])));
            ctx.cross_values.push_back(matmul(ctx.memory, b.cross_attn.wv[j]));
        }
    }
    return ctx;
}

std::vector<double> Backbone::next_token_logits(const DecodeContext& ctx, std::span<const TokenId> prefix) const {
    NoGradGuard no_grad;
    std::vector<TokenId> inputs;
    inputs.reserve(prefix.size() + 1);
    Tensor hidden;
    if (config_.arch == Architecture::encoder_decoder) {
        if (prefix.size() + 1 > static_cast<std::size_t>(config_.max_positions)) throw LengthError("decode prefix too long");
        inputs.push_back(tokens::bos);
        inputs.insert(inputs.end(), prefix.begin(), prefix.end());
        Tensor rows = add_positions(embed(inputs), layout_.dec_pos, 0);
        hidden = decode_rows(rows, Tensor(), &ctx, {});
    } else {
        inputs.push_back(tokens::sep);
        inputs.insert(inputs.end(), prefix.begin(), prefix.end());
        const std::size_t total = ctx.source.rows() + inputs.size();
        if (total > static_cast<std::size_t>(config_.max_positions)) throw LengthError("decode sequence too long");
        std::vector<Tensor> parts{ctx.source, embed(inputs)};
        hidden = decode_rows(add_positions(concat_rows(parts), layout_.dec_pos, 0), Tensor(), nullptr, {});
    }
    // Only the last row is needed.
    const std::size_t e = hidden.cols();
    std::vector<double> last(hidden.values().end() - static_cast<std::ptrdiff_t>(e), hidden.values().end());
    Tensor logits = output_logits(Tensor::from_values({1, e}, std::move(last)));
    return {logits.values().begin(), logits.values().end()};
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

nlohmann::json Backbone::metadata() const {
    return {{"kind", "backbone"}, {"config", config_.to_json()}, {"config_hash", config_hash(config_.to_json())}};
}

std::string Backbone::hash() const {
    // Content hash over the canonical checkpoint bytes' metadata plus values.
    std::string bytes = metadata().dump();
    for (const auto& e : params_.entries()) {
        bytes += e.name;
        for (double v : e.tensor.values()) {
            const auto u = std::bit_cast<std::uint64_t>(v);
            for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
        }
    }
    return fnv1a_hex(bytes);
}

void Backbone::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
    nlohmann::json meta = metadata();
    if (extra.is_object()) meta["experiment"] = extra;
    save_checkpoint(path, meta, params_);
}

Backbone Backbone::load(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.metadata.value("kind", "") != "backbone") throw InputError("checkpoint is not a backbone: " + path.string());
    auto config = BackboneConfig::from_json(ck.metadata.at("config"));
    return Backbone(std::move(config), std::move(ck.params));
}

}  // namespace petlab
