// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "helpers.h"
#include "petlab/backbone.h"
#include "petlab/errors.h"
#include "petlab/params.h"

using namespace petlab;
using petlab::testing::copy_values;
using petlab::testing::random_tensor;

namespace {

BackboneConfig tiny(Architecture arch, int layers = 2) {
    BackboneConfig c;
    c.arch = arch;
    c.vocab_size = 50;
    c.embed_dim = 16;
    c.layers = layers;
    c.heads = 4;
    c.ffn_dim = 32;
    c.max_positions = 40;
    c.seed = 3;
    return c;
}

// Independent count: walk the architecture block by block.
std::size_t count_by_hand(const BackboneConfig& c) {
    const std::size_t e = c.embed_dim, d = e / c.heads, f = c.ffn_dim;
    const std::size_t ln = e + e;
    const std::size_t head = e * d + e * d + e * d + d * e;
    const std::size_t attn = head * c.heads;
    const std::size_t ffn = e * f + f * e;
    std::size_t n = c.vocab_size * e;
    if (c.arch == Architecture::encoder_decoder) {
        n += 2 * c.max_positions * e;
        for (int l = 0; l < c.layers; ++l) n += ln + attn + ln + ffn;
        for (int l = 0; l < c.layers; ++l) n += ln + attn + ln + attn + ln + ffn;
        if (c.layers > 0) n += 2 * ln;
    } else {
        n += c.max_positions * e;
        for (int l = 0; l < c.layers; ++l) n += ln + attn + ln + ffn;
        if (c.layers > 0) n += ln;
    }
    return n;
}

std::vector<TokenId> ids(std::initializer_list<int> v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_SUITE("backbone") {

TEST_CASE("initialization is deterministic and unfrozen") {
    Backbone a(tiny(Architecture::encoder_decoder)), b(tiny(Architecture::encoder_decoder));
    CHECK(a.params().snapshot() == b.params().snapshot());
    CHECK(a.params().trainable_element_count() == a.params().element_count());
    auto c = tiny(Architecture::encoder_decoder);
    c.seed = 4;
    CHECK(Backbone(c).params().snapshot() != a.params().snapshot());
}

TEST_CASE("parameter count matches enumeration and closed form") {
    for (auto arch : {Architecture::encoder_decoder, Architecture::decoder_only}) {
        for (int layers : {0, 1, 2}) {
            auto c = tiny(arch, layers);
            Backbone b(c);
            CHECK(b.params().element_count() == count_by_hand(c));
            CHECK(Backbone::parameter_count(c) == count_by_hand(c));
        }
    }
}

TEST_CASE("config validation") {
    auto c = tiny(Architecture::encoder_decoder);
    c.heads = 3;
    CHECK_THROWS_AS(Backbone{c}, ConfigError);
    c = tiny(Architecture::encoder_decoder);
    c.dropout = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(BackboneConfig::from_json(tiny(Architecture::decoder_only).to_json()).to_json() ==
          tiny(Architecture::decoder_only).to_json());
    CHECK_THROWS_AS(BackboneConfig::preset("huge", Architecture::decoder_only, 50), ConfigError);
    auto base = BackboneConfig::preset("base", Architecture::encoder_decoder, 50);
    CHECK(base.embed_dim == 128);
    CHECK(base.layers == 4);
}

TEST_CASE("forward logits shape and length limit") {
    for (auto arch : {Architecture::encoder_decoder, Architecture::decoder_only}) {
        Backbone b(tiny(arch));
        const auto y = ids({7, 8, 9, 2});
        Tensor logits = b.forward(b.embed(ids({5, 6, 7})), y);
        CHECK(logits.rows() == 4);
        CHECK(logits.cols() == 50);
        std::vector<TokenId> longx(41, 6);
        CHECK_THROWS_AS(b.forward(b.embed(longx), y), LengthError);
    }
}

TEST_CASE("embedding table rows are token embeddings") {
    Backbone b(tiny(Architecture::encoder_decoder));
    Tensor e = b.embed(ids({9}));
    for (std::size_t j = 0; j < 16; ++j) CHECK(e.at(0, j) == b.embedding_table().at(9, j));
}

TEST_CASE("permuting source rows changes encoder-decoder logits") {
    Backbone b(tiny(Architecture::encoder_decoder));
    const auto y = ids({7, 8});
    auto l1 = copy_values(b.forward(b.embed(ids({5, 6, 10})), y));
    auto l2 = copy_values(b.forward(b.embed(ids({6, 5, 10})), y));
    double diff = 0;
    for (std::size_t i = 0; i < l1.size(); ++i) diff = std::max(diff, std::abs(l1[i] - l2[i]));
    CHECK(diff > 1e-6);
}

TEST_CASE("zero-layer model is target embedding times table transpose") {
    for (auto arch : {Architecture::encoder_decoder, Architecture::decoder_only}) {
        Backbone b(tiny(arch, 0));
        const auto x = ids({5, 6});
        const auto y = ids({11, 12, 13});
        Tensor logits = b.forward(b.embed(x), y);
        const Tensor& table = b.embedding_table();
        const Tensor& pos = b.params().at("dec.pos");
        // Decoder inputs: BOS then y[0..m-1); decoder-only rows sit after x and SEP.
        const std::vector<TokenId> inputs{arch == Architecture::encoder_decoder ? tokens::bos : tokens::sep, 11, 12};
        const std::size_t offset = arch == Architecture::encoder_decoder ? 0 : x.size();
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t v = 0; v < 50; ++v) {
                double expect = 0.0;
                for (std::size_t j = 0; j < 16; ++j) {
                    const double h = table.at(static_cast<std::size_t>(inputs[i]), j) + pos.at(offset + i, j);
                    expect += h * table.at(v, j);
                }
                CHECK(logits.at(i, v) == doctest::Approx(expect).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("logits are causal in the targets") {
    Rng rng(5);
    for (auto arch : {Architecture::encoder_decoder, Architecture::decoder_only}) {
        Backbone b(tiny(arch));
        const auto x = ids({5, 6, 7});
        const auto y1 = ids({10, 11, 12, 13, 14});
        for (std::size_t cut = 0; cut < y1.size(); ++cut) {
            auto y2 = y1;
            for (std::size_t j = cut + 1; j < y2.size(); ++j) y2[j] = static_cast<TokenId>(5 + rng.below(40));
            Tensor a = b.forward(b.embed(x), y1);
            Tensor c = b.forward(b.embed(x), y2);
            // Row i predicts y[i] from y[0..i), so rows 0..cut+1 only see y[0..cut].
            for (std::size_t i = 0; i <= std::min(cut + 1, y1.size() - 1); ++i) {
                for (std::size_t v = 0; v < 50; ++v) CHECK(a.at(i, v) == c.at(i, v));
            }
        }
    }
}

TEST_CASE("logits depend on every source row") {
    for (auto arch : {Architecture::encoder_decoder, Architecture::decoder_only}) {
        Backbone b(tiny(arch));
        const auto x = ids({5, 6, 7, 8});
        const auto y = ids({10, 11});
        Tensor src = b.embed(x);
        const auto base = copy_values(b.forward(src, y));
        for (std::size_t r = 0; r < x.size(); ++r) {
            Tensor moved = src.clone();
            // A uniform shift across a row would vanish under layer norm.
            moved.mutable_values()[r * 16] += 1.0;
            const auto out = copy_values(b.forward(moved, y));
            double diff = 0;
            for (std::size_t i = 0; i < out.size(); ++i) diff = std::max(diff, std::abs(out[i] - base[i]));
            CHECK(diff > 1e-9);
        }
    }
}

TEST_CASE("incremental next-token logits match teacher forcing") {
    for (auto arch : {Architecture::encoder_decoder, Architecture::decoder_only}) {
        Backbone b(tiny(arch));
        const auto x = ids({5, 6, 7});
        const auto y = ids({10, 11, 12, 13});
        Tensor full = b.forward(b.embed(x), y);
        auto ctx = b.prepare_decoding(b.embed(x));
        for (std::size_t i = 0; i < y.size(); ++i) {
            const std::vector<TokenId> prefix(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(i));
            const auto step = b.next_token_logits(ctx, prefix);
            for (std::size_t v = 0; v < 50; ++v) CHECK(step[v] == doctest::Approx(full.at(i, v)).epsilon(1e-12));
        }
    }
}

TEST_CASE("dropout is seeded and only active in training") {
    auto c = tiny(Architecture::encoder_decoder);
    c.dropout = 0.2;
    Backbone b(c);
    const auto x = ids({5, 6, 7});
    const auto y = ids({10, 11});
    auto eval1 = copy_values(b.forward(b.embed(x), y));
    auto eval2 = copy_values(b.forward(b.embed(x), y));
    CHECK(eval1 == eval2);
    Rng r1(1), r2(1);
    auto t1 = copy_values(b.forward(b.embed(x), y, {true, &r1}));
    auto t2 = copy_values(b.forward(b.embed(x), y, {true, &r2}));
    CHECK(t1 == t2);
    CHECK(t1 != eval1);
    CHECK_THROWS_AS(b.forward(b.embed(x), y, {true, nullptr}), ConfigError);
}

TEST_CASE("checkpoint round trip is byte-stable") {
    const auto dir = std::filesystem::temp_directory_path() / "petlab_backbone_test";
    std::filesystem::create_directories(dir);
    Backbone b(tiny(Architecture::decoder_only));
    b.freeze();
    b.save(dir / "a.ckpt");
    Backbone loaded = Backbone::load(dir / "a.ckpt");
    CHECK(loaded.params().snapshot() == b.params().snapshot());
    CHECK(loaded.hash() == b.hash());
    CHECK(loaded.params().trainable_element_count() == 0);
    loaded.save(dir / "b.ckpt");
    CHECK(read_text_file(dir / "a.ckpt") == read_text_file(dir / "b.ckpt"));

    write_text_file(dir / "bad.ckpt", "not a checkpoint");
    CHECK_THROWS_AS(Backbone::load(dir / "bad.ckpt"), InputError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("copies are deep") {
    Backbone a(tiny(Architecture::encoder_decoder));
    Backbone b = a;
    b.params().at("tokens").mutable_values()[0] += 1.0;
    CHECK(a.params().at("tokens").values()[0] != b.params().at("tokens").values()[0]);
    CHECK(b.embedding_table().values()[0] == b.params().at("tokens").values()[0]);
}

}  // TEST_SUITE
