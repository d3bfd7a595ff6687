// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "helpers.h"
#include "petlab/adaptation.h"
#include "petlab/errors.h"
#include "petlab/grad_check.h"

using namespace petlab;
using petlab::testing::copy_values;
using petlab::testing::random_tensor;

namespace {

BackboneConfig tiny_config(Architecture arch = Architecture::encoder_decoder) {
    BackboneConfig c;
    c.arch = arch;
    c.vocab_size = 12;
    c.embed_dim = 8;
    c.layers = 1;
    c.heads = 2;
    c.ffn_dim = 16;
    c.max_positions = 24;
    c.seed = 11;
    return c;
}

void randomize(Tensor& t, Rng& rng, double s = 0.3) {
    for (auto& v : t.mutable_values()) v = rng.normal() * s;
}

// Gives zero-initialized branches nonzero weights so every trainable
// parameter receives a generic gradient.
void perturb_zero_inits(TunableModel& m, Rng& rng) {
    if (m.prompt().reparameterized() && !m.prompt().empty()) randomize(m.prompt().params().at("wb"), rng);
    if (m.adapter()) {
        auto& p = m.adapter()->params();
        randomize(p.at(p.contains("w2") ? "w2" : "wo"), rng);
    }
}

Tensor batch_loss(const TunableModel& m) {
    const std::vector<TokenId> x1{5, 7, 9}, y1{6, 8, 2};
    const std::vector<TokenId> x2{10, 11, 5}, y2{9, 2};
    return add(cross_entropy(m.forward(x1, y1), y1), cross_entropy(m.forward(x2, y2), y2));
}

std::set<std::string> declared(TuningMode mode, bool reparam, const Backbone& b) {
    std::set<std::string> s;
    if (mode == TuningMode::fine_tune) {
        for (const auto& e : b.params().entries()) s.insert("backbone." + e.name);
        return s;
    }
    if (uses_prompt(mode)) {
        if (reparam) {
            s.insert({"prompt.core", "prompt.wa", "prompt.wb"});
        } else {
            s.insert("prompt.direct");
        }
    }
    if (mode == TuningMode::input_tune || mode == TuningMode::adapter_only) s.insert({"adapter.w1", "adapter.w2"});
    if (mode == TuningMode::input_tune_seq) s.insert({"adapter.wq", "adapter.wk", "adapter.wv", "adapter.wo"});
    return s;
}

}  // namespace

TEST_SUITE("adaptation") {

TEST_CASE("adapter hand example") {
    const std::vector<double> w1{1, 0, 0, 1}, w2{0.5, 0, 0, 0.5};
    ParamStore p;
    p.add("w1", Tensor::from_values({2, 2}, w1));
    p.add("w2", Tensor::from_values({2, 2}, w2));
    InputAdapter a = input_adapter_from({{"kind", "token_wise"}, {"embed_dim", 2}, {"hidden_dim", 2}}, p);
    Tensor out = a.apply(Tensor::from_values({1, 2}, {1, 0}));
    CHECK(copy_values(out) == std::vector<double>{1.5, 0.0});
}

TEST_CASE("adapter identities") {
    Rng rng(2);
    InputAdapter a = make_input_adapter(AdapterKind::token_wise, 6, 12, 4);
    Tensor x = random_tensor(rng, 5, 6, false);
    CHECK(copy_values(a.apply(x)) == copy_values(x));

    // Nonnegative rows and a nonpositive W1 leave the relu branch dead.
    randomize(a.params().at("w2"), rng);
    for (auto& v : a.params().at("w1").mutable_values()) v = -std::abs(v);
    for (auto& v : x.mutable_values()) v = std::abs(v);
    CHECK(copy_values(a.apply(x)) == copy_values(x));

    InputAdapter s = make_input_adapter(AdapterKind::sequence_wise, 6, 0, 4);
    CHECK(copy_values(s.apply(x)) == copy_values(x));
    CHECK_THROWS_AS(a.apply(random_tensor(rng, 2, 5, false)), ShapeError);
    CHECK_THROWS_AS(make_input_adapter(AdapterKind::token_wise, 6, 0, 1), ConfigError);
}

TEST_CASE("token-wise adapter is local, sequence-wise is not") {
    Rng rng(8);
    InputAdapter tok = make_input_adapter(AdapterKind::token_wise, 6, 12, 1);
    InputAdapter seq = make_input_adapter(AdapterKind::sequence_wise, 6, 0, 1);
    randomize(tok.params().at("w2"), rng);
    randomize(seq.params().at("wo"), rng);
    Tensor x = random_tensor(rng, 4, 6, false);
    Tensor moved = x.clone();
    for (std::size_t c = 0; c < 6; ++c) moved.mutable_values()[2 * 6 + c] += 0.7;

    const auto t0 = copy_values(tok.apply(x)), t1 = copy_values(tok.apply(moved));
    const auto s0 = copy_values(seq.apply(x)), s1 = copy_values(seq.apply(moved));
    bool seq_leaks = false;
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 6; ++c) {
            const std::size_t i = r * 6 + c;
            if (r != 2) {
                CHECK(t0[i] == t1[i]);
                if (s0[i] != s1[i]) seq_leaks = true;
            }
        }
    }
    CHECK(seq_leaks);
}

TEST_CASE("prompt rows come from the embedding table") {
    Backbone b(tiny_config());
    for (bool reparam : {false, true}) {
        SoftPrompt p = make_soft_prompt(20, b, 5, reparam);
        Tensor m = p.materialize();
        CHECK(m.rows() == 20);
        CHECK(m.cols() == 8);
        for (std::size_t r = 0; r < 20; ++r) {
            bool found = false;
            for (std::size_t v = tokens::reserved_count; v < 12 && !found; ++v) {
                bool same = true;
                for (std::size_t c = 0; c < 8; ++c) same = same && m.at(r, c) == b.embedding_table().at(v, c);
                found = same;
            }
            CHECK(found);
        }
    }
    CHECK(copy_values(make_soft_prompt(20, b, 5, false).materialize()) ==
          copy_values(make_soft_prompt(20, b, 5, true).materialize()));
    CHECK(make_soft_prompt(0, b, 5, true).empty());
    CHECK_THROWS_AS(make_soft_prompt(25, b, 5, false), LengthError);
    CHECK(AdaptationConfig{}.prompt_length == 100);
}

TEST_CASE("composition stacks prompt rows first") {
    Backbone b(tiny_config());
    Rng rng(3);
    SoftPrompt p = make_soft_prompt(4, b, 1, false);
    Tensor x = random_tensor(rng, 3, 8, false);
    Tensor out = compose_input(p, x);
    CHECK(out.rows() == 7);
    const auto pv = copy_values(p.materialize()), xv = copy_values(x), ov = copy_values(out);
    for (std::size_t i = 0; i < pv.size(); ++i) CHECK(ov[i] == pv[i]);
    for (std::size_t i = 0; i < xv.size(); ++i) CHECK(ov[pv.size() + i] == xv[i]);
    CHECK(copy_values(compose_input(make_soft_prompt(0, b, 1, false), x)) == xv);
    CHECK_THROWS_AS(compose_input(p, random_tensor(rng, 3, 5, false)), ShapeError);

    Backbone wide([] {
        auto c = tiny_config();
        c.max_positions = 200;
        return c;
    }());
    CHECK(compose_input(make_soft_prompt(100, wide, 1, false), random_tensor(rng, 30, 8, false)).rows() == 130);
}

TEST_CASE("collapse preserves the materialized prompt") {
    Backbone b(tiny_config());
    Rng rng(6);
    SoftPrompt p = make_soft_prompt(4, b, 2, true);
    randomize(p.params().at("wb"), rng);
    randomize(p.params().at("core"), rng, 1.0);
    SoftPrompt c = collapse_reparam(p);
    CHECK_FALSE(c.reparameterized());
    const auto a = copy_values(p.materialize()), d = copy_values(c.materialize());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - d[i]) <= 1e-12);
    CHECK(copy_values(collapse_reparam(c).materialize()) == d);

    const std::vector<TokenId> x{5, 6}, y{7, 2};
    auto logits = [&](const SoftPrompt& q) { return copy_values(b.forward(compose_input(q, b.embed(x)), y)); };
    const auto l1 = logits(p), l2 = logits(c);
    for (std::size_t i = 0; i < l1.size(); ++i) CHECK(std::abs(l1[i] - l2[i]) < 1e-9);
}

TEST_CASE("input and prompt tuning agree at step zero") {
    for (auto arch : {Architecture::encoder_decoder, Architecture::decoder_only}) {
        Backbone b(tiny_config(arch));
        AdaptationConfig pc{TuningMode::prompt_tune, 3, 0, true, 9};
        AdaptationConfig ic{TuningMode::input_tune, 3, 0, true, 9};
        TunableModel pm(b, pc), im(b, ic);
        CHECK(batch_loss(pm).item() == batch_loss(im).item());
        const std::vector<TokenId> x{5, 6, 7}, y{8, 2};
        CHECK(copy_values(pm.forward(x, y)) == copy_values(im.forward(x, y)));
    }
}

TEST_CASE("gradients land exactly on the declared trainable set") {
    for (auto mode : {TuningMode::fine_tune, TuningMode::prompt_tune, TuningMode::input_tune, TuningMode::adapter_only,
                      TuningMode::input_tune_seq}) {
        for (bool reparam : {false, true}) {
            CAPTURE(to_string(mode));
            CAPTURE(reparam);
            Backbone b(tiny_config());
            TunableModel m(b, {mode, 3, 0, reparam, 4});
            Rng rng(1);
            perturb_zero_inits(m, rng);
            batch_loss(m).backward();
            const auto expect = declared(mode, reparam, m.backbone());
            std::set<std::string> trainable, with_grad;
            m.for_each_param([&](const std::string& name, Tensor& t, bool frozen) {
                if (!frozen) trainable.insert(name);
                bool nonzero = false;
                if (t.has_grad()) {
                    for (double g : t.grad()) nonzero = nonzero || g != 0.0;
                }
                if (nonzero) with_grad.insert(name);
            });
            CHECK(trainable == expect);
            CHECK(with_grad == expect);
        }
    }
    CHECK_THROWS_AS(TunableModel(Backbone(tiny_config()), {TuningMode::prompt_tune, 0, 0, true, 1}), ConfigError);
}

TEST_CASE("input tuning adds exactly the adapter parameters") {
    Backbone b(tiny_config());
    for (bool reparam : {false, true}) {
        TunableModel pm(b, {TuningMode::prompt_tune, 5, 0, reparam, 1});
        TunableModel im(b, {TuningMode::input_tune, 5, 0, reparam, 1});
        const std::size_t e = 8, h = 2 * e;
        CHECK(im.trainable_count() - pm.trainable_count() == 2 * e * h);
        CHECK(2 * e * h == 4 * e * e);
        const std::size_t k = 5;
        CHECK(pm.trainable_count() == (reparam ? k * e + e * h + h * e : k * e));
    }
}

TEST_CASE("prompt and input tuning gradients match finite differences") {
    for (auto mode : {TuningMode::prompt_tune, TuningMode::input_tune}) {
        for (bool reparam : {false, true}) {
            Backbone b(tiny_config());
            TunableModel m(b, {mode, 2, 0, reparam, 2});
            Rng rng(5);
            perturb_zero_inits(m, rng);
            std::vector<NamedTensor> params;
            m.for_each_param([&](const std::string& name, Tensor& t, bool frozen) {
                if (!frozen) params.push_back({name, t});
            });
            const auto report = grad_check([&] { return batch_loss(m); }, params);
            CAPTURE(to_string(mode));
            CAPTURE(reparam);
            CHECK(report.max_relative_error < 1e-4);
        }
    }
}

TEST_CASE("adaptation checkpoints round trip against their backbone only") {
    const auto dir = std::filesystem::temp_directory_path() / "petlab_adaptation_test";
    std::filesystem::create_directories(dir);
    Backbone b(tiny_config());
    TunableModel m(b, {TuningMode::input_tune, 3, 0, true, 7});
    Rng rng(2);
    perturb_zero_inits(m, rng);
    const std::vector<TokenId> x{5, 6}, y{7, 2};
    const auto before = copy_values(m.forward(x, y));
    m.save_adaptation(dir / "a.ckpt");

    TunableModel fresh(b, {TuningMode::input_tune, 3, 0, true, 99});
    fresh.load_adaptation(dir / "a.ckpt");
    const auto after = copy_values(fresh.forward(x, y));
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(std::abs(before[i] - after[i]) < 1e-9);

    auto other_cfg = tiny_config();
    other_cfg.seed = 12;
    TunableModel other(Backbone(other_cfg), {TuningMode::input_tune, 3, 0, true, 7});
    CHECK_THROWS_AS(other.load_adaptation(dir / "a.ckpt"), InputError);
    std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
