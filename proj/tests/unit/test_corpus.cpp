// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "oracles.h"
#include "petlab/backbone.h"
#include "petlab/bigram.h"
#include "petlab/corpus.h"
#include "petlab/errors.h"
#include "petlab/grammar.h"
#include "petlab/rng.h"
#include "petlab/transform.h"
#include "petlab/vocab.h"

using namespace petlab;

namespace {

std::shared_ptr<const Vocab> standard_vocab() {
    static const auto v = std::make_shared<const Vocab>(Vocab::standard());
    return v;
}

Corpus corpus_of(const std::vector<std::pair<std::string, std::string>>& rows) {
    Corpus c;
    c.vocab = standard_vocab();
    for (const auto& [x, y] : rows) c.pairs.push_back({c.vocab->encode(x), c.vocab->encode(y)});
    return c;
}

std::string input_text(const Corpus& c, std::size_t i) { return c.vocab->decode(c.pairs[i].x); }

using BigramWords = std::map<std::pair<std::string, std::string>, double>;

// Expected bigram counts per document, read off the grammar tables: within
// each phrase, and across adjacent pieces as last-token x first-token under
// independent draws.
BigramWords analytic_bigrams(const Grammar& g) {
    struct Edge {
        std::map<std::string, double> first, last;
        BigramWords inner;
    };
    auto edge_of = [&](const Piece& p) {
        Edge e;
        if (p.kind == Piece::Kind::literal) {
            e.first[p.text] = e.last[p.text] = 1.0;
            return e;
        }
        const auto& phrases = g.lexicon.at(p.text);
        double z = 0;
        for (const auto& ph : phrases) z += ph.weight;
        for (const auto& ph : phrases) {
            const double w = ph.weight / z;
            e.first[ph.tokens.front()] += w;
            e.last[ph.tokens.back()] += w;
            for (std::size_t i = 0; i + 1 < ph.tokens.size(); ++i) e.inner[{ph.tokens[i], ph.tokens[i + 1]}] += w;
        }
        return e;
    };
    BigramWords out;
    double doc_z = 0;
    for (const auto& d : g.documents) doc_z += d.weight;
    for (const auto& d : g.documents) {
        for (const auto* side : {&d.first, &d.second}) {
            double tz = 0;
            for (const auto& t : *side) tz += t.weight;
            for (const auto& t : *side) {
                const double w = d.weight / doc_z * t.weight / tz;
                std::vector<Edge> edges;
                for (const auto& p : t.pieces) edges.push_back(edge_of(p));
                for (std::size_t i = 0; i < edges.size(); ++i) {
                    for (const auto& [k, v] : edges[i].inner) out[k] += w * v;
                    if (i + 1 == edges.size()) continue;
                    for (const auto& [a, pa] : edges[i].last) {
                        for (const auto& [b, pb] : edges[i + 1].first) out[{a, b}] += w * pa * pb;
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("standard vocabulary layout") {
    const auto& v = *standard_vocab();
    CHECK(v.token(tokens::pad) == "<pad>");
    CHECK(v.id("<eos>") == tokens::eos);
    CHECK(v.size() - v.natural_end() == (v.natural_end() - tokens::reserved_count) / 4);
    std::set<std::string> uniq(v.tokens().begin(), v.tokens().end());
    CHECK(uniq.size() == v.size());
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(v.id(v.token(static_cast<TokenId>(i))) == static_cast<TokenId>(i));
    CHECK_THROWS_AS(v.id("zzzz-not-a-word"), IndexError);
    CHECK_THROWS_AS(v.encode("name [ zzzz-not-a-word ]"), InputError);
    CHECK(v.is_foreign(v.id("nom")));
    CHECK(v.is_natural(v.id("name")));
}

TEST_CASE("vocab and corpus files round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "petlab_corpus_test";
    std::filesystem::create_directories(dir);
    const auto& v = *standard_vocab();
    v.save(dir / "vocab.txt");
    const Vocab loaded = Vocab::load(dir / "vocab.txt");
    CHECK(loaded.tokens() == v.tokens());
    CHECK(loaded.natural_end() == v.natural_end());

    const Corpus c = gen_task(TaskKind::table_to_text, 30, 4);
    save_corpus(c, dir / "c.tsv");
    const Corpus back = load_corpus(dir / "c.tsv", standard_vocab());
    REQUIRE(back.size() == c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        CHECK(back.pairs[i].x == c.pairs[i].x);
        CHECK(back.pairs[i].y == c.pairs[i].y);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("tokenization round trips generated text") {
    for (auto kind : {TaskKind::table_to_text, TaskKind::logic_to_text}) {
        const Corpus c = gen_task(kind, 50, 2);
        for (const auto& p : c.pairs) {
            const std::string s = c.vocab->decode(p.y);
            CHECK(c.vocab->decode(c.vocab->encode(s)) == s);
        }
    }
    const Corpus pre = gen_pretrain_corpus(3, 50);
    for (const auto& p : pre.pairs) {
        const std::string s = pre.vocab->decode(p.x);
        CHECK(pre.vocab->decode(pre.vocab->encode(s)) == s);
    }
}

TEST_CASE("pretraining corpus is deterministic and natural") {
    const Corpus a = gen_pretrain_corpus(7, 400), b = gen_pretrain_corpus(7, 400);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.pairs[i].x == b.pairs[i].x);
        CHECK(a.pairs[i].y == b.pairs[i].y);
        for (const auto* s : {&a.pairs[i].x, &a.pairs[i].y}) {
            for (TokenId t : *s) CHECK(a.vocab->is_natural(t));
        }
    }
    a.validate();
    CHECK_THROWS_AS(gen_pretrain_corpus(7, 11, 10), ResourceError);
    CHECK_THROWS_AS(gen_pretrain_corpus(7, 0), ConfigError);
}

TEST_CASE("pretraining bigrams match the grammar's analytic distribution") {
    const Corpus c = gen_pretrain_corpus(21, 10000);
    const BigramTable table = build_bigram_table(c);
    const auto expected = analytic_bigrams(pretrain_grammar());
    double per_doc = 0;
    for (const auto& [k, v] : expected) per_doc += v;
    const double n = static_cast<double>(table.total());
    CHECK(std::abs(n / 10000.0 - per_doc) < 0.2);

    // Documents are i.i.d., but one template emits a fixed bundle of
    // bigrams, so counts are overdispersed relative to a multinomial. Sigma
    // is the larger of the multinomial value and the per-document one.
    const auto& v = *c.vocab;
    std::map<std::pair<TokenId, TokenId>, std::pair<double, double>> moments;  // sum, sum of squares
    for (const auto& p : c.pairs) {
        std::map<std::pair<TokenId, TokenId>, double> doc;
        for (const auto* s : {&p.x, &p.y}) {
            for (std::size_t j = 0; j + 1 < s->size(); ++j) doc[{(*s)[j], (*s)[j + 1]}] += 1;
        }
        for (const auto& [k, cnt] : doc) {
            moments[k].first += cnt;
            moments[k].second += cnt * cnt;
        }
    }
    const double docs = static_cast<double>(c.size());
    std::size_t outside = 0, checked = 0;
    double worst = 0;
    for (const auto& [k, w] : expected) {
        const double p = w / per_doc;
        const auto m = moments[{v.id(k.first), v.id(k.second)}];
        const double observed = m.first;
        const double doc_var = m.second / docs - (m.first / docs) * (m.first / docs);
        const double sigma = std::max(std::sqrt(n * p * (1 - p)), std::sqrt(docs * doc_var));
        const double z = std::abs(observed - docs * w) / sigma;
        worst = std::max(worst, z);
        ++checked;
        if (z > 3.0) ++outside;
    }
    // Every observed bigram must be one the grammar predicts.
    for (const auto& [k, count] : table.counts()) {
        CHECK(expected.count({v.token(k.first), v.token(k.second)}) == 1);
    }
    // Over thousands of bigrams a few 3-sigma excursions are expected by
    // chance (0.27% each); a wrong distribution produces many and large ones.
    CAPTURE(worst);
    CAPTURE(outside);
    CAPTURE(checked);
    CHECK(static_cast<double>(outside) <= 0.01 * static_cast<double>(checked));
    CHECK(worst < 5.0);
}

TEST_CASE("table items are well formed") {
    const Corpus c = gen_task(TaskKind::table_to_text, 200, 9);
    const auto& v = *c.vocab;
    for (const auto& p : c.pairs) {
        const auto x = split_whitespace(v.decode(p.x));
        const std::string y = " " + v.decode(p.y) + " ";
        REQUIRE(x.size() >= 4);
        CHECK(x[0] == "name");
        CHECK(x[1] == "[");
        // Every displayed value (except yes/no flags) appears in y.
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (x[i] != "[") continue;
            std::string value;
            std::size_t j = i + 1;
            for (; x[j] != "]"; ++j) value += (value.empty() ? "" : " ") + x[j];
            if (x[i - 1] != "family") CHECK(y.find(" " + value + " ") != std::string::npos);
        }
    }
    const Corpus d = gen_task(TaskKind::table_to_text, 200, 9);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c.pairs[i].x == d.pairs[i].x);
}

TEST_CASE("logic forms are balanced and depth bounded") {
    for (int depth : {1, 2, 3}) {
        TaskOptions o;
        o.max_depth = depth;
        const Corpus c = gen_task(TaskKind::logic_to_text, 200, 5, o);
        for (const auto& p : c.pairs) {
            int open = 0, filters = 0;
            for (const auto& w : split_whitespace(c.vocab->decode(p.x))) {
                if (w == "(") ++open;
                if (w == ")") --open;
                if (w == "filter") ++filters;
                CHECK(open >= 0);
            }
            CHECK(open == 0);
            CHECK(filters >= 1);
            CHECK(filters <= depth);
        }
    }
    TaskOptions all;
    all.all_references = true;
    const Corpus multi = gen_task(TaskKind::logic_to_text, 10, 5, all);
    CHECK(multi.size() == 30);
    const auto items = group_references(multi);
    CHECK(items.size() <= 10);
    for (const auto& it : items) CHECK(it.references.size() % 3 == 0);
}

TEST_CASE("subsample keeps order and size") {
    const Corpus c = gen_task(TaskKind::table_to_text, 100, 1);
    const Corpus s = subsample(c, 0.25, 3);
    CHECK(s.size() == 25);
    std::size_t j = 0;
    for (const auto& p : s.pairs) {
        while (j < c.size() && c.pairs[j].x != p.x) ++j;
        CHECK(j < c.size());
        ++j;
    }
    CHECK(subsample(c, 0.001, 3).size() == 1);
}

TEST_CASE("transform examples from the table variants") {
    const Corpus c = corpus_of({{"name [ The Punter ] , food [ Indian ]", "The Punter serves Indian food ."}});
    CHECK(input_text(transform_inputs(c, {TransformKind::familiar_plus, std::nullopt, 0}), 0) ==
          "name is The Punter , food is Indian .");

    const Corpus d = corpus_of({{"name [ The Punter ]", "The Punter ."}});
    TransformSpec keys{TransformKind::remap_keys, std::map<std::string, std::string>{{"name", "nom"}}, 0};
    const Corpus out = transform_inputs(d, keys);
    CHECK(input_text(out, 0) == "nom [ The Punter ]");
    CHECK(out.pairs[0].y == d.pairs[0].y);
    CHECK(out.origin["transforms"].size() == 1);
    CHECK(out.origin["transforms"][0]["kind"] == "remap_keys");

    const Corpus id = transform_inputs(c, {});
    CHECK(id.pairs[0].x == c.pairs[0].x);
    CHECK(id.pairs[0].y == c.pairs[0].y);
}

TEST_CASE("logic forms gain canonical utterances") {
    const Corpus c = corpus_of({{"call listvalue ( call filter ( call getentity ( string pub ) , string food , Indian ) )",
                                 "list every pub whose food is Indian ."}});
    CHECK(input_text(transform_inputs(c, {TransformKind::familiar_plus, std::nullopt, 0}), 0) ==
          "list pub that has food Indian .");
    const Corpus bad = corpus_of({{"call listvalue ( call filter ( string pub ) )", "dog ."}});
    CHECK_THROWS_AS(transform_inputs(bad, {TransformKind::familiar_plus, std::nullopt, 0}), SpecError);
}

TEST_CASE("seeded remaps are bijections into the foreign partition") {
    const Corpus c = gen_task(TaskKind::table_to_text, 200, 3);
    for (auto kind : {TransformKind::remap_keys, TransformKind::remap_all}) {
        const Corpus out = transform_inputs(c, {kind, std::nullopt, 11});
        std::map<TokenId, TokenId> seen, back;
        for (std::size_t i = 0; i < c.size(); ++i) {
            REQUIRE(out.pairs[i].x.size() == c.pairs[i].x.size());
            CHECK(out.pairs[i].y == c.pairs[i].y);
            const auto words = split_whitespace(c.vocab->decode(c.pairs[i].x));
            for (std::size_t j = 0; j < words.size(); ++j) {
                const TokenId a = c.pairs[i].x[j], b = out.pairs[i].x[j];
                auto [it, fresh] = seen.emplace(a, b);
                CHECK(it->second == b);
                auto [jt, fresh2] = back.emplace(b, a);
                CHECK(jt->second == a);
                const bool bracket = words[j] == "[" || words[j] == "]" || words[j] == ",";
                const bool key = j + 1 < words.size() && words[j + 1] == "[";
                if (bracket) CHECK(a == b);
                if (key) CHECK(c.vocab->is_foreign(b));
                if (!bracket && !key) CHECK((kind == TransformKind::remap_all) == c.vocab->is_foreign(b));
            }
        }
    }
}

TEST_CASE("remap errors") {
    const Corpus c = corpus_of({{"name [ The Punter ] , food [ Indian ]", "dog ."}});
    TransformSpec collide{TransformKind::remap_keys, std::map<std::string, std::string>{{"name", "nom"}, {"food", "nom"}}, 0};
    CHECK_THROWS_AS(transform_inputs(c, collide), SpecError);
    TransformSpec onto_existing{TransformKind::remap_keys, std::map<std::string, std::string>{{"name", "food"}}, 0};
    CHECK_THROWS_AS(transform_inputs(c, onto_existing), SpecError);
    TransformSpec absent{TransformKind::remap_keys, std::map<std::string, std::string>{{"price", "prix"}}, 0};
    CHECK_THROWS_AS(transform_inputs(c, absent), SpecError);
    CHECK(TransformSpec::from_json(collide.to_json()).to_json() == collide.to_json());
}

TEST_CASE("joint transforms share one remap") {
    const Corpus a = gen_task(TaskKind::table_to_text, 40, 1), b = gen_task(TaskKind::table_to_text, 40, 2);
    const auto out = transform_jointly({a, b}, {TransformKind::remap_all, std::nullopt, 5});
    REQUIRE(out.size() == 2);
    std::map<TokenId, TokenId> m;
    for (std::size_t s = 0; s < 2; ++s) {
        const Corpus& src = s == 0 ? a : b;
        for (std::size_t i = 0; i < src.size(); ++i) {
            for (std::size_t j = 0; j < src.pairs[i].x.size(); ++j) {
                auto [it, fresh] = m.emplace(src.pairs[i].x[j], out[s].pairs[i].x[j]);
                CHECK(it->second == out[s].pairs[i].x[j]);
            }
        }
    }
}

TEST_CASE("bigram table hand cases and brute-force recount") {
    const auto& v = *standard_vocab();
    const Corpus ab = corpus_of({{"dog cat", "dog dog dog"}});
    const BigramTable t = build_bigram_table(ab);
    CHECK(t.count(v.id("dog"), v.id("cat")) == 1);
    CHECK(t.count(v.id("dog"), v.id("dog")) == 2);
    CHECK(t.total() == 3);

    Rng rng(4);
    Corpus rnd;
    rnd.vocab = standard_vocab();
    for (int i = 0; i < 100; ++i) {
        Pair p;
        const std::size_t lx = 1 + rng.below(8), ly = 1 + rng.below(8);
        for (std::size_t j = 0; j < lx; ++j) p.x.push_back(static_cast<TokenId>(rng.below(12)));
        for (std::size_t j = 0; j < ly; ++j) p.y.push_back(static_cast<TokenId>(rng.below(12)));
        rnd.pairs.push_back(p);
    }
    const auto brute = oracles::bigram_recount(rnd);
    std::uint64_t total = 0;
    for (const auto& [k, c] : brute) total += c;
    const BigramTable r = build_bigram_table(rnd);
    CHECK(r.counts() == brute);
    CHECK(r.total() == total);

    const auto dir = std::filesystem::temp_directory_path() / "petlab_bigram_test";
    std::filesystem::create_directories(dir);
    save_bigram_table(r, v, dir / "b.txt", "test table");
    CHECK(load_bigram_table(dir / "b.txt", v) == r);
    std::filesystem::remove_all(dir);
}

TEST_CASE("familiarity hand cases and double-loop oracle") {
    const auto& v = *standard_vocab();
    const TokenId a = v.id("dog"), b = v.id("cat");
    BigramTable t;
    t.add(a, b);
    const std::vector<std::vector<TokenId>> one{{a, b}};
    CHECK(familiarity(one, t) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    const std::vector<std::vector<TokenId>> unseen{{b, a, b, b}};
    CHECK(familiarity(unseen, BigramTable{}) == 0.0);
    CHECK_THROWS_AS(familiarity(std::vector<std::vector<TokenId>>{}, t), DomainError);
    CHECK_THROWS_AS(familiarity(std::vector<std::vector<TokenId>>{{a}}, t), DomainError);

    Rng rng(12);
    BigramTable hand;
    std::vector<std::vector<std::uint64_t>> dense(10, std::vector<std::uint64_t>(10, 0));
    for (int i = 0; i < 60; ++i) {
        const auto x = rng.below(10), y = rng.below(10), n = 1 + rng.below(20);
        hand.add(static_cast<TokenId>(x + 5), static_cast<TokenId>(y + 5), n);
        dense[x][y] += n;
    }
    std::vector<std::vector<TokenId>> seqs;
    for (int i = 0; i < 20; ++i) {
        std::vector<TokenId> s(2 + rng.below(10));
        for (auto& t2 : s) t2 = static_cast<TokenId>(5 + rng.below(10));
        seqs.push_back(s);
    }
    long double outer = 0;
    for (const auto& s : seqs) {
        long double inner = 0;
        for (std::size_t i = 0; i + 1 < s.size(); ++i) {
            inner += std::log(static_cast<long double>(dense[s[i] - 5][s[i + 1] - 5]) + 1.0L);
        }
        outer += inner / static_cast<long double>(s.size() - 1);
    }
    const double oracle = static_cast<double>(outer / seqs.size());
    CHECK(std::abs(familiarity(seqs, hand) - oracle) < 1e-12);

    // Order and whole-set duplication do not matter.
    auto shuffled = seqs;
    rng.shuffle(shuffled);
    auto doubled = seqs;
    doubled.insert(doubled.end(), seqs.begin(), seqs.end());
    CHECK(std::abs(familiarity(shuffled, hand) - oracle) < 1e-12);
    CHECK(std::abs(familiarity(doubled, hand) - oracle) < 1e-12);

    const auto detail = familiarity_detail(std::vector<std::vector<TokenId>>{{a, b}, {a}}, t);
    CHECK(detail.used == 1);
    CHECK(detail.skipped == 1);
}

TEST_CASE("familiarity ordering across transforms") {
    const BigramTable table = build_bigram_table(gen_pretrain_corpus(7, 3000));
    for (auto kind : {TaskKind::table_to_text, TaskKind::logic_to_text}) {
        const Corpus task = gen_task(kind, 300, 7);
        auto fam = [&](TransformKind t) { return familiarity(inputs_of(transform_inputs(task, {t, std::nullopt, 3})), table); };
        const double plus = fam(TransformKind::familiar_plus), base = fam(TransformKind::identity);
        const double keys = fam(TransformKind::remap_keys), all = fam(TransformKind::remap_all);
        CAPTURE(to_string(kind));
        CHECK(plus >= base);
        CHECK(base >= keys);
        CHECK(keys >= all);
        CHECK(all == 0.0);
    }
}

}  // TEST_SUITE
