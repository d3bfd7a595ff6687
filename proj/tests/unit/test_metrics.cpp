// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <map>

#include "petlab/errors.h"
#include "petlab/metrics.h"
#include "petlab/rng.h"
#include "oracles.h"

using namespace petlab;

using namespace petlab::oracles;

TEST_SUITE("metrics") {

TEST_CASE("bleu identities") {
    EvalBatch same{{{5, 6, 7, 8, 9}, {6, 7, 8, 9}}, {{{5, 6, 7, 8, 9}}, {{6, 7, 8, 9}}}};
    CHECK(bleu(same) == doctest::Approx(1.0).epsilon(1e-15));
    EvalBatch disjoint{{{5, 6, 7, 8}}, {{{9, 10, 11, 12}}}};
    CHECK(bleu(disjoint) == 0.0);
    CHECK_THROWS_AS(bleu(EvalBatch{}), DomainError);
    CHECK_THROWS_AS(bleu(EvalBatch{{{5}}, {}}), ShapeError);
    CHECK_THROWS_AS(bleu(EvalBatch{{{5}}, {{}}}), ShapeError);
}

TEST_CASE("bleu and rouge match brute-force oracles") {
    Rng rng(31);
    int nonzero = 0;
    for (int trial = 0; trial < 400; ++trial) {
        const EvalBatch b = random_batch(rng, 3);
        const double got = bleu(b);
        nonzero += got > 0;
        CHECK(std::abs(got - bleu_oracle(b)) < 1e-9);
        CHECK(std::abs(rouge_l(b) - rouge_oracle(b, 1.2)) < 1e-12);
        CHECK(got >= 0.0);
        CHECK(got <= 1.0);
    }
    CHECK(nonzero > 50);
}

TEST_CASE("five-pair toy batch") {
    EvalBatch b{{{5, 6, 7, 8, 9, 10}, {5, 5, 6, 7}, {8, 9, 10, 11, 12}, {6, 7, 8}, {5, 6, 7, 8, 9}},
                {{{5, 6, 7, 8, 10, 9}},
                 {{5, 6, 7, 7}, {5, 5, 6}},
                 {{8, 9, 10, 11, 12, 13}},
                 {{6, 7, 8, 9}},
                 {{5, 6, 7, 8, 9}}}};
    CHECK(std::abs(bleu(b) - bleu_oracle(b)) < 1e-9);
    CHECK(bleu(b) > 0.0);
}

TEST_CASE("metrics ignore pair order") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        EvalBatch b = random_batch(rng, 4);
        EvalBatch r;
        std::vector<std::size_t> order(b.hypotheses.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        for (auto i : order) {
            r.hypotheses.push_back(b.hypotheses[i]);
            r.references.push_back(b.references[i]);
        }
        CHECK(bleu(r) == doctest::Approx(bleu(b)).epsilon(1e-14));
        CHECK(rouge_l(r) == doctest::Approx(rouge_l(b)).epsilon(1e-14));
        // Replacing every hypothesis by its first reference scores 1.
        EvalBatch perfect = b;
        for (std::size_t i = 0; i < b.hypotheses.size(); ++i) perfect.hypotheses[i] = b.references[i][0];
        CHECK(bleu(perfect) >= bleu(b));
    }
}

TEST_CASE("sentence bleu smoothing") {
    const Sequence h{5, 6, 7, 8}, r{5, 6, 7, 8};
    const std::vector<Sequence> refs{r};
    CHECK(sentence_bleu(h, refs) == doctest::Approx(1.0).epsilon(1e-12));
    const Sequence h2{5, 6, 9, 10};
    const std::vector<Sequence> refs2{Sequence{5, 6, 7, 8}};
    // p1 = 2/4, p2 = 1/3, p3 = eps/(2+eps), p4 = eps/(1+eps); equal lengths.
    const double eps = 1e-9;
    const double expect = std::exp((std::log(0.5) + std::log(1.0 / 3) + std::log(eps / (2 + eps)) + std::log(eps / (1 + eps))) / 4);
    CHECK(sentence_bleu(h2, refs2) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("rouge-l hand case") {
    const Sequence a{5, 6, 7}, x{5, 8, 7};
    CHECK(lcs_length(a, x) == 2);
    const double p = 2.0 / 3, r = 2.0 / 3, beta = 1.2;
    const double f = (1 + beta * beta) * p * r / (r + beta * beta * p);
    CHECK(rouge_l(EvalBatch{{a}, {{x}}}) == doctest::Approx(f).epsilon(1e-15));
    CHECK(rouge_l(EvalBatch{{a}, {{a}}}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(rouge_l(EvalBatch{{a}, {{Sequence{9, 10}}}}) == 0.0);
}

TEST_CASE("relative performance") {
    CHECK(relative_performance(29.6, 34.5) == doctest::Approx(0.858).epsilon(5e-4));
    CHECK(relative_performance(64.5, 68.1) == doctest::Approx(0.947).epsilon(5e-4));
    CHECK(relative_performance(0.3, 0.3) == 1.0);
    CHECK(relative_performance(0.31, 0.3) > relative_performance(0.3, 0.3));
    CHECK_THROWS_AS(relative_performance(0.3, 0.0), DomainError);
}

}  // TEST_SUITE
