// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "petlab/tensor.h"

namespace petlab {

using Sequence = std::vector<TokenId>;

struct EvalBatch {
    std::vector<Sequence> hypotheses;
    std::vector<std::vector<Sequence>> references;  // nonempty per hypothesis

    // Throws DomainError when empty, ShapeError on a size mismatch or an
    // empty reference list.
    void validate() const;
};

// Corpus BLEU-4 in [0, 1]: clipped n-gram precisions (clip = max count in
// any reference), geometric mean, brevity penalty exp(1 - r/c) for c <= r
// with r the sum of closest reference lengths (shorter on ties). Any zero
// precision gives 0.
double bleu(const EvalBatch& batch);

// Sentence BLEU-4 with precisions (m + eps) / (t + eps).
double sentence_bleu(const Sequence& hypothesis, std::span<const Sequence> references, double eps = 1e-9);

// Length of the longest common subsequence.
std::size_t lcs_length(const Sequence& a, const Sequence& b);

// Mean over pairs of the best-reference LCS F-measure,
// F = (1 + beta^2) P R / (R + beta^2 P).
double rouge_l(const EvalBatch& batch, double beta = 1.2);

// bleu_pt / bleu_ft. Throws DomainError when bleu_ft <= 0.
double relative_performance(double bleu_pt, double bleu_ft);

}  // namespace petlab
