// SPDX-License-Identifier: Apache-2.0

#include "petlab/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>

#include "petlab/errors.h"

namespace petlab {

namespace {

constexpr int kMaxOrder = 4;

using NgramCounts = std::map<std::vector<TokenId>, std::size_t>;

NgramCounts ngrams(const Sequence& s, std::size_t n) {
    NgramCounts c;
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[Sequence(s.begin() + i, s.begin() + i + n)];
    return c;
}

// Clipped matches and candidate n-gram total for one order.
std::pair<std::size_t, std::size_t> clipped(const Sequence& hyp, std::span<const Sequence> refs, std::size_t n) {
    const auto h = ngrams(hyp, n);
    NgramCounts max_ref;
    for (const auto& r : refs) {
        for (const auto& [g, c] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
    }
    std::size_t matches = 0, total = 0;
    for (const auto& [g, c] : h) {
        total += c;
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matches += std::min(c, it->second);
    }
    return {matches, total};
}

std::size_t closest_ref_length(std::size_t hyp_len, std::span<const Sequence> refs) {
    std::size_t best = refs.front().size();
    for (const auto& r : refs) {
        const auto d = [&](std::size_t len) { return len > hyp_len ? len - hyp_len : hyp_len - len; };
        if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    return best;
}

double brevity_penalty(double c, double r) {
    if (c > r) return 1.0;
    return std::exp(1.0 - r / c);
}

}  // namespace

void EvalBatch::validate() const {
    if (hypotheses.empty()) throw DomainError("evaluation batch is empty");
    if (hypotheses.size() != references.size()) throw ShapeError("hypothesis and reference counts differ");
    for (const auto& r : references) {
        if (r.empty()) throw ShapeError("hypothesis without references");
    }
}

double bleu(const EvalBatch& batch) {
    batch.validate();
    std::size_t matches[kMaxOrder] = {}, totals[kMaxOrder] = {};
    std::size_t c = 0, r = 0;
    for (std::size_t i = 0; i < batch.hypotheses.size(); ++i) {
        const auto& h = batch.hypotheses[i];
        const auto& refs = batch.references[i];
        for (int n = 1; n <= kMaxOrder; ++n) {
            auto [m, t] = clipped(h, refs, static_cast<std::size_t>(n));
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
        c += h.size();
        r += closest_ref_length(h.size(), refs);
    }
    if (c == 0) return 0.0;
    double log_sum = 0.0;
    for (int n = 0; n < kMaxOrder; ++n) {
        if (matches[n] == 0 || totals[n] == 0) return 0.0;
        log_sum += std::log(static_cast<double>(matches[n]) / static_cast<double>(totals[n]));
    }
    return brevity_penalty(double(c), double(r)) * std::exp(log_sum / kMaxOrder);
}

double sentence_bleu(const Sequence& hypothesis, std::span<const Sequence> references, double eps) {
    if (references.empty()) throw ShapeError("hypothesis without references");
    if (hypothesis.empty()) return 0.0;
    double log_sum = 0.0;
    for (int n = 1; n <= kMaxOrder; ++n) {
        auto [m, t] = clipped(hypothesis, references, static_cast<std::size_t>(n));
        log_sum += std::log((static_cast<double>(m) + eps) / (static_cast<double>(t) + eps));
    }
    const double r = static_cast<double>(closest_ref_length(hypothesis.size(), references));
    return brevity_penalty(static_cast<double>(hypothesis.size()), r) * std::exp(log_sum / kMaxOrder);
}

std::size_t lcs_length(const Sequence& a, const Sequence& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(const EvalBatch& batch, double beta) {
    batch.validate();
    const double b2 = beta * beta;
    double sum = 0.0;
    for (std::size_t i = 0; i < batch.hypotheses.size(); ++i) {
        const auto& h = batch.hypotheses[i];
        double best = 0.0;
        for (const auto& r : batch.references[i]) {
            const std::size_t l = lcs_length(h, r);
            if (l == 0) continue;
            const double p = double(l) / double(h.size());
            const double rec = double(l) / double(r.size());
            best = std::max(best, (1.0 + b2) * p * rec / (rec + b2 * p));
        }
        sum += best;
    }
    return sum / static_cast<double>(batch.hypotheses.size());
}

double relative_performance(double bleu_pt, double bleu_ft) {
    if (!(bleu_ft > 0.0)) throw DomainError("relative performance needs a positive fine-tuning score");
    return bleu_pt / bleu_ft;
}

}  // namespace petlab
