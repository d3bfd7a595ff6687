// SPDX-License-Identifier: Apache-2.0

#include "petlab/decode.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "petlab/errors.h"

namespace petlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_options(const DecodeOptions& o) {
    if (o.beam < 1) throw ConfigError("beam must be at least 1");
    if (o.max_len < 1) throw ConfigError("max_len must be at least 1");
    if (o.no_repeat_ngram < 0) throw ConfigError("no_repeat_ngram must be nonnegative");
}

std::vector<double> scored_step(const StepModel& model, std::span<const TokenId> prefix, int no_repeat_ngram) {
    auto lp = model.next_log_probs(prefix);
    for (TokenId t : banned_tokens(prefix, no_repeat_ngram)) {
        if (t >= 0 && static_cast<std::size_t>(t) < lp.size()) lp[static_cast<std::size_t>(t)] = kNegInf;
    }
    return lp;
}

struct Hypothesis {
    std::vector<TokenId> tokens;
    double score = 0.0;  // sum of log-probabilities
};

double normalized(double score, std::size_t length) { return score / static_cast<double>(std::max<std::size_t>(length, 1)); }

}  // namespace

std::vector<TokenId> banned_tokens(std::span<const TokenId> prefix, int no_repeat_ngram) {
    std::vector<TokenId> banned;
    const auto g = static_cast<std::size_t>(no_repeat_ngram);
    if (g == 0 || prefix.size() + 1 < g) return banned;
    const std::size_t tail = prefix.size() - (g - 1);
    for (std::size_t i = 0; i + g <= prefix.size(); ++i) {
        if (std::equal(prefix.begin() + i, prefix.begin() + i + g - 1, prefix.begin() + tail)) {
            banned.push_back(prefix[i + g - 1]);
        }
    }
    return banned;
}

std::vector<TokenId> greedy_decode(const StepModel& model, const DecodeOptions& options) {
    check_options(options);
    std::vector<TokenId> out;
    while (out.size() < static_cast<std::size_t>(options.max_len)) {
        const auto lp = scored_step(model, out, options.no_repeat_ngram);
        const auto best = std::max_element(lp.begin(), lp.end());
        if (best == lp.end() || *best == kNegInf) break;
        const auto token = static_cast<TokenId>(best - lp.begin());
        if (token == options.eos) break;
        out.push_back(token);
    }
    return out;
}

std::vector<TokenId> beam_decode(const StepModel& model, const DecodeOptions& options) {
    check_options(options);
    const auto width = static_cast<std::size_t>(options.beam);
    std::vector<Hypothesis> live{Hypothesis{}};
    std::vector<Hypothesis> finished;  // tokens exclude EOS, length used for scoring includes it

    auto finished_better = [](const std::pair<double, std::size_t>& a, const std::pair<double, std::size_t>& b) {
        return a.first > b.first || (a.first == b.first && a.second < b.second);
    };
    std::vector<std::pair<double, std::size_t>> finished_rank;  // (normalized score, arrival order)

    for (std::size_t step = 0; step < static_cast<std::size_t>(options.max_len) && !live.empty(); ++step) {
        // (score, beam index, token) sorted by score desc, then beam, then token.
        std::vector<std::tuple<double, std::size_t, TokenId>> candidates;
        for (std::size_t b = 0; b < live.size(); ++b) {
            const auto lp = scored_step(model, live[b].tokens, options.no_repeat_ngram);
            for (std::size_t t = 0; t < lp.size(); ++t) {
                if (lp[t] == kNegInf) continue;
                candidates.emplace_back(live[b].score + lp[t], b, static_cast<TokenId>(t));
            }
        }
        std::stable_sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
            if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
            if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
            return std::get<2>(a) < std::get<2>(b);
        });

        if (candidates.empty()) break;

        // The top `width` candidates each take a slot; EOS candidates finish.
        std::vector<Hypothesis> next;
        for (std::size_t rank = 0; rank < candidates.size() && rank < width; ++rank) {
            const auto& [score, b, token] = candidates[rank];
            if (token == options.eos) {
                finished_rank.emplace_back(normalized(score, step + 1), finished.size());
                finished.push_back({live[b].tokens, score});
                continue;
            }
            Hypothesis h{live[b].tokens, score};
            h.tokens.push_back(token);
            next.push_back(std::move(h));
        }
        live = std::move(next);

        if (finished.size() >= width && !live.empty()) {
            std::sort(finished_rank.begin(), finished_rank.end(), finished_better);
            const double worst_kept = finished_rank[width - 1].first;
            if (normalized(live.front().score, step + 1) <= worst_kept) {
                live.clear();
            }
        }
    }
    // Beams still alive at max_len count as finished without EOS.
    for (auto& h : live) {
        finished_rank.emplace_back(normalized(h.score, h.tokens.size()), finished.size());
        finished.push_back(std::move(h));
    }
    if (finished.empty()) return {};
    std::sort(finished_rank.begin(), finished_rank.end(), finished_better);
    return finished[finished_rank.front().second].tokens;
}

std::vector<TokenId> decode(const StepModel& model, const DecodeOptions& options) {
    return options.beam == 1 ? greedy_decode(model, options) : beam_decode(model, options);
}

BackboneStepModel::BackboneStepModel(const Backbone& backbone, const Tensor& source_embeds)
    : backbone_(backbone), context_(backbone.prepare_decoding(source_embeds)) {}

std::vector<double> BackboneStepModel::next_log_probs(std::span<const TokenId> prefix) const {
    const auto logits = backbone_.next_token_logits(context_, prefix);
    return log_softmax(logits);
}

}  // namespace petlab
