// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "petlab/backbone.h"
#include "petlab/tensor.h"

namespace petlab {

// Anything that scores the next token given the tokens generated so far.
class StepModel {
public:
    virtual ~StepModel() = default;
    // Log-probabilities over the vocabulary for the token after `prefix`.
    virtual std::vector<double> next_log_probs(std::span<const TokenId> prefix) const = 0;
};

struct DecodeOptions {
    int beam = 1;
    int max_len = 32;
    int no_repeat_ngram = 0;
    TokenId eos = tokens::eos;
};

// Tokens that would repeat an already generated g-gram if appended.
std::vector<TokenId> banned_tokens(std::span<const TokenId> prefix, int no_repeat_ngram);

// Argmax at every step, lowest token id on ties. The result excludes EOS.
std::vector<TokenId> greedy_decode(const StepModel& model, const DecodeOptions& options);

// Beam search over summed log-probabilities. Each step keeps the top `beam`
// extensions; an EOS extension finishes its hypothesis and gives up its slot.
// Finished hypotheses are ranked by score / length (length penalty 1.0,
// length counting EOS). The search stops at max_len, when no beam is live, or
// once `beam` hypotheses are finished and the best live beam's current
// normalized score cannot beat the worst of them. With beam = 1 it reproduces
// greedy_decode exactly.
std::vector<TokenId> beam_decode(const StepModel& model, const DecodeOptions& options);

// Dispatches on options.beam.
std::vector<TokenId> decode(const StepModel& model, const DecodeOptions& options);

// StepModel over a backbone and one fixed source embedding matrix.
class BackboneStepModel final : public StepModel {
public:
    BackboneStepModel(const Backbone& backbone, const Tensor& source_embeds);
    std::vector<double> next_log_probs(std::span<const TokenId> prefix) const override;

private:
    const Backbone& backbone_;
    Backbone::DecodeContext context_;
};

}  // namespace petlab
