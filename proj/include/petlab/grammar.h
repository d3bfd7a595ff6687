// SPDX-License-Identifier: Apache-2.0
//
// Synthetic corpora. The pretraining grammar emits two-sentence documents
// (first sentence = x, continuation = y) about restaurants plus generic
// subject-verb-object filler. Task generators reuse the same lexicon.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "petlab/corpus.h"

namespace petlab {

struct Phrase {
    std::vector<std::string> tokens;
    double weight = 1.0;
};

struct Piece {
    enum class Kind { literal, variable, slot };
    Kind kind = Kind::literal;
    // Token for literals, lexicon entry name otherwise.
    std::string text;
};

struct SentenceTemplate {
    double weight = 1.0;
    std::vector<Piece> pieces;
};

struct DocumentKind {
    std::string name;
    double weight = 1.0;
    std::vector<SentenceTemplate> first;
    std::vector<SentenceTemplate> second;
};

// Variables are drawn once per document and shared by both sentences; slots
// are redrawn at every occurrence. The variable `near` is drawn from `name`
// excluding the document's own name, so its marginal matches `name`.
// Pieces that are adjacent in a template never share a variable.
struct Grammar {
    std::map<std::string, std::vector<Phrase>> lexicon;
    std::vector<DocumentKind> documents;
};

const Grammar& pretrain_grammar();

// Every word the generators can emit, in a fixed order, padded so the
// count is divisible by four.
const std::vector<std::string>& natural_lexicon();
// Foreign words: never produced by any generator.
std::vector<std::string> foreign_lexicon(std::size_t count);

inline constexpr std::size_t kPretrainCap = 2'000'000;

// Throws ResourceError when size exceeds the cap.
Corpus gen_pretrain_corpus(std::uint64_t grammar_seed, std::size_t size, std::size_t cap = kPretrainCap);

enum class TaskKind { table_to_text, logic_to_text };

std::string_view to_string(TaskKind kind);
TaskKind task_kind_from_string(std::string_view s);

struct TaskOptions {
    // Probability that each optional table attribute is present.
    double attribute_rate = 0.6;
    // Maximum number of nested filter calls in a logic form.
    int max_depth = 2;
    // Logic forms: emit every paraphrase of each input as a separate pair
    // (multi-reference evaluation) instead of one sampled paraphrase.
    bool all_references = false;
};

Corpus gen_task(TaskKind kind, std::size_t size, std::uint64_t seed, const TaskOptions& options = {});

}  // namespace petlab
