// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include <json.hpp>

#include "petlab/vocab.h"

namespace petlab {

struct Pair {
    std::vector<TokenId> x;
    std::vector<TokenId> y;
};

struct Corpus {
    std::vector<Pair> pairs;
    std::shared_ptr<const Vocab> vocab;
    // Provenance: {"generator": ..., "seed": ..., "size": ..., "transforms": [...]}.
    nlohmann::json origin;

    std::size_t size() const { return pairs.size(); }
    // Throws InputError when a pair is empty or holds an invalid index.
    void validate() const;
};

// One tab-separated "x<TAB>y" line per pair.
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path, std::shared_ptr<const Vocab> vocab);

// Inputs with every reference sharing that exact input, in first-seen order.
struct EvalItem {
    std::vector<TokenId> x;
    std::vector<std::vector<TokenId>> references;
};
std::vector<EvalItem> group_references(const Corpus& corpus);

// Seeded subsample of round(fraction * size) pairs (at least one), keeping
// the original order.
Corpus subsample(const Corpus& corpus, double fraction, std::uint64_t seed);

}  // namespace petlab
