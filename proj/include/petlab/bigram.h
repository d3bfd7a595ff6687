// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "petlab/corpus.h"

namespace petlab {

class BigramTable {
public:
    using Key = std::pair<TokenId, TokenId>;

    void add(TokenId a, TokenId b, std::uint64_t n = 1);
    std::uint64_t count(TokenId a, TokenId b) const;
    std::uint64_t total() const { return total_; }
    const std::map<Key, std::uint64_t>& counts() const { return counts_; }

    bool operator==(const BigramTable& other) const = default;

private:
    std::map<Key, std::uint64_t> counts_;
    std::uint64_t total_ = 0;
};

// Adjacent pairs over every x and y; pairs touching a reserved token are
// skipped.
BigramTable build_bigram_table(const Corpus& corpus);

struct FamiliarityResult {
    double value = 0.0;
    std::size_t used = 0;
    std::size_t skipped = 0;  // sequences shorter than two tokens
};

// Mean over sequences of the mean over adjacent pairs of log(count + 1).
// Throws DomainError when no sequence has two or more tokens.
FamiliarityResult familiarity_detail(std::span<const std::vector<TokenId>> inputs, const BigramTable& table);
// As above; prints a warning to stderr when sequences are skipped.
double familiarity(std::span<const std::vector<TokenId>> inputs, const BigramTable& table);

std::vector<std::vector<TokenId>> inputs_of(const Corpus& corpus);

// One "tokA tokB count" line per bigram, sorted by token ids. Lines starting
// with '#' are comments.
void save_bigram_table(const BigramTable& table, const Vocab& vocab, const std::filesystem::path& path,
                       std::string_view header = {});
BigramTable load_bigram_table(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace petlab
