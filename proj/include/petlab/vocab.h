// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "petlab/tensor.h"

namespace petlab {

// Word-level vocabulary: reserved tokens, then the natural partition, then
// the foreign partition (one quarter the size of the natural one).
class Vocab {
public:
    Vocab() = default;
    // `tokens` must start with the reserved tokens; `natural_end` is the first
    // foreign index.
    Vocab(std::vector<std::string> tokens, std::size_t natural_end);

    // Reserved tokens + the synthetic lexicon + generated foreign words.
    static Vocab standard();

    std::size_t size() const { return tokens_.size(); }
    std::size_t natural_begin() const;
    std::size_t natural_end() const { return natural_end_; }
    bool is_natural(TokenId id) const;
    bool is_foreign(TokenId id) const;
    bool is_reserved(TokenId id) const;

    bool contains(std::string_view token) const;
    // Throws IndexError on unknown tokens / ids.
    TokenId id(std::string_view token) const;
    const std::string& token(TokenId id) const;

    // Whitespace tokenization; unknown words throw InputError.
    std::vector<TokenId> encode(std::string_view text) const;
    std::string decode(std::span<const TokenId> ids) const;

    const std::vector<std::string>& tokens() const { return tokens_; }

    // One token per line, line number = index. The partition boundary is
    // implied by the 80/20 split.
    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    std::size_t natural_end_ = 0;
};

std::vector<std::string> split_whitespace(std::string_view text);
std::string join_tokens(std::span<const std::string> words);

}  // namespace petlab
