// SPDX-License-Identifier: Apache-2.0

#include "petlab/vocab.h"

#include <sstream>

#include "petlab/backbone.h"
#include "petlab/errors.h"
#include "petlab/grammar.h"
#include "petlab/params.h"

namespace petlab {

namespace {

const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> r{"<pad>", "<bos>", "<eos>", "<sep>", "<unk>"};
    return r;
}

}  // namespace

std::vector<std::string> split_whitespace(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\n' || text[i] == '\r')) ++i;
        const std::size_t start = i;
        while (i < text.size() && !(text[i] == ' ' || text[i] == '\t' || text[i] == '\n' || text[i] == '\r')) ++i;
        if (i > start) out.emplace_back(text.substr(start, i - start));
    }
    return out;
}

std::string join_tokens(std::span<const std::string> words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out.push_back(' ');
        out += words[i];
    }
    return out;
}

Vocab::Vocab(std::vector<std::string> tokens, std::size_t natural_end)
    : tokens_(std::move(tokens)), natural_end_(natural_end) {
    const auto& reserved = reserved_tokens();
    if (tokens_.size() < reserved.size()) throw InputError("vocabulary is missing reserved tokens");
    for (std::size_t i = 0; i < reserved.size(); ++i) {
        if (tokens_[i] != reserved[i]) throw InputError("reserved token " + reserved[i] + " is not at index " + std::to_string(i));
    }
    if (natural_end_ < reserved.size() || natural_end_ > tokens_.size()) throw InputError("bad partition boundary");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (tokens_[i].empty() || split_whitespace(tokens_[i]).size() != 1) {
            throw InputError("vocabulary token must be a single nonempty word: '" + tokens_[i] + "'");
        }
        if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) throw InputError("duplicate token: " + tokens_[i]);
    }
}

Vocab Vocab::standard() {
    std::vector<std::string> t = reserved_tokens();
    const auto& natural = natural_lexicon();
    t.insert(t.end(), natural.begin(), natural.end());
    const std::size_t end = t.size();
    const auto foreign = foreign_lexicon(natural.size() / 4);
    t.insert(t.end(), foreign.begin(), foreign.end());
    return Vocab(std::move(t), end);
}

std::size_t Vocab::natural_begin() const { return static_cast<std::size_t>(tokens::reserved_count); }

bool Vocab::is_reserved(TokenId id) const { return id >= 0 && id < tokens::reserved_count; }

bool Vocab::is_natural(TokenId id) const {
    return id >= tokens::reserved_count && static_cast<std::size_t>(id) < natural_end_;
}

bool Vocab::is_foreign(TokenId id) const {
    return id >= 0 && static_cast<std::size_t>(id) >= natural_end_ && static_cast<std::size_t>(id) < tokens_.size();
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

TokenId Vocab::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) throw IndexError("unknown token: " + std::string(token));
    return it->second;
}

const std::string& Vocab::token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw IndexError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
    std::vector<TokenId> out;
    for (const auto& w : split_whitespace(text)) {
        auto it = index_.find(w);
        if (it == index_.end()) throw InputError("word not in vocabulary: " + w);
        out.push_back(it->second);
    }
    return out;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out.push_back(' ');
        out += token(ids[i]);
    }
    return out;
}

void Vocab::save(const std::filesystem::path& path) const {
    std::string out;
    for (const auto& t : tokens_) out += t + "\n";
    write_text_file(path, out);
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::vector<std::string> t;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        t.push_back(line);
    }
    const std::size_t reserved = reserved_tokens().size();
    if (t.size() < reserved || (t.size() - reserved) % 5 != 0) {
        throw InputError("vocabulary size does not split 80/20: " + path.string());
    }
    const std::size_t natural = (t.size() - reserved) / 5 * 4;
    return Vocab(std::move(t), reserved + natural);
}

}  // namespace petlab
