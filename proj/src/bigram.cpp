// SPDX-License-Identifier: Apache-2.0

#include "petlab/bigram.h"

#include <cmath>
#include <iostream>
#include <sstream>

#include "petlab/backbone.h"
#include "petlab/errors.h"
#include "petlab/params.h"

namespace petlab {

void BigramTable::add(TokenId a, TokenId b, std::uint64_t n) {
    if (n == 0) return;
    counts_[{a, b}] += n;
    total_ += n;
}

std::uint64_t BigramTable::count(TokenId a, TokenId b) const {
    auto it = counts_.find({a, b});
    return it == counts_.end() ? 0 : it->second;
}

BigramTable build_bigram_table(const Corpus& corpus) {
    BigramTable t;
    auto scan = [&](const std::vector<TokenId>& s) {
        for (std::size_t i = 0; i + 1 < s.size(); ++i) {
            if (s[i] < tokens::reserved_count || s[i + 1] < tokens::reserved_count) continue;
            t.add(s[i], s[i + 1]);
        }
    };
    for (const auto& p : corpus.pairs) {
        scan(p.x);
        scan(p.y);
    }
    return t;
}

FamiliarityResult familiarity_detail(std::span<const std::vector<TokenId>> inputs, const BigramTable& table) {
    if (inputs.empty()) throw DomainError("familiarity of an empty input list");
    FamiliarityResult r;
    double sum = 0.0;
    for (const auto& s : inputs) {
        if (s.size() < 2) {
            ++r.skipped;
            continue;
        }
        double seq = 0.0;
        for (std::size_t i = 0; i + 1 < s.size(); ++i) seq += std::log(static_cast<double>(table.count(s[i], s[i + 1])) + 1.0);
        sum += seq / static_cast<double>(s.size() - 1);
        ++r.used;
    }
    if (r.used == 0) throw DomainError("familiarity: every input is shorter than two tokens");
    r.value = sum / static_cast<double>(r.used);
    return r;
}

double familiarity(std::span<const std::vector<TokenId>> inputs, const BigramTable& table) {
    const auto r = familiarity_detail(inputs, table);
    if (r.skipped) std::cerr << "warning: familiarity skipped " << r.skipped << " input(s) shorter than two tokens\n";
    return r.value;
}

std::vector<std::vector<TokenId>> inputs_of(const Corpus& corpus) {
    std::vector<std::vector<TokenId>> out;
    out.reserve(corpus.pairs.size());
    for (const auto& p : corpus.pairs) out.push_back(p.x);
    return out;
}

void save_bigram_table(const BigramTable& table, const Vocab& vocab, const std::filesystem::path& path,
                       std::string_view header) {
    std::string out;
    if (!header.empty()) {
        out += "# ";
        out += header;
        out += "\n";
    }
    for (const auto& [key, n] : table.counts()) {
        out += vocab.token(key.first) + " " + vocab.token(key.second) + " " + std::to_string(n) + "\n";
    }
    write_text_file(path, out);
}

BigramTable load_bigram_table(const std::filesystem::path& path, const Vocab& vocab) {
    std::istringstream in(read_text_file(path));
    BigramTable t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto f = split_whitespace(line);
        std::uint64_t n = 0;
        std::size_t used = 0;
        try {
            if (f.size() != 3) throw std::invalid_argument("field count");
            n = std::stoull(f[2], &used);
            if (used != f[2].size()) throw std::invalid_argument("count");
            t.add(vocab.id(f[0]), vocab.id(f[1]), n);
        } catch (const std::exception&) {
            throw InputError(path.string() + ":" + std::to_string(lineno) + ": malformed bigram line");
        }
    }
    return t;
}

}  // namespace petlab
