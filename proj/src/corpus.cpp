// SPDX-License-Identifier: Apache-2.0

#include "petlab/corpus.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "petlab/errors.h"
#include "petlab/params.h"
#include "petlab/rng.h"

namespace petlab {

void Corpus::validate() const {
    if (!vocab) throw InputError("corpus has no vocabulary");
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        if (p.x.empty() || p.y.empty()) throw InputError("pair " + std::to_string(i) + " has an empty side");
        for (const auto* seq : {&p.x, &p.y}) {
            for (TokenId t : *seq) {
                if (t < 0 || static_cast<std::size_t>(t) >= vocab->size()) {
                    throw InputError("pair " + std::to_string(i) + " holds invalid token id " + std::to_string(t));
                }
            }
        }
    }
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    std::string out;
    for (const auto& p : corpus.pairs) {
        out += corpus.vocab->decode(p.x);
        out.push_back('\t');
        out += corpus.vocab->decode(p.y);
        out.push_back('\n');
    }
    write_text_file(path, out);
}

Corpus load_corpus(const std::filesystem::path& path, std::shared_ptr<const Vocab> vocab) {
    Corpus c;
    c.vocab = std::move(vocab);
    c.origin = {{"generator", "file"}, {"path", path.string()}};
    std::istringstream in(read_text_file(path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
            throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected exactly one tab");
        }
        c.pairs.push_back({c.vocab->encode(std::string_view(line).substr(0, tab)),
                           c.vocab->encode(std::string_view(line).substr(tab + 1))});
    }
    c.validate();
    return c;
}

std::vector<EvalItem> group_references(const Corpus& corpus) {
    std::vector<EvalItem> items;
    std::map<std::vector<TokenId>, std::size_t> seen;
    for (const auto& p : corpus.pairs) {
        auto [it, fresh] = seen.emplace(p.x, items.size());
        if (fresh) items.push_back({p.x, {}});
        items[it->second].references.push_back(p.y);
    }
    return items;
}

Corpus subsample(const Corpus& corpus, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subsample fraction must lie in (0, 1]");
    const auto n = corpus.pairs.size();
    const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx);
    idx.resize(std::min(keep, n));
    std::sort(idx.begin(), idx.end());
    Corpus out;
    out.vocab = corpus.vocab;
    out.origin = corpus.origin;
    out.origin["subsample"] = {{"fraction", fraction}, {"seed", seed}};
    for (std::size_t i : idx) out.pairs.push_back(corpus.pairs[i]);
    return out;
}

}  // namespace petlab
