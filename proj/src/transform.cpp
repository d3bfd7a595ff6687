// SPDX-License-Identifier: Apache-2.0

#include "petlab/transform.h"

#include <algorithm>
#include <set>

#include "petlab/errors.h"
#include "petlab/rng.h"

namespace petlab {

std::string_view to_string(TransformKind kind) {
    switch (kind) {
        case TransformKind::identity: return "identity";
        case TransformKind::familiar_plus: return "familiar_plus";
        case TransformKind::remap_keys: return "remap_keys";
        case TransformKind::remap_all: return "remap_all";
    }
    return "unknown";
}

TransformKind transform_kind_from_string(std::string_view s) {
    if (s == "identity") return TransformKind::identity;
    if (s == "familiar_plus") return TransformKind::familiar_plus;
    if (s == "remap_keys" || s == "unfamiliar_remap_keys") return TransformKind::remap_keys;
    if (s == "remap_all" || s == "unfamiliar_remap_all") return TransformKind::remap_all;
    throw ConfigError("unknown transform kind: " + std::string(s));
}

nlohmann::json TransformSpec::to_json() const {
    nlohmann::json j = {{"kind", std::string(to_string(kind))}, {"seed", seed}};
    if (remap) j["remap"] = *remap;
    return j;
}

TransformSpec TransformSpec::from_json(const nlohmann::json& j) {
    TransformSpec s;
    try {
        s.kind = transform_kind_from_string(j.at("kind").get<std::string>());
        s.seed = j.value("seed", std::uint64_t{0});
        if (j.contains("remap")) s.remap = j.at("remap").get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("transform spec: ") + e.what());
    }
    return s;
}

namespace {

bool is_punct(const std::string& w) { return w == "[" || w == "]" || w == "," || w == "(" || w == ")" || w == "."; }

// Positions of key words in one input.
std::vector<bool> key_positions(const std::vector<std::string>& words) {
    std::vector<bool> key(words.size(), false);
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (words[i] == "[" && i > 0 && !is_punct(words[i - 1])) key[i - 1] = true;
        if (words[i] == "call" || words[i] == "string") key[i] = true;
        if (words[i] == "call" && i + 1 < words.size()) key[i + 1] = true;
    }
    return key;
}

std::vector<std::string> words_of(const Vocab& v, const std::vector<TokenId>& ids) {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (TokenId t : ids) out.push_back(v.token(t));
    return out;
}

class LogicParser {
public:
    explicit LogicParser(const std::vector<std::string>& w) : w_(w) {}

    std::vector<std::string> canonical() {
        expect("call");
        const std::string top = next();
        if (top != "listvalue" && top != "count") fail("unknown top-level function " + top);
        expect("(");
        parse_set();
        expect(")");
        if (pos_ != w_.size()) fail("trailing words");
        std::vector<std::string> out;
        if (top == "listvalue") {
            out.push_back("list");
        } else {
            out.insert(out.end(), {"number", "of"});
        }
        out.insert(out.end(), type_.begin(), type_.end());
        for (std::size_t i = 0; i < filters_.size(); ++i) {
            if (i) out.push_back("and");
            out.insert(out.end(), {"that", "has", filters_[i].first});
            out.insert(out.end(), filters_[i].second.begin(), filters_[i].second.end());
        }
        out.push_back(".");
        return out;
    }

private:
    void parse_set() {
        expect("call");
        const std::string fn = next();
        expect("(");
        if (fn == "getentity") {
            expect("string");
            type_ = until(")");
        } else if (fn == "filter") {
            parse_set();
            expect(",");
            expect("string");
            std::string key = next();
            expect(",");
            filters_.emplace_back(std::move(key), until(")"));
        } else {
            fail("unknown function " + fn);
        }
        expect(")");
    }

    std::vector<std::string> until(const std::string& stop) {
        std::vector<std::string> out;
        while (pos_ < w_.size() && w_[pos_] != stop) out.push_back(w_[pos_++]);
        if (out.empty()) fail("empty argument");
        return out;
    }

    const std::string& next() {
        if (pos_ >= w_.size()) fail("unexpected end of logic form");
        return w_[pos_++];
    }

    void expect(const char* word) {
        if (next() != word) fail(std::string("expected '") + word + "'");
    }

    [[noreturn]] void fail(const std::string& what) const { throw SpecError("familiar_plus: cannot parse logic form: " + what); }

    const std::vector<std::string>& w_;
    std::size_t pos_ = 0;
    std::vector<std::string> type_;
    std::vector<std::pair<std::string, std::vector<std::string>>> filters_;
};

std::vector<std::string> familiar_plus(const std::vector<std::string>& words) {
    if (!words.empty() && words.front() == "call") return LogicParser(words).canonical();
    std::vector<std::string> out;
    for (const auto& w : words) {
        if (w == "[") {
            out.push_back("is");
        } else if (w != "]") {
            out.push_back(w);
        }
    }
    out.push_back(".");
    return out;
}

}  // namespace

Corpus transform_inputs(const Corpus& corpus, const TransformSpec& spec) {
    if (!corpus.vocab) throw InputError("corpus has no vocabulary");
    const Vocab& v = *corpus.vocab;
    Corpus out;
    out.vocab = corpus.vocab;
    out.origin = corpus.origin;
    if (!out.origin.contains("transforms")) out.origin["transforms"] = nlohmann::json::array();
    nlohmann::json record = spec.to_json();

    switch (spec.kind) {
        case TransformKind::identity:
            out.pairs = corpus.pairs;
            break;
        case TransformKind::familiar_plus:
            for (const auto& p : corpus.pairs) {
                std::vector<TokenId> x;
                for (const auto& w : familiar_plus(words_of(v, p.x))) x.push_back(v.id(w));
                out.pairs.push_back({std::move(x), p.y});
            }
            break;
        case TransformKind::remap_keys:
        case TransformKind::remap_all: {
            const bool all = spec.kind == TransformKind::remap_all;
            // Domain: words eligible for remapping; untouched: every other input word.
            std::set<TokenId> domain, present;
            for (const auto& p : corpus.pairs) {
                const auto words = words_of(v, p.x);
                const auto key = key_positions(words);
                for (std::size_t i = 0; i < words.size(); ++i) {
                    present.insert(p.x[i]);
                    if (key[i] || (all && !is_punct(words[i]))) domain.insert(p.x[i]);
                }
            }
            std::map<TokenId, TokenId> map;
            if (spec.remap) {
                for (const auto& [from, to] : *spec.remap) {
                    if (!v.contains(from) || !present.count(v.id(from))) {
                        throw SpecError("remap source '" + from + "' does not occur in the corpus inputs");
                    }
                    if (!v.contains(to)) throw SpecError("remap target '" + to + "' is not in the vocabulary");
                    map[v.id(from)] = v.id(to);
                }
            } else {
                std::vector<TokenId> foreign;
                for (std::size_t i = v.natural_end(); i < v.size(); ++i) foreign.push_back(static_cast<TokenId>(i));
                if (foreign.size() < domain.size()) {
                    throw SpecError("remap needs " + std::to_string(domain.size()) + " foreign words, only " +
                                    std::to_string(foreign.size()) + " exist");
                }
                Rng rng(spec.seed);
                rng.shuffle(foreign);
                std::size_t i = 0;
                for (TokenId t : domain) map[t] = foreign[i++];
            }
            // Injectivity over the whole input alphabet: no two words may
            // land on one target, including words left untouched.
            std::map<TokenId, TokenId> image;
            for (TokenId t : present) {
                auto it = map.find(t);
                const TokenId target = it == map.end() ? t : it->second;
                auto [pos, fresh] = image.emplace(target, t);
                if (!fresh) {
                    throw SpecError("remap collision: '" + v.token(pos->second) + "' and '" + v.token(t) + "' both map to '" +
                                    v.token(target) + "'");
                }
            }
            nlohmann::json applied = nlohmann::json::object();
            for (const auto& [from, to] : map) applied[v.token(from)] = v.token(to);
            record["applied"] = applied;
            for (const auto& p : corpus.pairs) {
                Pair q{p.x, p.y};
                for (auto& t : q.x) {
                    auto it = map.find(t);
                    if (it != map.end()) t = it->second;
                }
                out.pairs.push_back(std::move(q));
            }
            break;
        }
    }
    out.origin["transforms"].push_back(record);
    return out;
}

std::vector<Corpus> transform_jointly(const std::vector<Corpus>& splits, const TransformSpec& spec) {
    if (splits.empty()) return {};
    Corpus joined;
    joined.vocab = splits.front().vocab;
    joined.origin = splits.front().origin;
    for (const auto& s : splits) joined.pairs.insert(joined.pairs.end(), s.pairs.begin(), s.pairs.end());
    Corpus done = transform_inputs(joined, spec);
    const nlohmann::json record = done.origin["transforms"].back();
    std::vector<Corpus> out;
    std::size_t offset = 0;
    for (const auto& s : splits) {
        Corpus c;
        c.vocab = s.vocab;
        c.origin = s.origin;
        if (!c.origin.contains("transforms")) c.origin["transforms"] = nlohmann::json::array();
        c.origin["transforms"].push_back(record);
        c.pairs.assign(done.pairs.begin() + static_cast<std::ptrdiff_t>(offset),
                       done.pairs.begin() + static_cast<std::ptrdiff_t>(offset + s.pairs.size()));
        offset += s.pairs.size();
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace petlab
