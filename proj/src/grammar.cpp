// SPDX-License-Identifier: Apache-2.0

#include "petlab/grammar.h"

#include <algorithm>
#include <set>
#include <sstream>

#include "petlab/errors.h"
#include "petlab/rng.h"

namespace petlab {

namespace {

const std::vector<std::string> kNames{
    "The Punter",     "The Eagle",      "Blue Spice",     "The Mill",       "Green Man",       "Zizzi",
    "Aromi",          "Loch Fyne",      "The Rice Boat",  "Cotto",          "Giraffe",         "Wildwood",
    "Alimentum",      "The Golden Curry", "Fitzbillies",  "Strada",         "Browns Cambridge", "The Phoenix",
    "Clowns",         "The Wrestlers",  "The Cricketers", "The Olive Grove", "The Vaults",     "The Plough"};
const std::vector<std::string> kFoods{"Indian", "Italian", "French", "Chinese", "English", "Japanese", "Thai", "Spanish"};
const std::vector<std::string> kAreas{"riverside", "city centre"};
const std::vector<std::string> kPrices{"cheap", "moderate", "expensive"};
const std::vector<std::string> kRatings{"low", "average", "high", "excellent"};
const std::vector<std::string> kTypes{"restaurant", "pub", "coffee shop"};

const std::vector<std::string> kDets{"the", "a", "every", "this", "that"};
const std::vector<std::string> kNouns{
    "man",    "woman",  "child",   "dog",      "cat",     "bird",   "horse",   "farmer",  "teacher", "doctor",
    "student", "friend", "city",   "village",  "river",   "garden", "house",   "street",  "market",  "table",
    "window", "door",   "book",    "letter",   "song",    "story",  "picture", "car",     "train",   "boat",
    "road",   "bridge", "park",    "tree",     "flower",  "field",  "hill",    "mountain", "forest", "lake",
    "sea",    "island", "king",    "queen",    "soldier", "driver", "worker",  "artist",  "writer",  "singer",
    "baker",  "chef",   "waiter",  "guest",    "owner",   "neighbor", "stranger", "visitor", "kitchen", "menu",
    "plate",  "cup",    "bottle",  "chair",    "wall",    "room",   "office",  "school",  "church",  "station"};
const std::vector<std::string> kVerbs{
    "saw",     "found",   "liked",  "visited", "painted", "built",    "opened",  "closed",   "carried", "followed",
    "helped",  "watched", "heard",  "called",  "met",     "left",     "chose",   "praised",  "moved",   "cleaned",
    "fixed",   "sold",    "bought", "wrote",   "read",    "loved",    "missed",  "passed",   "greeted", "described",
    "remembered", "noticed", "ordered", "reached", "joined", "thanked", "asked",  "answered", "kept",   "shared"};
const std::vector<std::string> kAdjs{
    "old",    "young", "small",  "large",   "quiet",   "busy",   "bright", "dark",    "warm",   "cold",
    "green",  "blue",  "red",    "happy",   "tired",   "lucky",  "famous", "modern",  "ancient", "narrow",
    "wide",   "clean", "simple", "strange", "gentle",  "proud",  "careful", "brave",  "calm",   "quick",
    "slow",   "rich",  "poor",   "kind",    "early",   "late",   "new",    "fine",    "golden", "empty"};
const std::vector<std::string> kAdvs{"quickly", "slowly",  "often",   "never", "always", "quietly", "gladly",
                                     "rarely",  "suddenly", "carefully", "happily", "finally", "soon", "again",
                                     "also",    "still",   "nearly",  "simply", "really", "openly"};
const std::vector<std::string> kPreps{"near", "in", "at", "with", "by", "from", "to", "under", "over", "behind", "beside"};

// Task-only words: keys, logic syntax and paraphrase glue that the
// pretraining grammar may never emit.
const std::vector<std::string> kTaskWords{"name",  "type",   "food",      "price",    "rating",   "area",  "family",
                                          "yes",   "no",     "call",      "listvalue", "count",   "filter", "getentity",
                                          "string", "(",     ")",         "whose",    "place",    "[",     "]"};
// Extra filler used only to round the natural partition to a multiple of 4.
const std::vector<std::string> kPadding{"lamp", "coat", "stone", "cloud"};

std::vector<Phrase> uniform_phrases(const std::vector<std::string>& surface) {
    std::vector<Phrase> out;
    for (const auto& s : surface) out.push_back({split_whitespace(s), 1.0});
    return out;
}

// "{var}" is a document variable, "<slot>" a fresh draw, anything else a
// literal token.
SentenceTemplate parse_template(std::string_view text, double weight = 1.0) {
    SentenceTemplate t;
    t.weight = weight;
    for (auto& w : split_whitespace(text)) {
        if (w.size() > 2 && w.front() == '{' && w.back() == '}') {
            t.pieces.push_back({Piece::Kind::variable, w.substr(1, w.size() - 2)});
        } else if (w.size() > 2 && w.front() == '<' && w.back() == '>') {
            t.pieces.push_back({Piece::Kind::slot, w.substr(1, w.size() - 2)});
        } else {
            t.pieces.push_back({Piece::Kind::literal, w});
        }
    }
    return t;
}

Grammar build_grammar() {
    Grammar g;
    g.lexicon["name"] = uniform_phrases(kNames);
    g.lexicon["near"] = uniform_phrases(kNames);
    g.lexicon["food"] = uniform_phrases(kFoods);
    g.lexicon["area"] = uniform_phrases(kAreas);
    g.lexicon["price"] = uniform_phrases(kPrices);
    g.lexicon["rating"] = uniform_phrases(kRatings);
    g.lexicon["type"] = uniform_phrases(kTypes);
    g.lexicon["det"] = uniform_phrases(kDets);
    g.lexicon["noun"] = uniform_phrases(kNouns);
    g.lexicon["verb"] = uniform_phrases(kVerbs);
    g.lexicon["adj"] = uniform_phrases(kAdjs);
    g.lexicon["adv"] = uniform_phrases(kAdvs);
    g.lexicon["prep"] = uniform_phrases(kPreps);

    DocumentKind entity;
    entity.name = "entity";
    entity.weight = 0.7;
    for (const char* s : {"{name} is a {type} in the {area} area .",
                          "{name} is a {price} {type} near {near} .",
                          "{name} serves {food} food .",
                          "the food at {name} is {food} .",
                          "its name is {name} , food is {food} , area is {area} .",
                          "name is {name} , type is {type} , price is {price} .",
                          "{name} has food [ {food} ] and rating [ {rating} ] .",
                          "near {near} you will find {name} .",
                          "{name} is a {type} with a {rating} customer rating ."}) {
        entity.first.push_back(parse_template(s));
    }
    for (const char* s : {"It serves {food} food and has a {rating} customer rating .",
                          "{name} is near {near} in the {area} area .",
                          "It is {price} and is family friendly .",
                          "It is not family friendly .",
                          "{name} is a {type} with a {rating} customer rating .",
                          "the price is {price} and the rating is {rating} .",
                          "It has a {rating} customer rating .",
                          "{name} serves {food} food near {near} .",
                          "{name} is a {price} {type} in the {area} area ."}) {
        entity.second.push_back(parse_template(s));
    }

    DocumentKind filler;
    filler.name = "filler";
    filler.weight = 0.3;
    for (const char* s : {"<det> <noun> <verb> <det> <adj> <noun> .",
                          "<det> <adj> <noun> <verb> <det> <noun> <prep> <det> <noun> .",
                          "<det> <noun> <adv> <verb> <det> <noun> .",
                          "we call <det> <noun> <det> <adj> <noun> .",
                          "they count <det> <noun> <prep> <det> <noun> .",
                          "<det> <noun> that has <det> <adj> <noun> <verb> <det> <noun> .",
                          "list every <noun> <prep> <det> <noun> .",
                          "which <noun> has <det> <adj> <noun> ?",
                          "show me each <noun> with <det> <adj> <noun> .",
                          "how many <noun> have <det> <adj> <noun> ?",
                          "number of <noun> <prep> <det> <noun> is <adj> ."}) {
        filler.first.push_back(parse_template(s));
        filler.second.push_back(parse_template(s));
    }
    g.documents = {std::move(entity), std::move(filler)};
    return g;
}

template <typename T>
const T& pick_weighted(const std::vector<T>& items, Rng& rng) {
    std::vector<double> w;
    w.reserve(items.size());
    for (const auto& it : items) w.push_back(it.weight);
    return items[rng.categorical(w)];
}

const std::string& pick(const std::vector<std::string>& items, Rng& rng) { return items[rng.below(items.size())]; }

const std::shared_ptr<const Vocab>& shared_vocab() {
    static const auto v = std::make_shared<const Vocab>(Vocab::standard());
    return v;
}

void append_words(std::vector<std::string>& out, std::string_view text) {
    for (auto& w : split_whitespace(text)) out.push_back(std::move(w));
}

std::vector<TokenId> encode_words(const std::vector<std::string>& words) {
    const auto& v = *shared_vocab();
    std::vector<TokenId> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(v.id(w));
    return ids;
}

}  // namespace

const Grammar& pretrain_grammar() {
    static const Grammar g = build_grammar();
    return g;
}

const std::vector<std::string>& natural_lexicon() {
    static const std::vector<std::string> lex = [] {
        std::vector<std::string> out;
        std::set<std::string> seen;
        auto add = [&](const std::string& w) {
            if (seen.insert(w).second) out.push_back(w);
        };
        const Grammar& g = pretrain_grammar();
        for (const auto& doc : g.documents) {
            for (const auto* side : {&doc.first, &doc.second}) {
                for (const auto& t : *side) {
                    for (const auto& p : t.pieces) {
                        if (p.kind == Piece::Kind::literal) {
                            add(p.text);
                        } else {
                            for (const auto& ph : g.lexicon.at(p.text)) {
                                for (const auto& w : ph.tokens) add(w);
                            }
                        }
                    }
                }
            }
        }
        for (const auto& w : kTaskWords) add(w);
        for (const auto& w : kPadding) {
            if (out.size() % 4 == 0) break;
            add(w);
        }
        return out;
    }();
    return lex;
}

std::vector<std::string> foreign_lexicon(std::size_t count) {
    static const std::vector<std::string> seeds{
        "nom",     "nourriture", "zone",   "prix",   "note",    "pres",     "genre",  "famille", "oui",
        "non",     "appel",      "liste",  "compte", "filtre",  "chaine",   "entite", "valeur",  "riviere",
        "centre_ville", "bon",   "cher",   "moyen",  "faible",  "diaoyong", "lieju",  "dedao",   "zifuchuan",
        "guolu",   "jishu",      "shiti"};
    const auto& natural = natural_lexicon();
    std::set<std::string> taken(natural.begin(), natural.end());
    std::vector<std::string> out;
    auto add = [&](const std::string& w) {
        if (out.size() < count && taken.insert(w).second) out.push_back(w);
    };
    for (const auto& w : seeds) add(w);
    static const char* consonants = "bdfgklmnprstvz";
    static const char* vowels = "aeiou";
    for (int a = 0; out.size() < count; ++a) {
        // Two-syllable pseudo-words in a fixed enumeration order.
        const int c1 = a % 14, v1 = (a / 14) % 5, c2 = (a / 70) % 14, v2 = (a / 980) % 5;
        std::string w{consonants[c1], vowels[v1], consonants[c2], vowels[v2]};
        if (a >= 4900) w += std::to_string(a);
        add(w);
    }
    return out;
}

Corpus gen_pretrain_corpus(std::uint64_t grammar_seed, std::size_t size, std::size_t cap) {
    if (size < 1) throw ConfigError("pretraining corpus size must be at least 1");
    if (size > cap) {
        throw ResourceError("pretraining corpus size " + std::to_string(size) + " exceeds the cap of " + std::to_string(cap));
    }
    const Grammar& g = pretrain_grammar();
    Rng rng(grammar_seed);
    Corpus c;
    c.vocab = shared_vocab();
    c.origin = {{"generator", "pretrain"}, {"seed", grammar_seed}, {"size", size}, {"transforms", nlohmann::json::array()}};
    c.pairs.reserve(size);

    const auto& names = g.lexicon.at("name");
    for (std::size_t i = 0; i < size; ++i) {
        const DocumentKind& doc = pick_weighted(g.documents, rng);
        const SentenceTemplate& first = pick_weighted(doc.first, rng);
        const SentenceTemplate& second = pick_weighted(doc.second, rng);

        // Document variables are drawn up front in a fixed order.
        std::map<std::string, const Phrase*> vars;
        const std::size_t name_index = rng.categorical([&] {
            std::vector<double> w;
            for (const auto& p : names) w.push_back(p.weight);
            return w;
        }());
        vars["name"] = &names[name_index];
        {
            std::vector<double> w;
            for (std::size_t j = 0; j < names.size(); ++j) w.push_back(j == name_index ? 0.0 : names[j].weight);
            vars["near"] = &g.lexicon.at("near")[rng.categorical(w)];
        }
        for (const char* v : {"food", "area", "price", "rating", "type"}) vars[v] = &pick_weighted(g.lexicon.at(v), rng);

        auto realize = [&](const SentenceTemplate& t) {
            std::vector<std::string> words;
            for (const auto& p : t.pieces) {
                switch (p.kind) {
                    case Piece::Kind::literal: words.push_back(p.text); break;
                    case Piece::Kind::variable: {
                        const auto& toks = vars.at(p.text)->tokens;
                        words.insert(words.end(), toks.begin(), toks.end());
                        break;
                    }
                    case Piece::Kind::slot: {
                        const auto& toks = pick_weighted(g.lexicon.at(p.text), rng).tokens;
                        words.insert(words.end(), toks.begin(), toks.end());
                        break;
                    }
                }
            }
            return encode_words(words);
        };
        Pair pair;
        pair.x = realize(first);
        pair.y = realize(second);
        c.pairs.push_back(std::move(pair));
    }
    return c;
}

std::string_view to_string(TaskKind kind) { return kind == TaskKind::table_to_text ? "table_to_text" : "logic_to_text"; }

TaskKind task_kind_from_string(std::string_view s) {
    if (s == "table_to_text") return TaskKind::table_to_text;
    if (s == "logic_to_text") return TaskKind::logic_to_text;
    throw ConfigError("unknown task kind: " + std::string(s));
}

namespace {

Pair table_item(Rng& rng, const TaskOptions& opt) {
    const std::string name = pick(kNames, rng);
    std::string near;
    do {
        near = pick(kNames, rng);
    } while (near == name);

    std::map<std::string, std::string> attrs{{"name", name}};
    const std::vector<std::pair<std::string, const std::vector<std::string>*>> optional{
        {"type", &kTypes}, {"food", &kFoods}, {"price", &kPrices}, {"rating", &kRatings}, {"area", &kAreas}};
    for (const auto& [key, values] : optional) {
        const bool present = rng.uniform() < opt.attribute_rate;
        const std::string& v = pick(*values, rng);
        if (present) attrs[key] = v;
    }
    if (rng.uniform() < opt.attribute_rate) attrs["family"] = rng.uniform() < 0.5 ? "yes" : "no";
    if (rng.uniform() < opt.attribute_rate) attrs["near"] = near;

    std::vector<std::string> x;
    bool first = true;
    for (const char* key : {"name", "type", "food", "price", "rating", "area", "family", "near"}) {
        auto it = attrs.find(key);
        if (it == attrs.end()) continue;
        if (!first) x.push_back(",");
        first = false;
        x.push_back(key);
        x.push_back("[");
        append_words(x, it->second);
        x.push_back("]");
    }

    auto has = [&](const char* k) { return attrs.count(k) != 0; };
    std::vector<std::string> y;
    append_words(y, name);
    append_words(y, "is a");
    if (has("price")) y.push_back(attrs["price"]);
    append_words(y, has("type") ? attrs["type"] : std::string("place"));
    if (has("near")) {
        y.push_back("near");
        append_words(y, attrs["near"]);
    }
    if (has("area")) {
        append_words(y, "in the");
        append_words(y, attrs["area"]);
        y.push_back("area");
    }
    y.push_back(".");
    std::vector<std::string> clauses;
    if (has("food")) clauses.push_back("serves " + attrs["food"] + " food");
    if (has("rating")) clauses.push_back("has a " + attrs["rating"] + " customer rating");
    if (has("family")) clauses.push_back(attrs["family"] == "yes" ? "is family friendly" : "is not family friendly");
    if (!clauses.empty()) {
        y.push_back("It");
        for (std::size_t i = 0; i < clauses.size(); ++i) {
            if (i) y.push_back("and");
            append_words(y, clauses[i]);
        }
        y.push_back(".");
    }
    return {encode_words(x), encode_words(y)};
}

struct LogicForm {
    bool count = false;
    std::string type;
    std::vector<std::pair<std::string, std::string>> filters;  // innermost first
};

std::vector<std::string> logic_surface(const LogicForm& f) {
    std::vector<std::string> inner{"call", "getentity", "(", "string"};
    append_words(inner, f.type);
    inner.push_back(")");
    for (const auto& [key, value] : f.filters) {
        std::vector<std::string> wrapped{"call", "filter", "("};
        wrapped.insert(wrapped.end(), inner.begin(), inner.end());
        wrapped.insert(wrapped.end(), {",", "string", key, ","});
        append_words(wrapped, value);
        wrapped.push_back(")");
        inner = std::move(wrapped);
    }
    std::vector<std::string> out{"call", f.count ? "count" : "listvalue", "("};
    out.insert(out.end(), inner.begin(), inner.end());
    out.push_back(")");
    return out;
}

struct ParaphraseStyle {
    const char* open;
    const char* lead;  // before the first filter; nullptr for "whose K is V" filters
    const char* end;
};

// Three paraphrases per top-level function.
constexpr ParaphraseStyle kListStyles[3] = {{"list every", nullptr, "."}, {"show me each", "with", "."}, {"which", "has", "?"}};
constexpr ParaphraseStyle kCountStyles[3] = {{"how many", "have", "?"}, {"count every", nullptr, "."}, {"number of", "with", "."}};

std::vector<std::string> logic_paraphrase(const LogicForm& f, int variant) {
    const ParaphraseStyle& style = (f.count ? kCountStyles : kListStyles)[variant];
    std::vector<std::string> y;
    append_words(y, style.open);
    append_words(y, f.type);
    for (std::size_t i = 0; i < f.filters.size(); ++i) {
        if (i) y.push_back("and");
        if (style.lead == nullptr) {
            append_words(y, "whose " + f.filters[i].first + " is");
        } else {
            if (i == 0) y.push_back(style.lead);
            y.push_back(f.filters[i].first);
        }
        append_words(y, f.filters[i].second);
    }
    y.push_back(style.end);
    return y;
}

}  // namespace

Corpus gen_task(TaskKind kind, std::size_t size, std::uint64_t seed, const TaskOptions& options) {
    if (size < 1) throw ConfigError("task size must be at least 1");
    if (options.max_depth < 1) throw ConfigError("max_depth must be at least 1");
    Rng rng(seed);
    Corpus c;
    c.vocab = shared_vocab();
    c.origin = {{"generator", std::string(to_string(kind))},
                {"seed", seed},
                {"size", size},
                {"attribute_rate", options.attribute_rate},
                {"max_depth", options.max_depth},
                {"all_references", options.all_references},
                {"transforms", nlohmann::json::array()}};
    if (kind == TaskKind::table_to_text) {
        for (std::size_t i = 0; i < size; ++i) c.pairs.push_back(table_item(rng, options));
        return c;
    }
    const std::vector<std::pair<std::string, const std::vector<std::string>*>> keys{
        {"food", &kFoods}, {"area", &kAreas}, {"price", &kPrices}, {"rating", &kRatings}};
    const int max_filters = std::min<int>(options.max_depth, static_cast<int>(keys.size()));
    for (std::size_t i = 0; i < size; ++i) {
        LogicForm f;
        f.count = rng.uniform() < 0.4;
        f.type = pick(kTypes, rng);
        const int n = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_filters)));
        std::vector<std::size_t> order{0, 1, 2, 3};
        rng.shuffle(order);
        for (int j = 0; j < n; ++j) {
            const auto& [key, values] = keys[order[static_cast<std::size_t>(j)]];
            f.filters.emplace_back(key, pick(*values, rng));
        }
        const auto x = encode_words(logic_surface(f));
        if (options.all_references) {
            for (int v = 0; v < 3; ++v) c.pairs.push_back({x, encode_words(logic_paraphrase(f, v))});
        } else {
            c.pairs.push_back({x, encode_words(logic_paraphrase(f, static_cast<int>(rng.below(3))))});
        }
    }
    return c;
}

}  // namespace petlab
