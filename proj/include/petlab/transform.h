// SPDX-License-Identifier: Apache-2.0
//
// Input rewrites that raise or lower a task's familiarity. Only x changes.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "petlab/corpus.h"

namespace petlab {

enum class TransformKind { identity, familiar_plus, remap_keys, remap_all };

std::string_view to_string(TransformKind kind);
// Accepts the long names "unfamiliar_remap_keys" / "unfamiliar_remap_all" too.
TransformKind transform_kind_from_string(std::string_view s);

struct TransformSpec {
    TransformKind kind = TransformKind::identity;
    // Explicit word -> word map. When absent, remap kinds draw a seeded
    // bijection from their domain into the foreign partition.
    std::optional<std::map<std::string, std::string>> remap;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    static TransformSpec from_json(const nlohmann::json& j);
};

// Keys are attribute names (the word before "[") and, in logic forms, "call",
// function names and "string". Values are every other non-punctuation word.
//
// familiar_plus turns "key [ value ]" into "key is value" and appends "."; a
// logic form becomes its canonical utterance ("list pub that has food Indian
// and that has area riverside .").
//
// Throws SpecError on a non-injective remap, a remap domain outside the
// corpus inputs, too few foreign words, or an unparseable logic form.
Corpus transform_inputs(const Corpus& corpus, const TransformSpec& spec);

// Applies one spec to several splits with a single shared remap, computed
// over their union.
std::vector<Corpus> transform_jointly(const std::vector<Corpus>& splits, const TransformSpec& spec);

}  // namespace petlab
