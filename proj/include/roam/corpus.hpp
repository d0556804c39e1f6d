// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "roam/catalog.hpp"
#include "roam/profile.hpp"
#include "roam/sid.hpp"

namespace roam {

// Special token ids are pinned so they survive any vocabulary rebuild.
constexpr int kPadId = 0;
constexpr int kBosId = 1;
constexpr int kEosId = 2;
constexpr int kSepId = 3;
constexpr int kMaskId = 4;

enum class TokenClass { special, sid, geohash, base };

class Vocab {
public:
    // Id layout: specials, SID tokens (level-major, then collision tokens),
    // geohash tokens (sorted), base word tokens (sorted). Rebuilding from the
    // same inputs yields the same assignment.
    static Vocab build(const Catalog& catalog, const SidAssignment& sids,
                       const std::vector<std::string>& text_samples, int geohash_precision,
                       size_t max_size = 50000);

    int id_of(const std::string& token) const;              // throws DataError when unknown
    std::optional<int> find(const std::string& token) const;
    const std::string& token_of(int id) const;
    TokenClass class_of(int id) const;
    size_t size() const { return tokens_.size(); }
    uint64_t fingerprint() const;

    // Word-level tokenization. "<...>" spans are atomic tokens; words are
    // [A-Za-z0-9_'-]+ runs; any other non-space byte is its own token.
    std::vector<int> encode(const std::string& text) const;
    static std::vector<std::string> split_tokens(const std::string& text);
    std::string decode(const std::vector<int>& ids) const;

    std::string to_json() const;
    static Vocab from_json(const std::string& text);

private:
    std::vector<std::string> tokens_;
    std::vector<TokenClass> classes_;
    std::map<std::string, int> index_;

    void push(const std::string& token, TokenClass cls);
};

enum class RecordKind { alignment, sequence, sft, dpo_pair };

struct Span {
    int begin = 0;  // token index, inclusive
    int end = 0;    // exclusive
    int size() const { return end - begin; }
};

struct CorpusRecord {
    RecordKind kind = RecordKind::alignment;
    std::vector<int> tokens;
    Span prompt;    // sft/dpo only
    Span response;  // sft/dpo only
};

std::string record_kind_name(RecordKind k);
RecordKind record_kind_from_name(const std::string& s);

struct CorpusTemplates {
    std::string region = "the city";
};

// "SID-Location-Description alignment" text. Three template variants are
// rotated by `variant` (callers pass a round-robin counter).
std::string alignment_text(const Poi& poi, const Sid& sid, const GeohashCell& cell,
                           const CorpusTemplates& tpl, int variant);

// One behavior clause: "at 8 AM June 10, the user navigated to office <sid>".
std::string checkin_clause(const CheckIn& c, const Catalog& catalog, const SidAssignment& sids,
                           int tz_offset_minutes);

// Full behavior-sequence text over the most recent `max_checkins` check-ins.
std::string sequence_text(const Trajectory& t, const Catalog& catalog, const SidAssignment& sids,
                          int tz_offset_minutes, int max_checkins = 50);

struct SftSlots {
    std::string profile_text;  // may be blanked by ablations
    std::string history_text;  // comma-joined check-in clauses
    std::string time_text;
    std::string location_cell;  // "<wx4g0>"
    std::string weather_text;
};

std::string sft_prompt_text(const SftSlots& slots);
std::string situation_time_text(int64_t ts, int tz_offset_minutes);

struct RecordBuilder {
    const Vocab* vocab = nullptr;

    CorpusRecord alignment_record(const std::string& text) const;
    CorpusRecord sequence_record(const std::string& text) const;
    CorpusRecord sft_record(const std::string& prompt_text, const Sid& target) const;
};

struct MaskedRecord {
    std::vector<int> input;               // original with <mask> substitutions
    std::vector<std::pair<int, int>> targets;  // (position, original id)
};

// Masks `ratio` of the base-class tokens (never SID/geohash/special tokens),
// deterministically for a given (record, seed).
MaskedRecord mask_for_pretraining(const CorpusRecord& record, const Vocab& vocab, double ratio,
                                  uint64_t seed);

std::string records_to_jsonl(const std::vector<CorpusRecord>& records);
std::vector<CorpusRecord> records_from_jsonl(const std::string& text);

}  // namespace roam
