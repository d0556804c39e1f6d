// SPDX-License-Identifier: Apache-2.0
#include "roam/corpus.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "json.hpp"
#include "roam/util.hpp"

namespace roam {

using nlohmann::json;

namespace {

const char* kSpecialNames[] = {"<pad>", "<bos>", "<eos>", "<sep>", "<mask>"};

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '\'' || c == '-';
}

// Calendar and template words are registered up front so prompts built for
// unseen dates never fall outside the vocabulary.
std::vector<std::string> closed_word_sets() {
    std::vector<std::string> words;
    for (int m = 1; m <= 12; ++m) words.push_back(month_name(m));
    for (int w = 0; w < 7; ++w) words.push_back(weekday_name(w));
    for (int d = 1; d <= 31; ++d) words.push_back(std::to_string(d));
    for (int h = 1; h <= 12; ++h) words.push_back(std::to_string(h));
    for (int pct = 0; pct <= 100; ++pct) words.push_back(std::to_string(pct));
    words.insert(words.end(), {"AM", "PM"});
    words.insert(words.end(), {"clear", "rain", "snow", "extreme_heat", "extreme_cold", "unknown"});
    words.insert(words.end(), {"navigated", "searched", "walked", "rode", "went", "to"});
    // Fixed template vocabulary (instruction, sequence, alignment, profile).
    words.insert(words.end(), {"Based",   "on",     "the",     "user's",  "profile", "and",
                               "his",     "historical", "POI", "check-ins", "Now",   "time",
                               "is",      "he",     "in",      "weather", "Please",  "recommend",
                               "next",    "possible", "that",  "user",    "may",     "expect",
                               "Here",    "at",     "Located", "of",      "Which",   "matches",
                               "this",    "description", "The", "ID",     "refers",  "no",
                               "known",   "home",   "near",    "work",    "top",     "categories",
                               "regular", "visits", "around"});
    words.insert(words.end(), {":", ",", ".", "?", ";", "%"});
    return words;
}

}  // namespace

void Vocab::push(const std::string& token, TokenClass cls) {
    auto [it, inserted] = index_.emplace(token, static_cast<int>(tokens_.size()));
    if (!inserted) return;
    tokens_.push_back(token);
    classes_.push_back(cls);
}

Vocab Vocab::build(const Catalog& catalog, const SidAssignment& sids,
                   const std::vector<std::string>& text_samples, int geohash_precision,
                   size_t max_size) {
    Vocab v;
    for (const char* s : kSpecialNames) v.push(s, TokenClass::special);

    // SID tokens, level-major. Level sizes are inferred from the assignment.
    size_t levels = 0;
    int max_code = 0;
    for (const auto& [poi, sid] : sids.by_poi) {
        levels = std::max(levels, sid.codes.size());
        for (int c : sid.codes) max_code = std::max(max_code, c);
    }
    for (size_t l = 0; l < levels; ++l) {
        char letter = static_cast<char>('a' + l);
        for (int k = 0; k <= max_code; ++k) {
            v.push(std::string("<") + letter + "_" + std::to_string(k) + ">", TokenClass::sid);
        }
    }
    for (int b = 0; b <= sids.max_collision_break; ++b) {
        if (sids.max_collision_break == 0) break;
        v.push("<x_" + std::to_string(b) + ">", TokenClass::sid);
    }

    std::set<std::string> cells;
    for (const auto& p : catalog.pois()) {
        cells.insert(geohash_encode(p.point, geohash_precision).token());
    }
    for (const auto& c : cells) v.push(c, TokenClass::geohash);

    std::set<std::string> words;
    for (const auto& w : closed_word_sets()) words.insert(w);
    for (const auto& sample : text_samples) {
        for (const auto& tok : split_tokens(sample)) {
            if (tok.size() >= 2 && tok.front() == '<' && tok.back() == '>') continue;
            words.insert(tok);
        }
    }
    for (const auto& w : words) v.push(w, TokenClass::base);

    if (v.size() > max_size) {
        throw DataError("vocabulary exceeds configured maximum: " + std::to_string(v.size()) +
                        " > " + std::to_string(max_size));
    }
    return v;
}

int Vocab::id_of(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) throw DataError("unknown token: '" + token + "'");
    return it->second;
}

std::optional<int> Vocab::find(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

const std::string& Vocab::token_of(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= tokens_.size())
        throw DataError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<size_t>(id)];
}

TokenClass Vocab::class_of(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= classes_.size())
        throw DataError("token id out of range: " + std::to_string(id));
    return classes_[static_cast<size_t>(id)];
}

uint64_t Vocab::fingerprint() const {
    uint64_t h = kFnvOffset;
    for (const auto& t : tokens_) {
        h = fnv1a64(t, h);
        h = fnv1a64("\x1e", h);
    }
    return h;
}

std::vector<std::string> Vocab::split_tokens(const std::string& text) {
    std::vector<std::string> out;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            i++;
            continue;
        }
        if (c == '<') {
            size_t close = text.find('>', i);
            if (close != std::string::npos) {
                out.push_back(text.substr(i, close - i + 1));
                i = close + 1;
                continue;
            }
        }
        if (is_word_char(c)) {
            size_t j = i;
            while (j < n && is_word_char(text[j])) j++;
            out.push_back(text.substr(i, j - i));
            i = j;
            continue;
        }
        out.push_back(std::string(1, c));
        i++;
    }
    return out;
}

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& tok : split_tokens(text)) ids.push_back(id_of(tok));
    return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::string out;
    bool prev_angle = false;
    for (int id : ids) {
        const std::string& tok = token_of(id);
        bool is_angle = tok.size() >= 2 && tok.front() == '<' && tok.back() == '>';
        bool is_punct = tok.size() == 1 && !is_word_char(tok[0]) && tok[0] != '<';
        if (!out.empty() && !is_punct && !(is_angle && prev_angle)) out.push_back(' ');
        out += tok;
        prev_angle = is_angle;
    }
    return out;
}

std::string Vocab::to_json() const {
    json j;
    j["tokens"] = tokens_;
    json cls = json::array();
    for (auto c : classes_) cls.push_back(static_cast<int>(c));
    j["classes"] = cls;
    return j.dump();
}

Vocab Vocab::from_json(const std::string& text) {
    json j = json::parse(text);
    Vocab v;
    auto toks = j.at("tokens").get<std::vector<std::string>>();
    auto cls = j.at("classes").get<std::vector<int>>();
    if (toks.size() != cls.size()) throw DataError("vocab json: tokens/classes size mismatch");
    for (size_t i = 0; i < toks.size(); ++i) {
        v.push(toks[i], static_cast<TokenClass>(cls[i]));
    }
    if (v.size() != toks.size()) throw DataError("vocab json: duplicate tokens");
    return v;
}

std::string record_kind_name(RecordKind k) {
    switch (k) {
        case RecordKind::alignment: return "alignment";
        case RecordKind::sequence: return "sequence";
        case RecordKind::sft: return "sft";
        case RecordKind::dpo_pair: return "dpo_pair";
    }
    return "alignment";
}

RecordKind record_kind_from_name(const std::string& s) {
    if (s == "alignment") return RecordKind::alignment;
    if (s == "sequence") return RecordKind::sequence;
    if (s == "sft") return RecordKind::sft;
    if (s == "dpo_pair") return RecordKind::dpo_pair;
    throw DataError("unknown record kind: " + s);
}

std::string alignment_text(const Poi& poi, const Sid& sid, const GeohashCell& cell,
                           const CorpusTemplates& tpl, int variant) {
    const std::string& desc = poi.description.empty() ? poi.name : poi.description;
    std::string sid_str = render_sid(sid);
    std::ostringstream out;
    switch (variant % 3) {
        case 0:
            out << desc << " Located in " << cell.token() << " of " << tpl.region
                << ", and the ID is " << sid_str << ".";
            break;
        case 1:
            out << "Which POI matches this description: " << desc << " Located in " << cell.token()
                << " of " << tpl.region << "? The ID is " << sid_str << ".";
            break;
        default:
            out << "The ID " << sid_str << " refers to " << poi.name << ". " << desc
                << " Located in " << cell.token() << " of " << tpl.region << ".";
            break;
    }
    return out.str();
}

std::string checkin_clause(const CheckIn& c, const Catalog& catalog, const SidAssignment& sids,
                           int tz_offset_minutes) {
    const Poi& poi = catalog.get(c.poi_id);
    CivilTime t = civil_from_ts(c.timestamp, tz_offset_minutes);
    std::ostringstream out;
    out << "at " << hour_12(t.hour) << " " << am_pm(t.hour) << " " << month_name(t.month) << " "
        << t.day << ", the user " << action_verb(c.action) << " " << poi.top_category() << " "
        << render_sid(sids.sid_of(c.poi_id));
    return out.str();
}

std::string sequence_text(const Trajectory& t, const Catalog& catalog, const SidAssignment& sids,
                          int tz_offset_minutes, int max_checkins) {
    size_t n = t.check_ins.size();
    size_t start = n > static_cast<size_t>(max_checkins) ? n - static_cast<size_t>(max_checkins) : 0;
    std::ostringstream out;
    out << "Here is user " << t.user_id << "'s historical POI check-ins. ";
    for (size_t i = start; i < n; ++i) {
        if (i > start) out << ", ";
        out << checkin_clause(t.check_ins[i], catalog, sids, tz_offset_minutes);
    }
    out << ".";
    return out.str();
}

std::string situation_time_text(int64_t ts, int tz_offset_minutes) {
    CivilTime t = civil_from_ts(ts, tz_offset_minutes);
    std::ostringstream out;
    out << hour_12(t.hour) << " " << am_pm(t.hour) << " " << weekday_name(t.weekday) << " "
        << month_name(t.month) << " " << t.day;
    return out.str();
}

std::string sft_prompt_text(const SftSlots& slots) {
    std::ostringstream out;
    out << "Based on the user's profile: " << slots.profile_text
        << ", and his historical POI check-ins: " << slots.history_text << ". Now the time is "
        << slots.time_text << ", he is in " << slots.location_cell << ", and the weather is "
        << slots.weather_text << ". Please recommend the next possible POI that the user may expect?";
    return out.str();
}

CorpusRecord RecordBuilder::alignment_record(const std::string& text) const {
    CorpusRecord r;
    r.kind = RecordKind::alignment;
    r.tokens.push_back(kBosId);
    for (int id : vocab->encode(text)) r.tokens.push_back(id);
    r.tokens.push_back(kEosId);
    return r;
}

CorpusRecord RecordBuilder::sequence_record(const std::string& text) const {
    CorpusRecord r = alignment_record(text);
    r.kind = RecordKind::sequence;
    return r;
}

CorpusRecord RecordBuilder::sft_record(const std::string& prompt_text, const Sid& target) const {
    CorpusRecord r;
    r.kind = RecordKind::sft;
    r.tokens.push_back(kBosId);
    for (int id : vocab->encode(prompt_text)) r.tokens.push_back(id);
    r.tokens.push_back(kSepId);
    r.prompt = Span{0, static_cast<int>(r.tokens.size())};
    int resp_begin = static_cast<int>(r.tokens.size());
    for (const auto& tok : sid_tokens(target)) r.tokens.push_back(vocab->id_of(tok));
    r.tokens.push_back(kEosId);
    r.response = Span{resp_begin, static_cast<int>(r.tokens.size())};
    return r;
}

MaskedRecord mask_for_pretraining(const CorpusRecord& record, const Vocab& vocab, double ratio,
                                  uint64_t seed) {
    if (record.kind != RecordKind::alignment && record.kind != RecordKind::sequence)
        throw ConfigError("mask_for_pretraining: record kind must be alignment or sequence");
    MaskedRecord out;
    out.input = record.tokens;
    if (ratio <= 0.0) return out;

    std::vector<int> base_positions;
    for (size_t i = 0; i < record.tokens.size(); ++i) {
        if (vocab.class_of(record.tokens[i]) == TokenClass::base)
            base_positions.push_back(static_cast<int>(i));
    }
    size_t n_mask = static_cast<size_t>(ratio * static_cast<double>(base_positions.size()));
    if (n_mask == 0) return out;

    uint64_t record_hash = kFnvOffset;
    for (int id : record.tokens) record_hash = fnv1a64(std::to_string(id) + ",", record_hash);
    Rng rng(seed ^ record_hash);
    rng.shuffle(base_positions);
    base_positions.resize(n_mask);
    std::sort(base_positions.begin(), base_positions.end());
    for (int pos : base_positions) {
        out.targets.emplace_back(pos, record.tokens[static_cast<size_t>(pos)]);
        out.input[static_cast<size_t>(pos)] = kMaskId;
    }
    return out;
}

std::string records_to_jsonl(const std::vector<CorpusRecord>& records) {
    std::ostringstream out;
    for (const auto& r : records) {
        json j;
        j["kind"] = record_kind_name(r.kind);
        j["token_ids"] = r.tokens;
        if (r.kind == RecordKind::sft || r.kind == RecordKind::dpo_pair) {
            j["spans"] = {{"prompt", {r.prompt.begin, r.prompt.end}},
                          {"response", {r.response.begin, r.response.end}}};
        }
        out << j.dump() << "\n";
    }
    return out.str();
}

std::vector<CorpusRecord> records_from_jsonl(const std::string& text) {
    std::vector<CorpusRecord> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        CorpusRecord r;
        r.kind = record_kind_from_name(j.at("kind").get<std::string>());
        r.tokens = j.at("token_ids").get<std::vector<int>>();
        if (j.contains("spans")) {
            auto p = j["spans"]["prompt"].get<std::vector<int>>();
            auto resp = j["spans"]["response"].get<std::vector<int>>();
            r.prompt = Span{p[0], p[1]};
            r.response = Span{resp[0], resp[1]};
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace roam
