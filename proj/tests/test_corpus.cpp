// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <set>

#include "doctest.h"
#include "roam/corpus.hpp"
#include "roam/util.hpp"

using namespace roam;

namespace {

Poi make_poi(const std::string& id, double lon, double lat, std::vector<std::string> cat,
             std::string name = "", std::string desc = "") {
    Poi p;
    p.poi_id = id;
    p.name = name.empty() ? id : name;
    p.point = GeoPoint(lon, lat);
    p.category_path = std::move(cat);
    p.description = std::move(desc);
    return p;
}

struct Fixture {
    Catalog catalog;
    SidAssignment sids;
    Vocab vocab;
};

Fixture small_world() {
    Fixture f;
    // Temple-of-Heaven-style fixture pinned inside geohash cell wm6j0.
    GeoBox box = geohash_decode(GeohashCell{"wm6j0"});
    GeoPoint inside = box.center();
    f.catalog.add(make_poi("temple", inside.lon, inside.lat, {"park", "historic"},
                           "heaven temple park",
                           "The largest surviving ancient ceremonial complex in the city."));
    f.catalog.add(make_poi("office1", 116.40, 39.91, {"office"}, "tall office",
                           "A busy office tower."));
    f.catalog.add(make_poi("hotel1", 116.41, 39.92, {"hotel"}, "grand hotel",
                           "A quiet hotel near the station."));
    f.catalog.sort_by_id();

    Sid temple_sid;
    temple_sid.codes = {82, 59, 191};
    Sid office_sid;
    office_sid.codes = {12, 28, 140};
    Sid hotel_sid;
    hotel_sid.codes = {124, 192, 41};
    f.sids.by_poi = {{"temple", temple_sid}, {"office1", office_sid}, {"hotel1", hotel_sid}};
    for (const auto& [poi, sid] : f.sids.by_poi) f.sids.to_poi[render_sid(sid)] = poi;

    std::vector<std::string> samples;
    CorpusTemplates tpl;
    tpl.region = "Beijing";
    for (const auto& p : f.catalog.pois()) {
        for (int v = 0; v < 3; ++v) {
            samples.push_back(alignment_text(p, f.sids.sid_of(p.poi_id),
                                             geohash_encode(p.point, 5), tpl, v));
        }
    }
    f.vocab = Vocab::build(f.catalog, f.sids, samples, 5);
    return f;
}

}  // namespace

TEST_CASE("SID strings tokenize atomically to three ids") {
    Fixture f = small_world();
    auto ids = f.vocab.encode("<a_82><b_59><c_191>");
    REQUIRE(ids.size() == 3);
    CHECK(f.vocab.token_of(ids[0]) == "<a_82>");
    CHECK(f.vocab.token_of(ids[1]) == "<b_59>");
    CHECK(f.vocab.token_of(ids[2]) == "<c_191>");
    for (int id : ids) CHECK(f.vocab.class_of(id) == TokenClass::sid);
}

TEST_CASE("vocabulary rebuild is deterministic") {
    Fixture a = small_world();
    Fixture b = small_world();
    CHECK(a.vocab.to_json() == b.vocab.to_json());
    CHECK(a.vocab.fingerprint() == b.vocab.fingerprint());
}

TEST_CASE("encode/decode round trip modulo whitespace") {
    Fixture f = small_world();
    const Poi& temple = f.catalog.get("temple");
    CorpusTemplates tpl;
    tpl.region = "Beijing";
    std::string text =
        alignment_text(temple, f.sids.sid_of("temple"), geohash_encode(temple.point, 5), tpl, 0);
    std::string decoded = f.vocab.decode(f.vocab.encode(text));
    auto squash = [](const std::string& s) {
        std::string out;
        for (char c : s)
            if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
        return out;
    };
    CHECK(squash(decoded) == squash(text));
}

TEST_CASE("unknown tokens are rejected with an error") {
    Fixture f = small_world();
    CHECK_THROWS_AS(f.vocab.encode("zzz_never_seen_zzz"), DataError);
}

TEST_CASE("alignment record carries the cell and SID tokens of the fixture") {
    Fixture f = small_world();
    const Poi& temple = f.catalog.get("temple");
    GeohashCell cell = geohash_encode(temple.point, 5);
    CHECK(cell.code == "wm6j0");
    CorpusTemplates tpl;
    tpl.region = "Beijing";
    std::string text = alignment_text(temple, f.sids.sid_of("temple"), cell, tpl, 0);
    CHECK(text.find("<wm6j0>") != std::string::npos);
    CHECK(text.find("<a_82><b_59><c_191>") != std::string::npos);
    CHECK(text.find("Located in") != std::string::npos);
}

TEST_CASE("empty description falls back to the POI name") {
    Fixture f = small_world();
    Poi bare = make_poi("bare", 116.4, 39.9, {"cafe"}, "corner cafe", "");
    CorpusTemplates tpl;
    Sid sid;
    sid.codes = {1, 2, 3};
    std::string text = alignment_text(bare, sid, geohash_encode(bare.point, 5), tpl, 0);
    CHECK(text.find("corner cafe") != std::string::npos);
}

TEST_CASE("alignment templates rotate round-robin") {
    Fixture f = small_world();
    const Poi& temple = f.catalog.get("temple");
    CorpusTemplates tpl;
    GeohashCell cell = geohash_encode(temple.point, 5);
    Sid sid = f.sids.sid_of("temple");
    std::set<std::string> variants = {alignment_text(temple, sid, cell, tpl, 0),
                                      alignment_text(temple, sid, cell, tpl, 1),
                                      alignment_text(temple, sid, cell, tpl, 2)};
    CHECK(variants.size() == 3);
    CHECK(alignment_text(temple, sid, cell, tpl, 3) == alignment_text(temple, sid, cell, tpl, 0));
}

TEST_CASE("sequence text has one clause per check-in in time order") {
    Fixture f = small_world();
    Trajectory t;
    t.user_id = "uid_256";
    t.check_ins.push_back({"uid_256", "office1", ts_from_civil(2024, 6, 10, 7), Action::rode});
    t.check_ins.push_back({"uid_256", "hotel1", ts_from_civil(2024, 6, 11, 21), Action::navigated});
    std::string text = sequence_text(t, f.catalog, f.sids, 0, 50);
    CHECK(text.find("Here is user uid_256's historical POI check-ins.") == 0);
    CHECK(text.find("at 7 AM June 10, the user rode to office") != std::string::npos);
    CHECK(text.find("at 9 PM June 11, the user navigated to hotel") != std::string::npos);
    CHECK(text.find("<a_12><b_28><c_140>") != std::string::npos);
    CHECK(text.find("<a_124><b_192><c_41>") != std::string::npos);
    CHECK(text.find("rode to office") < text.find("navigated to hotel"));
}

TEST_CASE("sequence text truncates to the most recent 50 check-ins") {
    Fixture f = small_world();
    Trajectory t;
    t.user_id = "u";
    for (int i = 0; i < 80; ++i)
        t.check_ins.push_back({"u", "office1", ts_from_civil(2024, 6, 1) + i * 3600, Action::walked});
    std::string text = sequence_text(t, f.catalog, f.sids, 0, 50);
    size_t clauses = 0, pos = 0;
    while ((pos = text.find("at ", pos)) != std::string::npos) {
        clauses++;
        pos += 3;
    }
    CHECK(clauses == 50);
    // the first clause is the 31st check-in (hour 6 of June 2)
    CHECK(text.find("June 1,") == std::string::npos);
}

TEST_CASE("action verbs match the published clauses") {
    CHECK(std::string(action_verb(Action::navigated)) == "navigated to");
    CHECK(std::string(action_verb(Action::searched)) == "searched");
    CHECK(std::string(action_verb(Action::walked)) == "walked to");
    CHECK(std::string(action_verb(Action::rode)) == "rode to");
}

TEST_CASE("sft prompt uses the instruction template verbatim") {
    SftSlots slots;
    slots.profile_text = "no known profile";
    slots.history_text = "at 7 AM June 10, the user rode to office <a_12><b_28><c_140>";
    slots.time_text = "9 PM Tuesday June 11";
    slots.location_cell = "<wm6j0>";
    slots.weather_text = "clear";
    std::string prompt = sft_prompt_text(slots);
    CHECK(prompt.find("Based on the user's profile:") == 0);
    CHECK(prompt.find("and his historical POI check-ins:") != std::string::npos);
    CHECK(prompt.find("Please recommend the next possible POI that the user may expect?") !=
          std::string::npos);
    CHECK(prompt.find("no known profile") != std::string::npos);
}

TEST_CASE("sft record response span is the SID plus eos") {
    Fixture f = small_world();
    RecordBuilder rb{&f.vocab};
    SftSlots slots;
    slots.profile_text = "no known profile";
    slots.history_text = "at 7 AM June 10, the user rode to office <a_12><b_28><c_140>";
    slots.time_text = "9 PM Tuesday June 11";
    slots.location_cell = "<wm6j0>";
    slots.weather_text = "clear";
    Sid target = f.sids.sid_of("temple");
    CorpusRecord rec = rb.sft_record(sft_prompt_text(slots), target);
    CHECK(rec.response.size() == 4);  // 3 SID levels + <eos>
    CHECK(rec.tokens[static_cast<size_t>(rec.response.end) - 1] == kEosId);
    CHECK(rec.prompt.begin == 0);
    CHECK(rec.prompt.end == rec.response.begin);
    CHECK(rec.tokens[0] == kBosId);
    CHECK(rec.tokens[static_cast<size_t>(rec.prompt.end) - 1] == kSepId);

    Sid with_break = target;
    with_break.collision_break = 1;
    // collision tokens exist only when the map has them; register via build
    std::vector<std::string> samples = {slots.history_text};
    SidAssignment sids2 = f.sids;
    sids2.max_collision_break = 1;
    Vocab v2 = Vocab::build(f.catalog, sids2, samples, 5);
    RecordBuilder rb2{&v2};
    CorpusRecord rec2 = rb2.sft_record(sft_prompt_text(slots), with_break);
    CHECK(rec2.response.size() == 5);  // 3 SID levels + collision break + <eos>
}

TEST_CASE("masking ratio zero is the identity") {
    Fixture f = small_world();
    RecordBuilder rb{&f.vocab};
    CorpusRecord rec = rb.alignment_record("The largest surviving ancient ceremonial complex in the city.");
    MaskedRecord m = mask_for_pretraining(rec, f.vocab, 0.0, 42);
    CHECK(m.input == rec.tokens);
    CHECK(m.targets.empty());
}

TEST_CASE("records of only SID tokens are never masked") {
    Fixture f = small_world();
    RecordBuilder rb{&f.vocab};
    CorpusRecord rec = rb.alignment_record("<a_82><b_59><c_191>");
    MaskedRecord m = mask_for_pretraining(rec, f.vocab, 0.5, 42);
    CHECK(m.targets.empty());
    CHECK(m.input == rec.tokens);
}

TEST_CASE("masking 100 base tokens at ratio 0.15 masks exactly 15") {
    // Build a vocabulary whose samples give us 100 distinct base words.
    Catalog catalog;
    catalog.add(make_poi("p", 0, 0, {"cafe"}));
    SidAssignment sids;
    Sid s;
    s.codes = {0, 0, 0};
    sids.by_poi["p"] = s;
    sids.to_poi[render_sid(s)] = "p";
    std::string words;
    for (int i = 0; i < 100; ++i) words += "w" + std::to_string(i) + " ";
    Vocab vocab = Vocab::build(catalog, sids, {words}, 5);
    RecordBuilder rb{&vocab};
    CorpusRecord rec = rb.alignment_record(words);
    MaskedRecord m = mask_for_pretraining(rec, vocab, 0.15, 7);
    CHECK(m.targets.size() == 15);
    size_t masked = 0;
    for (size_t i = 0; i < m.input.size(); ++i) {
        if (m.input[i] == kMaskId) {
            masked++;
            CHECK(vocab.class_of(rec.tokens[i]) == TokenClass::base);
        }
    }
    CHECK(masked == 15);
    // determinism per (record, seed)
    MaskedRecord m2 = mask_for_pretraining(rec, vocab, 0.15, 7);
    CHECK(m2.input == m.input);
    MaskedRecord m3 = mask_for_pretraining(rec, vocab, 0.15, 8);
    CHECK(m3.input != m.input);
}

TEST_CASE("special and geohash tokens are never masked") {
    Fixture f = small_world();
    RecordBuilder rb{&f.vocab};
    CorpusRecord rec = rb.alignment_record(
        "The largest surviving ancient ceremonial complex in the city. Located in <wm6j0> of "
        "Beijing, and the ID is <a_82><b_59><c_191>.");
    MaskedRecord m = mask_for_pretraining(rec, f.vocab, 0.9, 3);
    for (size_t i = 0; i < m.input.size(); ++i) {
        TokenClass cls = f.vocab.class_of(rec.tokens[i]);
        if (cls != TokenClass::base) CHECK(m.input[i] == rec.tokens[i]);
    }
}

TEST_CASE("records serialize to jsonl and back") {
    Fixture f = small_world();
    RecordBuilder rb{&f.vocab};
    std::vector<CorpusRecord> records;
    records.push_back(rb.alignment_record("The city."));
    SftSlots slots;
    slots.profile_text = "no known profile";
    slots.history_text = "at 7 AM June 10, the user rode to office <a_12><b_28><c_140>";
    slots.time_text = "9 PM Tuesday June 11";
    slots.location_cell = "<wm6j0>";
    slots.weather_text = "clear";
    records.push_back(rb.sft_record(sft_prompt_text(slots), f.sids.sid_of("temple")));
    auto restored = records_from_jsonl(records_to_jsonl(records));
    REQUIRE(restored.size() == 2);
    CHECK(restored[0].kind == RecordKind::alignment);
    CHECK(restored[0].tokens == records[0].tokens);
    CHECK(restored[1].kind == RecordKind::sft);
    CHECK(restored[1].response.begin == records[1].response.begin);
    CHECK(restored[1].response.end == records[1].response.end);
}

TEST_CASE("vocab json round trip preserves ids and classes") {
    Fixture f = small_world();
    Vocab restored = Vocab::from_json(f.vocab.to_json());
    CHECK(restored.size() == f.vocab.size());
    CHECK(restored.fingerprint() == f.vocab.fingerprint());
    CHECK(restored.id_of("<a_82>") == f.vocab.id_of("<a_82>"));
    CHECK(restored.class_of(kPadId) == TokenClass::special);
}

TEST_CASE("vocabulary size limit errors with a count") {
    Catalog catalog;
    catalog.add(make_poi("p", 0, 0, {"cafe"}));
    SidAssignment sids;
    Sid s;
    s.codes = {0};
    sids.by_poi["p"] = s;
    sids.to_poi[render_sid(s)] = "p";
    std::string words;
    for (int i = 0; i < 300; ++i) words += "w" + std::to_string(i) + " ";
    CHECK_THROWS_AS(Vocab::build(catalog, sids, {words}, 5, 100), DataError);
}
