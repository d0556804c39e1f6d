// SPDX-License-Identifier: Apache-2.0
#include "roam/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "roam/util.hpp"

namespace roam {

using nlohmann::json;

const char* action_verb(Action a) {
    switch (a) {
        case Action::navigated: return "navigated to";
        case Action::searched: return "searched";
        case Action::walked: return "walked to";
        case Action::rode: return "rode to";
        case Action::other: return "went to";
    }
    return "went to";
}

std::string action_name(Action a) {
    switch (a) {
        case Action::navigated: return "navigated";
        case Action::searched: return "searched";
        case Action::walked: return "walked";
        case Action::rode: return "rode";
        case Action::other: return "other";
    }
    return "other";
}

std::optional<Action> action_from_name(const std::string& name) {
    if (name == "navigated") return Action::navigated;
    if (name == "searched") return Action::searched;
    if (name == "walked") return Action::walked;
    if (name == "rode") return Action::rode;
    if (name == "other") return Action::other;
    return std::nullopt;
}

std::string weather_name(Weather w) {
    switch (w) {
        case Weather::clear: return "clear";
        case Weather::rain: return "rain";
        case Weather::snow: return "snow";
        case Weather::extreme_heat: return "extreme_heat";
        case Weather::extreme_cold: return "extreme_cold";
        case Weather::unknown: return "unknown";
    }
    return "unknown";
}

std::optional<Weather> weather_from_name(const std::string& name) {
    if (name == "clear") return Weather::clear;
    if (name == "rain") return Weather::rain;
    if (name == "snow") return Weather::snow;
    if (name == "extreme_heat") return Weather::extreme_heat;
    if (name == "extreme_cold") return Weather::extreme_cold;
    if (name == "unknown") return Weather::unknown;
    return std::nullopt;
}

bool Poi::open_at(int weekday, int minute_of_day) const {
    if (open_hours.empty()) return true;
    for (const auto& w : open_hours) {
        bool day_match = std::find(w.days.begin(), w.days.end(), weekday) != w.days.end();
        if (!day_match) continue;
        if (minute_of_day >= w.open_minute && minute_of_day < w.close_minute) return true;
    }
    return false;
}

void Catalog::add(Poi poi) {
    if (poi.category_path.empty()) throw DataError("Poi " + poi.poi_id + ": empty category path");
    auto [it, inserted] = index_.emplace(poi.poi_id, pois_.size());
    if (!inserted) return;  // dedup by id, first wins
    pois_.push_back(std::move(poi));
}

const Poi& Catalog::get(const std::string& poi_id) const {
    auto it = index_.find(poi_id);
    if (it == index_.end()) throw DataError("unknown poi_id: " + poi_id);
    return pois_[it->second];
}

const Poi* Catalog::find(const std::string& poi_id) const {
    auto it = index_.find(poi_id);
    return it == index_.end() ? nullptr : &pois_[it->second];
}

void Catalog::sort_by_id() {
    std::sort(pois_.begin(), pois_.end(),
              [](const Poi& a, const Poi& b) { return a.poi_id < b.poi_id; });
    index_.clear();
    for (size_t i = 0; i < pois_.size(); ++i) index_[pois_[i].poi_id] = i;
}

std::string ParseReport::to_json() const {
    json j;
    j["rows"] = rows;
    j["kept"] = kept;
    j["skipped"] = skipped;
    j["reasons"] = json::object();
    for (const auto& [k, v] : reasons) j["reasons"][k] = v;
    return j.dump(2);
}

namespace {

// Indoor defaulting for datasets that do not carry the flag.
bool category_suggests_indoor(const std::vector<std::string>& path) {
    static const char* kIndoorKeywords[] = {
        "mall",   "museum", "cinema",     "office",  "gym",    "cafe",  "coffee",
        "restaurant", "bar", "library",   "hotel",   "shop",   "store", "theater",
        "university", "school", "home",   "residence", "residential", "apartment",
        "food",   "nightlife", "airport", "station", "subway", "train"};
    for (const auto& label : path) {
        std::string lower;
        lower.reserve(label.size());
        for (char c : label) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        for (const char* kw : kIndoorKeywords) {
            if (lower.find(kw) != std::string::npos) return true;
        }
    }
    return false;
}

int month_from_abbrev(const std::string& s) {
    static const char* kAbbrev[] = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                    "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
    for (int i = 0; i < 12; ++i) {
        if (s == kAbbrev[i]) return i + 1;
    }
    return 0;
}

bool valid_weekday_abbrev(const std::string& s) {
    static const char* kAbbrev[] = {"Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"};
    for (const char* a : kAbbrev) {
        if (s == a) return true;
    }
    return false;
}

// "Tue Apr 03 18:00:09 +0000 2012" -> UTC epoch seconds.
bool parse_foursquare_time(const std::string& s, int64_t& out, std::string& reason) {
    std::istringstream ss(s);
    std::string wk, mon, tz;
    int day = 0, year = 0;
    std::string hms;
    if (!(ss >> wk >> mon >> day >> hms >> tz >> year)) {
        reason = "bad_time";
        return false;
    }
    if (!valid_weekday_abbrev(wk)) {
        reason = "bad_weekday";
        return false;
    }
    int month = month_from_abbrev(mon);
    if (month == 0 || day < 1 || day > 31) {
        reason = "bad_time";
        return false;
    }
    int h = 0, m = 0, sec = 0;
    if (std::sscanf(hms.c_str(), "%d:%d:%d", &h, &m, &sec) != 3) {
        reason = "bad_time";
        return false;
    }
    int tz_min = 0;
    if (tz.size() == 5 && (tz[0] == '+' || tz[0] == '-')) {
        int hh = (tz[1] - '0') * 10 + (tz[2] - '0');
        int mm = (tz[3] - '0') * 10 + (tz[4] - '0');
        tz_min = hh * 60 + mm;
        if (tz[0] == '-') tz_min = -tz_min;
    }
    out = ts_from_civil(year, month, day, h, m, sec) - static_cast<int64_t>(tz_min) * 60;
    return true;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

void load_jsonl_catalog(const std::string& path, Catalog& catalog, ParseReport& report) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open catalog file: " + path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        report.rows++;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            report.skipped++;
            report.reasons["bad_json"]++;
            continue;
        }
        try {
            Poi p;
            p.poi_id = j.at("id").get<std::string>();
            p.name = j.value("name", p.poi_id);
            p.point = GeoPoint(j.at("lon").get<double>(), j.at("lat").get<double>());
            if (j.at("cat").is_array()) {
                for (const auto& c : j.at("cat")) p.category_path.push_back(c.get<std::string>());
            } else {
                p.category_path.push_back(j.at("cat").get<std::string>());
            }
            if (p.category_path.empty() || p.category_path.size() > 4) throw DataError("bad category path");
            p.description = j.value("desc", "");
            if (j.contains("indoor"))
                p.indoor = j.at("indoor").get<bool>();
            else
                p.indoor = category_suggests_indoor(p.category_path);
            if (j.contains("hours") && j.at("hours").is_array()) {
                for (const auto& h : j.at("hours")) {
                    OpenWindow w;
                    for (const auto& d : h.at(0)) w.days.push_back(d.get<int>());
                    w.open_minute = h.at(1).get<int>();
                    w.close_minute = h.at(2).get<int>();
                    p.open_hours.push_back(std::move(w));
                }
            }
            catalog.add(std::move(p));
            report.kept++;
        } catch (const std::exception&) {
            report.skipped++;
            report.reasons["bad_poi"]++;
        }
    }
}

}  // namespace

LoadResult load_checkins(const std::string& path, CheckinFormat format,
                         const std::string& catalog_path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open check-in file: " + path);

    LoadResult result;
    ParseReport& report = result.report;
    std::map<std::string, std::vector<CheckIn>> by_user;
    std::map<int, size_t> tz_votes;

    std::string line;
    if (format == CheckinFormat::foursquare_tsv) {
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            report.rows++;
            auto cols = split_tabs(line);
            if (cols.size() != 7) {
                report.skipped++;
                report.reasons["bad_columns"]++;
                continue;
            }
            double lat = 0, lon = 0;
            int tz_min = 0;
            try {
                lat = std::stod(cols[3]);
                lon = std::stod(cols[4]);
                tz_min = std::stoi(cols[5]);
            } catch (const std::exception&) {
                report.skipped++;
                report.reasons["bad_number"]++;
                continue;
            }
            int64_t ts = 0;
            std::string reason;
            if (!parse_foursquare_time(cols[6], ts, reason)) {
                report.skipped++;
                report.reasons[reason]++;
                continue;
            }
            if (lat < -90 || lat > 90 || lon < -180 || lon > 180 || ts < 0) {
                report.skipped++;
                report.reasons["bad_number"]++;
                continue;
            }
            if (!result.catalog.contains(cols[1])) {
                Poi p;
                p.poi_id = cols[1];
                p.name = cols[2];
                p.point = GeoPoint(lon, lat);
                p.category_path = {cols[2]};
                p.description = cols[2];
                p.indoor = category_suggests_indoor(p.category_path);
                result.catalog.add(std::move(p));
            }
            CheckIn c;
            c.user_id = cols[0];
            c.poi_id = cols[1];
            c.timestamp = ts;
            c.action = Action::other;
            by_user[c.user_id].push_back(std::move(c));
            tz_votes[tz_min]++;
            report.kept++;
        }
    } else {
        if (!catalog_path.empty()) load_jsonl_catalog(catalog_path, result.catalog, report);
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            report.rows++;
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object()) {
                report.skipped++;
                report.reasons["bad_json"]++;
                continue;
            }
            try {
                CheckIn c;
                c.user_id = j.at("user").get<std::string>();
                c.poi_id = j.at("poi").get<std::string>();
                c.timestamp = j.at("ts").get<int64_t>();
                if (c.timestamp < 0) throw DataError("negative ts");
                auto act = action_from_name(j.value("action", "other"));
                if (!act) {
                    report.skipped++;
                    report.reasons["unknown_action"]++;
                    continue;
                }
                c.action = *act;
                by_user[c.user_id].push_back(std::move(c));
                report.kept++;
            } catch (const std::exception&) {
                report.skipped++;
                report.reasons["bad_checkin"]++;
            }
        }
    }

    if (report.rows > 0 && report.skipped * 10 > report.rows) {
        throw DataError("more than 10% malformed rows; parse report: " + report.to_json());
    }

    for (auto& [user, checks] : by_user) {
        std::stable_sort(checks.begin(), checks.end(),
                         [](const CheckIn& a, const CheckIn& b) { return a.timestamp < b.timestamp; });
        Trajectory t;
        t.user_id = user;
        t.check_ins = std::move(checks);
        result.trajectories.push_back(std::move(t));
    }
    result.catalog.sort_by_id();
    if (!tz_votes.empty()) {
        auto best = std::max_element(tz_votes.begin(), tz_votes.end(),
                                     [](const auto& a, const auto& b) { return a.second < b.second; });
        result.tz_offset_minutes = best->first;
    }
    return result;
}

std::string catalog_to_jsonl(const Catalog& catalog) {
    std::ostringstream out;
    for (const auto& p : catalog.pois()) {
        json j;
        j["id"] = p.poi_id;
        j["name"] = p.name;
        j["lon"] = p.point.lon;
        j["lat"] = p.point.lat;
        j["cat"] = p.category_path;
        j["desc"] = p.description;
        j["indoor"] = p.indoor;
        json hours = json::array();
        for (const auto& w : p.open_hours) hours.push_back({w.days, w.open_minute, w.close_minute});
        j["hours"] = hours;
        out << j.dump() << "\n";
    }
    return out.str();
}

std::string checkins_to_jsonl(const std::vector<CheckIn>& checkins) {
    std::ostringstream out;
    for (const auto& c : checkins) {
        json j;
        j["user"] = c.user_id;
        j["poi"] = c.poi_id;
        j["ts"] = c.timestamp;
        j["action"] = action_name(c.action);
        out << j.dump() << "\n";
    }
    return out.str();
}

std::vector<CheckIn> checkins_from_jsonl(const std::string& text) {
    std::vector<CheckIn> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        CheckIn c;
        c.user_id = j.at("user").get<std::string>();
        c.poi_id = j.at("poi").get<std::string>();
        c.timestamp = j.at("ts").get<int64_t>();
        auto act = action_from_name(j.value("action", "other"));
        if (!act) throw DataError("checkins_from_jsonl: unknown action");
        c.action = *act;
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<Trajectory> group_by_user(const std::vector<CheckIn>& checkins) {
    std::map<std::string, std::vector<CheckIn>> by_user;
    for (const auto& c : checkins) by_user[c.user_id].push_back(c);
    std::vector<Trajectory> out;
    for (auto& [user, checks] : by_user) {
        Trajectory t;
        t.user_id = user;
        t.check_ins = std::move(checks);
        out.push_back(std::move(t));
    }
    return out;
}

const Trajectory* Dataset::trajectory_of(const std::string& user_id) const {
    for (const auto& t : trajectories) {
        if (t.user_id == user_id) return &t;
    }
    return nullptr;
}

Dataset preprocess(const Catalog& catalog, const std::vector<Trajectory>& trajectories,
                   int min_poi_inter, int min_user_checkins) {
    if (trajectories.empty()) throw DataError("preprocess: empty input");

    struct Row {
        CheckIn c;
        bool alive = true;
    };
    std::vector<Row> rows;
    for (const auto& t : trajectories) {
        for (const auto& c : t.check_ins) {
            if (!catalog.contains(c.poi_id)) continue;
            rows.push_back({c, true});
        }
    }

    SplitReport rep;
    std::set<std::string> removed_pois, removed_users;
    int rounds = 0;
    bool changed = true;
    while (changed) {
        changed = false;
        rounds++;
        std::map<std::string, int> poi_count, user_count;
        for (const auto& r : rows) {
            if (!r.alive) continue;
            poi_count[r.c.poi_id]++;
            user_count[r.c.user_id]++;
        }
        for (auto& r : rows) {
            if (!r.alive) continue;
            if (poi_count[r.c.poi_id] < min_poi_inter) {
                r.alive = false;
                removed_pois.insert(r.c.poi_id);
                changed = true;
            } else if (user_count[r.c.user_id] < min_user_checkins) {
                r.alive = false;
                removed_users.insert(r.c.user_id);
                changed = true;
            }
        }
    }
    rep.filter_rounds = rounds;
    rep.removed_pois = removed_pois.size();
    rep.removed_users = removed_users.size();

    std::vector<CheckIn> kept;
    for (const auto& r : rows) {
        if (r.alive) kept.push_back(r.c);
    }
    if (kept.empty()) throw DataError("preprocess: all check-ins filtered out");

    std::sort(kept.begin(), kept.end(), [](const CheckIn& a, const CheckIn& b) {
        if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
        if (a.user_id != b.user_id) return a.user_id < b.user_id;
        return a.poi_id < b.poi_id;
    });

    Dataset ds;
    rep.total = kept.size();
    size_t n = kept.size();
    size_t n_train = static_cast<size_t>(std::floor(0.8 * static_cast<double>(n)));
    size_t n_valid = static_cast<size_t>(std::floor(0.1 * static_cast<double>(n)));

    std::set<std::string> train_users, train_pois;
    for (size_t i = 0; i < n_train; ++i) {
        train_users.insert(kept[i].user_id);
        train_pois.insert(kept[i].poi_id);
    }
    for (size_t i = 0; i < n; ++i) {
        const CheckIn& c = kept[i];
        if (i < n_train) {
            ds.train.push_back(c);
        } else {
            if (!train_users.count(c.user_id) || !train_pois.count(c.poi_id)) {
                rep.dropped_for_consistency++;
                continue;
            }
            if (i < n_train + n_valid)
                ds.valid.push_back(c);
            else
                ds.test.push_back(c);
        }
    }
    rep.train = ds.train.size();
    rep.valid = ds.valid.size();
    rep.test = ds.test.size();

    std::set<std::string> kept_pois;
    std::map<std::string, std::vector<CheckIn>> by_user;
    auto absorb = [&](const std::vector<CheckIn>& v) {
        for (const auto& c : v) {
            kept_pois.insert(c.poi_id);
            by_user[c.user_id].push_back(c);
        }
    };
    absorb(ds.train);
    absorb(ds.valid);
    absorb(ds.test);

    for (const auto& id : kept_pois) ds.catalog.add(catalog.get(id));
    ds.catalog.sort_by_id();
    for (auto& [user, checks] : by_user) {
        std::sort(checks.begin(), checks.end(),
                  [](const CheckIn& a, const CheckIn& b) { return a.timestamp < b.timestamp; });
        Trajectory t;
        t.user_id = user;
        t.check_ins = std::move(checks);
        ds.trajectories.push_back(std::move(t));
    }
    ds.report = rep;
    return ds;
}

}  // namespace roam
