// SPDX-License-Identifier: Apache-2.0
#include "roam/profile.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"
#include "roam/util.hpp"

namespace roam {

using nlohmann::json;

namespace {

bool in_night_bucket(const CivilTime& c) { return c.hour >= 20 || c.hour < 8; }
bool in_work_bucket(const CivilTime& c) { return !is_weekend(c) && c.hour >= 9 && c.hour < 18; }

// Modal element and its share; ties resolve to the lexicographically smallest key.
std::optional<std::string> modal_with_share(const std::map<std::string, int>& counts, int total,
                                            double min_share) {
    if (total == 0) return std::nullopt;
    std::string best;
    int best_count = -1;
    for (const auto& [k, v] : counts) {
        if (v > best_count) {
            best = k;
            best_count = v;
        }
    }
    if (static_cast<double>(best_count) / total < min_share) return std::nullopt;
    return best;
}

}  // namespace

void infer_static(const Trajectory& t, const Catalog& catalog, int tz_offset_minutes,
                  std::optional<std::string>& home, std::optional<std::string>& work) {
    home.reset();
    work.reset();
    if (t.size() < 10) return;
    std::map<std::string, int> night_counts, day_counts;
    int night_total = 0, day_total = 0;
    for (const auto& c : t.check_ins) {
        if (!catalog.contains(c.poi_id)) continue;
        CivilTime ct = civil_from_ts(c.timestamp, tz_offset_minutes);
        if (in_night_bucket(ct)) {
            night_counts[c.poi_id]++;
            night_total++;
        }
        if (in_work_bucket(ct)) {
            day_counts[c.poi_id]++;
            day_total++;
        }
    }
    home = modal_with_share(night_counts, night_total, 0.30);
    work = modal_with_share(day_counts, day_total, 0.30);
}

std::map<std::string, double> infer_long_term(const Trajectory& t, const Catalog& catalog,
                                              double half_life_days) {
    std::map<std::string, double> weights;
    if (t.check_ins.empty()) return weights;
    int64_t latest = t.check_ins.back().timestamp;
    const double half_life_s = half_life_days * 86400.0;
    for (const auto& c : t.check_ins) {
        const Poi* p = catalog.find(c.poi_id);
        if (!p) continue;
        double age = static_cast<double>(latest - c.timestamp);
        double w = std::pow(0.5, age / half_life_s);
        weights[p->top_category()] += w;
    }
    double total = 0.0;
    for (const auto& [k, v] : weights) total += v;
    if (total > 0.0) {
        for (auto& [k, v] : weights) v /= total;
    }
    return weights;
}

std::vector<PeriodicDemand> infer_periodic(const Trajectory& t, const Catalog& catalog,
                                           int tz_offset_minutes, int min_support) {
    std::vector<PeriodicDemand> out;
    if (t.check_ins.empty()) return out;
    int64_t span_s = t.check_ins.back().timestamp - t.check_ins.front().timestamp;
    int total_weeks = static_cast<int>(span_s / (7 * 86400)) + 1;
    if (span_s < 3 * 7 * 86400) return out;

    struct Cell {
        int support = 0;
        std::set<int64_t> weeks;
    };
    std::map<std::tuple<std::string, int, int>, Cell> cells;
    int64_t origin = t.check_ins.front().timestamp;
    for (const auto& c : t.check_ins) {
        const Poi* p = catalog.find(c.poi_id);
        if (!p) continue;
        CivilTime ct = civil_from_ts(c.timestamp, tz_offset_minutes);
        auto key = std::make_tuple(p->top_category(), ct.weekday, ct.hour);
        Cell& cell = cells[key];
        cell.support++;
        cell.weeks.insert((c.timestamp - origin) / (7 * 86400));
    }
    for (const auto& [key, cell] : cells) {
        if (cell.support < min_support) continue;
        if (cell.weeks.size() < 3) continue;
        PeriodicDemand d;
        d.category = std::get<0>(key);
        d.weekdays = {std::get<1>(key)};
        d.hour_bucket = std::get<2>(key);
        d.support = cell.support;
        d.score = static_cast<double>(cell.weeks.size()) / total_weeks;
        out.push_back(std::move(d));
    }
    std::sort(out.begin(), out.end(), [](const PeriodicDemand& a, const PeriodicDemand& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.category != b.category) return a.category < b.category;
        if (a.weekdays != b.weekdays) return a.weekdays < b.weekdays;
        return a.hour_bucket < b.hour_bucket;
    });
    return out;
}

double mean_move_distance(const Trajectory& t, const Catalog& catalog) {
    if (t.size() < 2) return kDefaultMoveDistanceM;
    double total = 0.0;
    int hops = 0;
    for (size_t i = 1; i < t.check_ins.size(); ++i) {
        const std::string& prev = t.check_ins[i - 1].poi_id;
        const std::string& cur = t.check_ins[i].poi_id;
        if (prev == cur) continue;
        const Poi* a = catalog.find(prev);
        const Poi* b = catalog.find(cur);
        if (!a || !b) continue;
        total += haversine(a->point, b->point);
        hops++;
    }
    if (hops == 0) return kMinMoveDistanceM;
    return std::max(kMinMoveDistanceM, total / hops);
}

UserProfile build_profile(const Trajectory& t, const Catalog& catalog, int tz_offset_minutes,
                          double half_life_days, int min_support) {
    UserProfile p;
    infer_static(t, catalog, tz_offset_minutes, p.home, p.work);
    p.long_term = infer_long_term(t, catalog, half_life_days);
    p.periodic = infer_periodic(t, catalog, tz_offset_minutes, min_support);
    p.mean_move_distance_m = mean_move_distance(t, catalog);
    return p;
}

std::string render_profile_text(const UserProfile& p, const Catalog& catalog,
                                int geohash_precision) {
    if (p.empty()) return "no known profile";

    std::ostringstream out;
    bool first = true;
    auto sep = [&]() {
        if (!first) out << "; ";
        first = false;
    };

    auto cell_of = [&](const std::string& poi_id) -> std::string {
        const Poi* poi = catalog.find(poi_id);
        if (!poi) return "<?>";
        return geohash_encode(poi->point, geohash_precision).token();
    };
    if (p.home) {
        sep();
        out << "home near " << cell_of(*p.home);
    }
    if (p.work) {
        sep();
        out << "work near " << cell_of(*p.work);
    }

    if (!p.long_term.empty()) {
        std::vector<std::pair<std::string, double>> cats(p.long_term.begin(), p.long_term.end());
        std::sort(cats.begin(), cats.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        sep();
        out << "top categories:";
        size_t limit = std::min<size_t>(3, cats.size());
        for (size_t i = 0; i < limit; ++i) {
            out << (i ? ", " : " ") << cats[i].first << " "
                << static_cast<int>(std::lround(cats[i].second * 100.0)) << "%";
        }
    }

    if (!p.periodic.empty()) {
        sep();
        out << "regular visits:";
        size_t limit = std::min<size_t>(3, p.periodic.size());
        for (size_t i = 0; i < limit; ++i) {
            const auto& d = p.periodic[i];
            out << (i ? ", " : " ") << d.category << " on " << weekday_name(d.weekdays.front())
                << " around " << hour_12(d.hour_bucket) << " " << am_pm(d.hour_bucket);
        }
    }
    return out.str();
}

std::string profiles_to_json(const std::map<std::string, UserProfile>& profiles) {
    json root;
    root["v"] = 1;
    json users = json::object();
    for (const auto& [user, p] : profiles) {
        json j;
        if (p.home) j["home"] = *p.home;
        if (p.work) j["work"] = *p.work;
        j["long_term"] = p.long_term;
        j["mean_move_distance_m"] = p.mean_move_distance_m;
        j["periodic"] = json::array();
        for (const auto& d : p.periodic) {
            json dj;
            dj["category"] = d.category;
            dj["weekdays"] = d.weekdays;
            dj["hour"] = d.hour_bucket;
            dj["support"] = d.support;
            dj["score"] = d.score;
            j["periodic"].push_back(dj);
        }
        users[user] = j;
    }
    root["users"] = users;
    return root.dump();
}

std::map<std::string, UserProfile> profiles_from_json(const std::string& text) {
    json root = json::parse(text);
    if (root.value("v", 0) != 1) throw DataError("profiles: unsupported schema version");
    std::map<std::string, UserProfile> out;
    for (auto it = root.at("users").begin(); it != root.at("users").end(); ++it) {
        const json& j = it.value();
        UserProfile p;
        if (j.contains("home")) p.home = j.at("home").get<std::string>();
        if (j.contains("work")) p.work = j.at("work").get<std::string>();
        p.long_term = j.at("long_term").get<std::map<std::string, double>>();
        p.mean_move_distance_m = j.at("mean_move_distance_m").get<double>();
        for (const auto& dj : j.at("periodic")) {
            PeriodicDemand d;
            d.category = dj.at("category").get<std::string>();
            d.weekdays = dj.at("weekdays").get<std::vector<int>>();
            d.hour_bucket = dj.at("hour").get<int>();
            d.support = dj.at("support").get<int>();
            d.score = dj.at("score").get<double>();
            p.periodic.push_back(std::move(d));
        }
        out[it.key()] = std::move(p);
    }
    return out;
}

}  // namespace roam
