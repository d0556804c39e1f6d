// SPDX-License-Identifier: Apache-2.0
#include "roam/bench.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "roam/util.hpp"

namespace roam {

using nlohmann::json;

void SynthConfig::validate() const {
    if (n_users < 1) throw ConfigError("synth: n_users must be >= 1");
    if (weeks < 4) throw ConfigError("synth: weeks must be >= 4");
    if (noise_rate < 0.0 || noise_rate >= 0.5) throw ConfigError("synth: noise_rate out of [0,0.5)");
    // homes and offices are unique per user; the rest of the pool follows
    if (n_pois < 2 * n_users + 20)
        throw ConfigError("synth: n_pois too small to allocate homes, works and venues");
}

Weather WeatherTimeline::at(int64_t ts) const {
    if (daily.empty()) return Weather::unknown;
    int64_t day = (ts - start_ts) / 86400;
    if (day < 0 || day >= static_cast<int64_t>(daily.size())) return Weather::unknown;
    return daily[static_cast<size_t>(day)];
}

std::string WeatherTimeline::to_json() const {
    json j;
    j["start_ts"] = start_ts;
    json arr = json::array();
    for (auto w : daily) arr.push_back(weather_name(w));
    j["daily"] = arr;
    return j.dump();
}

WeatherTimeline WeatherTimeline::from_json(const std::string& text) {
    json j = json::parse(text);
    WeatherTimeline t;
    t.start_ts = j.at("start_ts").get<int64_t>();
    for (const auto& w : j.at("daily")) {
        auto parsed = weather_from_name(w.get<std::string>());
        if (!parsed) throw DataError("weather timeline: unknown weather " + w.get<std::string>());
        t.daily.push_back(*parsed);
    }
    return t;
}

namespace {

struct CategorySpec {
    const char* name;
    bool indoor;
    int open_min;   // minutes
    int close_min;  // minutes; 0/1440 = always open
    const char* blurb;
};

const CategorySpec kCategories[] = {
    {"residence", true, 0, 1440, "a quiet residential building with a small courtyard"},
    {"office", true, 6 * 60, 23 * 60, "a busy office tower with open workspaces and meeting rooms"},
    {"gym", true, 6 * 60, 23 * 60, "an indoor fitness center with weights and treadmills"},
    {"court", false, 6 * 60, 23 * 60, "an outdoor sports court with floodlights and bleachers"},
    {"restaurant", true, 10 * 60, 23 * 60, "a family restaurant serving seasonal dishes and soups"},
    {"cafe", true, 7 * 60, 20 * 60, "a cozy cafe with fresh pastries and quiet corner seating"},
    {"park", false, 0, 1440, "an open city park with walking trails and shaded lawns"},
    {"museum", true, 9 * 60, 18 * 60, "a local museum hosting rotating exhibits and workshops"},
    {"mall", true, 9 * 60, 22 * 60, "a shopping mall with boutiques, a food hall and a cinema"},
};
constexpr int kNumCategories = 9;

int category_index(const std::string& name) {
    for (int i = 0; i < kNumCategories; ++i) {
        if (name == kCategories[i].name) return i;
    }
    return -1;
}

const char* kFlavors[] = {"riverside", "uptown", "old town", "harbor", "garden",
                          "market", "sunset", "hilltop", "central", "corner"};

}  // namespace

SynthWorld synth_world(const SynthConfig& config) {
    config.validate();
    SynthWorld world;
    Rng rng(config.seed);
    Rng weather_rng(config.weather_seed);

    // Weather first: one draw per day.
    const int n_days = config.weeks * 7;
    world.weather.start_ts = ts_from_civil(2024, 3, 4);  // a Monday
    for (int d = 0; d < n_days; ++d) {
        world.weather.daily.push_back(weather_rng.uniform() < config.rain_prob ? Weather::rain
                                                                               : Weather::clear);
    }

    // Catalog. Homes and offices first (one per user), then the venue pool
    // cycles through the remaining categories.
    const double lon0 = -73.98, lat0 = 40.75;
    std::vector<std::vector<int>> by_category(kNumCategories);
    int poi_counter = 0;
    auto make_poi = [&](int cat_idx) {
        const CategorySpec& spec = kCategories[static_cast<size_t>(cat_idx)];
        Poi p;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "p%04d", poi_counter);
        p.poi_id = buf;
        const char* flavor = kFlavors[rng.below(10)];
        p.name = std::string(flavor) + " " + spec.name + " " + std::to_string(poi_counter);
        p.point = GeoPoint(lon0 + (rng.uniform() - 0.5) * 0.12, lat0 + (rng.uniform() - 0.5) * 0.12);
        p.category_path = {spec.name};
        p.description = p.name + ", " + spec.blurb + ".";
        p.indoor = spec.indoor;
        if (!(spec.open_min == 0 && spec.close_min == 1440)) {
            OpenWindow w;
            w.days = {0, 1, 2, 3, 4, 5, 6};
            w.open_minute = spec.open_min;
            w.close_minute = spec.close_min;
            p.open_hours.push_back(w);
        }
        by_category[static_cast<size_t>(cat_idx)].push_back(poi_counter);
        poi_counter++;
        world.catalog.add(std::move(p));
    };

    for (int u = 0; u < config.n_users; ++u) make_poi(0);  // residences
    for (int u = 0; u < config.n_users; ++u) make_poi(1);  // offices
    int remaining = config.n_pois - 2 * config.n_users;
    for (int i = 0; i < remaining; ++i) make_poi(2 + i % (kNumCategories - 2));

    // Outdoor venues substitute to a fixed indoor twin on rainy days.
    std::map<std::string, std::string> indoor_twin;
    auto id_of = [&](int idx) { return world.catalog.pois()[static_cast<size_t>(idx)].poi_id; };
    const auto& courts = by_category[static_cast<size_t>(category_index("court"))];
    const auto& gyms = by_category[static_cast<size_t>(category_index("gym"))];
    const auto& parks = by_category[static_cast<size_t>(category_index("park"))];
    const auto& museums = by_category[static_cast<size_t>(category_index("museum"))];
    const auto& malls = by_category[static_cast<size_t>(category_index("mall"))];
    for (size_t i = 0; i < courts.size(); ++i) {
        if (!gyms.empty()) indoor_twin[id_of(courts[i])] = id_of(gyms[i % gyms.size()]);
    }
    for (size_t i = 0; i < parks.size(); ++i) {
        if (i % 2 == 0 && !museums.empty())
            indoor_twin[id_of(parks[i])] = id_of(museums[i % museums.size()]);
        else if (!malls.empty())
            indoor_twin[id_of(parks[i])] = id_of(malls[i % malls.size()]);
    }

    struct Slot {
        int day_of_week;  // 0 = Monday
        int hour;
        int minute;
        std::string poi;
        Action action;
    };

    // The catalog is still in insertion order here (sorted later).
    auto pick = [&](const std::vector<int>& pool) { return id_of(pool[rng.below(pool.size())]); };

    for (int u = 0; u < config.n_users; ++u) {
        std::string user_id = "u" + std::to_string(100 + u);
        std::string home = id_of(u);
        std::string work = id_of(config.n_users + u);

        std::vector<Slot> weekly;
        for (int d = 0; d < 5; ++d) {
            weekly.push_back({d, 8, 0, work, Action::navigated});
            weekly.push_back({d, 18, 0, home, Action::navigated});
        }
        weekly.push_back({0, 10, 0, work, Action::searched});
        weekly.push_back({3, 10, 0, work, Action::searched});

        int n_demands = 1 + u % 3;
        std::vector<int> fitness_pool = courts;
        fitness_pool.insert(fitness_pool.end(), gyms.begin(), gyms.end());
        std::string fitness = pick(fitness_pool);
        weekly.push_back({1 + static_cast<int>(rng.below(3)), 19, 0, fitness, Action::walked});
        if (n_demands >= 2) {
            std::string dinner = pick(by_category[static_cast<size_t>(category_index("restaurant"))]);
            weekly.push_back({4, 20, 0, dinner, Action::rode});
        }
        if (n_demands >= 3) {
            std::string coffee = pick(by_category[static_cast<size_t>(category_index("cafe"))]);
            weekly.push_back({2, 15, 0, coffee, Action::walked});
        }

        // Weekend leisure: fixed favorite per slot, plus evening returns home.
        std::vector<int> leisure_pool = parks;
        leisure_pool.insert(leisure_pool.end(), malls.begin(), malls.end());
        leisure_pool.insert(leisure_pool.end(), museums.begin(), museums.end());
        std::string leisure_a = pick(leisure_pool);
        std::string leisure_b = pick(leisure_pool);
        int hour_a = 10 + static_cast<int>(rng.below(2));
        int hour_b = 14 + static_cast<int>(rng.below(3));
        weekly.push_back({5, hour_a, 0, leisure_a, Action::walked});
        weekly.push_back({5, 22, 0, home, Action::navigated});
        weekly.push_back({6, hour_b, 0, leisure_b, Action::rode});
        weekly.push_back({6, 21, 0, home, Action::navigated});

        std::sort(weekly.begin(), weekly.end(), [](const Slot& a, const Slot& b) {
            if (a.day_of_week != b.day_of_week) return a.day_of_week < b.day_of_week;
            if (a.hour != b.hour) return a.hour < b.hour;
            return a.minute < b.minute;
        });

        Trajectory traj;
        traj.user_id = user_id;
        for (int week = 0; week < config.weeks; ++week) {
            for (const auto& slot : weekly) {
                int day_index = week * 7 + slot.day_of_week;
                int64_t ts = world.weather.start_ts + static_cast<int64_t>(day_index) * 86400 +
                             slot.hour * 3600 + slot.minute * 60;
                SynthSlotAudit audit;
                audit.user_id = user_id;
                audit.ts = ts;
                audit.planted_poi = slot.poi;

                std::string poi = slot.poi;
                Action action = slot.action;
                if (world.weather.daily[static_cast<size_t>(day_index)] == Weather::rain &&
                    !world.catalog.get(poi).indoor) {
                    auto it = indoor_twin.find(poi);
                    if (it != indoor_twin.end()) {
                        poi = it->second;
                        audit.substituted = true;
                    }
                }
                if (config.noise_rate > 0.0 && rng.chance(config.noise_rate)) {
                    poi = id_of(static_cast<int>(rng.below(static_cast<size_t>(config.n_pois))));
                    action = Action::searched;
                    audit.noise = true;
                    audit.substituted = false;
                }
                audit.final_poi = poi;
                world.audit.push_back(audit);

                CheckIn c;
                c.user_id = user_id;
                c.poi_id = poi;
                c.timestamp = ts;
                c.action = action;
                traj.check_ins.push_back(c);
            }
        }
        world.trajectories.push_back(std::move(traj));
    }
    world.catalog.sort_by_id();
    return world;
}

std::vector<EvalContext> build_eval_contexts(const Dataset& ds, const WeatherTimeline* weather,
                                             int max_history, const std::vector<CheckIn>* split) {
    std::vector<EvalContext> contexts;
    for (const auto& test_checkin : split ? *split : ds.test) {
        const Trajectory* full = ds.trajectory_of(test_checkin.user_id);
        if (!full) continue;
        Trajectory history;
        history.user_id = test_checkin.user_id;
        for (const auto& c : full->check_ins) {
            if (c.timestamp < test_checkin.timestamp) history.check_ins.push_back(c);
        }
        if (history.check_ins.empty()) continue;
        if (max_history > 0 && history.check_ins.size() > static_cast<size_t>(max_history)) {
            history.check_ins.erase(history.check_ins.begin(),
                                    history.check_ins.end() - max_history);
        }
        EvalContext ctx;
        ctx.user_id = test_checkin.user_id;
        ctx.situation.time = test_checkin.timestamp;
        ctx.situation.location = ds.catalog.get(history.check_ins.back().poi_id).point;
        ctx.situation.weather = weather ? weather->at(test_checkin.timestamp) : Weather::unknown;
        ctx.history = std::move(history);
        ctx.truth_poi = test_checkin.poi_id;
        contexts.push_back(std::move(ctx));
    }
    return contexts;
}

EvalReport evaluate(const std::vector<EvalContext>& contexts, const Catalog& catalog,
                    const std::map<std::string, UserProfile>& profiles, const Judge& judge,
                    const CognitionParams& params, const Predictor& predictor) {
    EvalReport report;
    size_t correct = 0;
    double sum_tcs = 0, sum_scs = 0, sum_pas = 0, sum_sas = 0, sum_cas = 0;
    size_t n_scored = 0;

    for (const auto& ctx : contexts) {
        SampleRecord rec;
        rec.user_id = ctx.user_id;
        rec.truth_poi = ctx.truth_poi;
        rec.pred_poi = predictor(ctx);
        const Poi* pred = rec.pred_poi.empty() ? nullptr : catalog.find(rec.pred_poi);
        rec.resolvable = pred != nullptr;
        rec.correct = rec.resolvable && rec.pred_poi == ctx.truth_poi;
        if (rec.correct) correct++;
        if (!rec.resolvable) {
            report.n_unresolvable++;
            report.samples.push_back(rec);
            continue;
        }
        UserProfile profile;
        auto it = profiles.find(ctx.user_id);
        if (it != profiles.end()) profile = it->second;
        CognitiveScores scores =
            score_candidate(ctx.history, catalog, profile, ctx.situation, *pred, judge, params);
        rec.tcs = scores.tcs;
        rec.scs = scores.scs;
        rec.pas = scores.pas;
        rec.sas = scores.sas;
        rec.cas = cas(scores);
        if (rec.tcs) {
            sum_tcs += *rec.tcs;
            report.n_tcs_defined++;
        }
        sum_scs += rec.scs;
        sum_pas += rec.pas;
        sum_sas += rec.sas;
        sum_cas += rec.cas;
        n_scored++;
        report.samples.push_back(rec);
    }

    report.n = contexts.size();
    if (report.n > 0) report.acc_at_1 = static_cast<double>(correct) / static_cast<double>(report.n);
    if (report.n_tcs_defined > 0) report.a_tcs = sum_tcs / static_cast<double>(report.n_tcs_defined);
    if (n_scored > 0) {
        report.a_scs = sum_scs / static_cast<double>(n_scored);
        report.a_pas = sum_pas / static_cast<double>(n_scored);
        report.a_sas = sum_sas / static_cast<double>(n_scored);
        report.a_cas = sum_cas / static_cast<double>(n_scored);
    }
    return report;
}

std::string EvalReport::to_json(bool include_samples) const {
    json j;
    j["acc_at_1"] = acc_at_1;
    if (a_tcs)
        j["a_tcs"] = *a_tcs;
    else
        j["a_tcs"] = nullptr;
    j["a_scs"] = a_scs;
    j["a_pas"] = a_pas;
    j["a_sas"] = a_sas;
    j["a_cas"] = a_cas;
    j["n"] = n;
    j["n_tcs_defined"] = n_tcs_defined;
    j["n_unresolvable"] = n_unresolvable;
    if (include_samples) {
        json arr = json::array();
        for (const auto& s : samples) {
            json sj;
            sj["user"] = s.user_id;
            sj["truth_poi"] = s.truth_poi;
            sj["pred_poi"] = s.pred_poi;
            sj["correct"] = s.correct;
            if (s.tcs) sj["tcs"] = *s.tcs;
            sj["scs"] = s.scs;
            sj["pas"] = s.pas;
            sj["sas"] = s.sas;
            sj["cas"] = s.cas;
            arr.push_back(sj);
        }
        j["samples"] = arr;
    }
    return j.dump(2);
}

std::string EvalReport::samples_csv() const {
    std::ostringstream out;
    out << "user,truth_poi,pred_poi,correct,tcs,scs,pas,sas,cas\n";
    for (const auto& s : samples) {
        out << s.user_id << "," << s.truth_poi << "," << s.pred_poi << "," << (s.correct ? 1 : 0)
            << ",";
        if (s.tcs)
            out << *s.tcs;
        else
            out << "";
        out << "," << s.scs << "," << s.pas << "," << s.sas << "," << s.cas << "\n";
    }
    return out.str();
}

std::string compare_reports(const EvalReport& candidate, const EvalReport& baseline) {
    if (candidate.n != baseline.n)
        throw DataError("compare: sample counts differ (" + std::to_string(candidate.n) + " vs " +
                        std::to_string(baseline.n) + ")");
    json j;
    std::ostringstream table;
    table << "metric        candidate   baseline    abs_delta   rel_delta\n";
    auto row = [&](const std::string& name, std::optional<double> cand, std::optional<double> base) {
        json entry;
        if (!cand || !base) {
            entry["abs_delta"] = nullptr;
            entry["rel_delta"] = "n/a";
            j[name] = entry;
            return;
        }
        double abs_delta = *cand - *base;
        entry["candidate"] = *cand;
        entry["baseline"] = *base;
        entry["abs_delta"] = abs_delta;
        char buf[160];
        if (*base == 0.0) {
            entry["rel_delta"] = "n/a";
            std::snprintf(buf, sizeof(buf), "%-13s %-11.4f %-11.4f %+-11.4f %s\n", name.c_str(),
                          *cand, *base, abs_delta, "n/a");
        } else {
            double rel = abs_delta / *base;
            entry["rel_delta"] = rel;
            std::snprintf(buf, sizeof(buf), "%-13s %-11.4f %-11.4f %+-11.4f %+.2f%%\n", name.c_str(),
                          *cand, *base, abs_delta, rel * 100.0);
        }
        table << buf;
        j[name] = entry;
    };
    row("acc_at_1", candidate.acc_at_1, baseline.acc_at_1);
    row("a_tcs", candidate.a_tcs, baseline.a_tcs);
    row("a_scs", candidate.a_scs, baseline.a_scs);
    row("a_pas", candidate.a_pas, baseline.a_pas);
    row("a_sas", candidate.a_sas, baseline.a_sas);
    row("a_cas", candidate.a_cas, baseline.a_cas);
    json out;
    out["deltas"] = j;
    out["table"] = table.str();
    return out.dump(2);
}

}  // namespace roam
