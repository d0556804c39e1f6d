// SPDX-License-Identifier: Apache-2.0
#include "roam/cognition.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <iostream>
#include <mutex>

#include "httplib.h"
#include "json.hpp"
#include "roam/util.hpp"

namespace roam {

using nlohmann::json;

double cas(const CognitiveScores& s) {
    double total = s.scs + s.pas + s.sas;
    int n = 3;
    if (s.tcs) {
        total += *s.tcs;
        n = 4;
    }
    return total / n;
}

double sim(const Poi& a, const Poi& b, const CognitionParams& params) {
    if (a.poi_id == b.poi_id) return 1.0;
    size_t max_depth = std::max(a.category_path.size(), b.category_path.size());
    size_t shared = 0;
    while (shared < a.category_path.size() && shared < b.category_path.size() &&
           a.category_path[shared] == b.category_path[shared]) {
        shared++;
    }
    double cat = max_depth == 0 ? 0.0 : static_cast<double>(shared) / static_cast<double>(max_depth);
    double dist = std::exp(-haversine(a.point, b.point) / params.sim_sigma_m);
    return std::min(1.0, params.sim_category_weight * cat + params.sim_distance_weight * dist);
}

namespace {

struct Bucket {
    bool weekend = false;
    int hour = 0;
    bool operator==(const Bucket& o) const { return weekend == o.weekend && hour == o.hour; }
};

Bucket bucket_of(int64_t ts, int tz_offset_minutes) {
    CivilTime c = civil_from_ts(ts, tz_offset_minutes);
    return Bucket{is_weekend(c), c.hour};
}

}  // namespace

std::optional<double> tcs(const Trajectory& history, const Catalog& catalog, const Situation& ctx,
                          const Poi& candidate, const CognitionParams& params) {
    Bucket target = bucket_of(ctx.time, params.tz_offset_minutes);
    double total = 0.0;
    int count = 0;
    for (const auto& c : history.check_ins) {
        if (!(bucket_of(c.timestamp, params.tz_offset_minutes) == target)) continue;
        const Poi* p = catalog.find(c.poi_id);
        if (!p) continue;
        total += sim(*p, candidate, params);
        count++;
    }
    if (count == 0) return std::nullopt;
    return total / count;
}

double scs(const UserProfile& profile, const Situation& ctx, const Poi& candidate) {
    double d_u = std::max(kMinMoveDistanceM, profile.mean_move_distance_m);
    return std::exp(-haversine(ctx.location, candidate.point) / d_u);
}

int Judge::rule_profile_alignment(const UserProfile& profile, const Situation& ctx,
                                  const Poi& candidate, int tz_offset_minutes) {
    if (profile.home && *profile.home == candidate.poi_id) return 1;
    if (profile.work && *profile.work == candidate.poi_id) return 1;

    std::vector<std::pair<std::string, double>> cats(profile.long_term.begin(),
                                                     profile.long_term.end());
    std::sort(cats.begin(), cats.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    size_t limit = std::min<size_t>(3, cats.size());
    for (size_t i = 0; i < limit; ++i) {
        if (cats[i].first == candidate.top_category()) return 1;
    }

    CivilTime c = civil_from_ts(ctx.time, tz_offset_minutes);
    for (const auto& d : profile.periodic) {
        if (d.category != candidate.top_category()) continue;
        bool day_match = std::find(d.weekdays.begin(), d.weekdays.end(), c.weekday) != d.weekdays.end();
        if (!day_match) continue;
        if (std::abs(c.hour - d.hour_bucket) <= 1) return 1;
    }
    return 0;
}

int Judge::rule_situational_awareness(const Situation& ctx, const Poi& candidate,
                                      int tz_offset_minutes) {
    bool outdoor = !candidate.indoor;
    if ((ctx.weather == Weather::rain || ctx.weather == Weather::snow) && outdoor) return 0;
    if (ctx.weather == Weather::extreme_heat && outdoor) return 0;
    CivilTime c = civil_from_ts(ctx.time, tz_offset_minutes);
    if (!candidate.open_at(c.weekday, c.hour * 60 + c.minute)) return 0;
    return 1;
}

struct Judge::Impl {
    JudgeConfig config;
    mutable std::mutex mu;
    mutable std::condition_variable cv;
    mutable int inflight = 0;

    // Bounded concurrency for external calls; the rule path never waits here.
    int call_external(const json& request) const {
        {
            std::unique_lock<std::mutex> lock(mu);
            cv.wait(lock, [&] { return inflight < config.max_inflight; });
            inflight++;
        }
        int score = -1;
        try {
            httplib::Client client(config.endpoint);
            client.set_connection_timeout(0, config.timeout_ms * 1000);
            client.set_read_timeout(0, config.timeout_ms * 1000);
            auto res = client.Post("/judge", request.dump(), "application/json");
            if (res && res->status >= 200 && res->status < 300) {
                json reply = json::parse(res->body, nullptr, false);
                if (!reply.is_discarded() && reply.contains("score") &&
                    reply["score"].is_number_integer()) {
                    int s = reply["score"].get<int>();
                    if (s == 0 || s == 1) score = s;
                }
            }
        } catch (const std::exception&) {
            score = -1;
        }
        {
            std::lock_guard<std::mutex> lock(mu);
            inflight--;
        }
        cv.notify_one();
        if (score < 0) {
            std::cerr << "[roam] external judge unavailable or malformed reply; "
                         "falling back to rule judge\n";
        }
        return score;
    }
};

Judge::Judge(JudgeConfig config) : impl_(std::make_unique<Impl>()) {
    if (config.kind == JudgeConfig::Kind::external && config.endpoint.empty())
        throw ConfigError("external judge requires an endpoint");
    impl_->config = std::move(config);
}

Judge::~Judge() = default;

namespace {

json situation_to_json(const Situation& ctx) {
    json j;
    j["time"] = ctx.time;
    j["lon"] = ctx.location.lon;
    j["lat"] = ctx.location.lat;
    j["weather"] = weather_name(ctx.weather);
    return j;
}

json candidate_to_json(const Poi& p) {
    json j;
    j["id"] = p.poi_id;
    j["name"] = p.name;
    j["cat"] = p.category_path;
    j["indoor"] = p.indoor;
    j["lon"] = p.point.lon;
    j["lat"] = p.point.lat;
    return j;
}

}  // namespace

int Judge::profile_alignment(const UserProfile& profile, const Situation& ctx, const Poi& candidate,
                             int tz_offset_minutes) const {
    if (impl_->config.kind == JudgeConfig::Kind::external) {
        json req;
        req["kind"] = "profile";
        req["profile"] = json::object();
        if (profile.home) req["profile"]["home"] = *profile.home;
        if (profile.work) req["profile"]["work"] = *profile.work;
        req["profile"]["long_term"] = profile.long_term;
        req["situation"] = situation_to_json(ctx);
        req["candidate"] = candidate_to_json(candidate);
        int s = impl_->call_external(req);
        if (s >= 0) return s;
    }
    return rule_profile_alignment(profile, ctx, candidate, tz_offset_minutes);
}

int Judge::situational_awareness(const Situation& ctx, const Poi& candidate,
                                 int tz_offset_minutes) const {
    if (impl_->config.kind == JudgeConfig::Kind::external) {
        json req;
        req["kind"] = "situation";
        req["situation"] = situation_to_json(ctx);
        req["candidate"] = candidate_to_json(candidate);
        int s = impl_->call_external(req);
        if (s >= 0) return s;
    }
    return rule_situational_awareness(ctx, candidate, tz_offset_minutes);
}

CognitiveScores score_candidate(const Trajectory& history, const Catalog& catalog,
                                const UserProfile& profile, const Situation& ctx,
                                const Poi& candidate, const Judge& judge,
                                const CognitionParams& params) {
    CognitiveScores s;
    s.tcs = tcs(history, catalog, ctx, candidate, params);
    s.scs = scs(profile, ctx, candidate);
    s.pas = judge.profile_alignment(profile, ctx, candidate, params.tz_offset_minutes);
    s.sas = judge.situational_awareness(ctx, candidate, params.tz_offset_minutes);
    return s;
}

}  // namespace roam
