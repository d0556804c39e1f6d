// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>

#include "roam/catalog.hpp"
#include "roam/profile.hpp"

namespace roam {

struct CognitiveScores {
    std::optional<double> tcs;  // absent when no history falls in the bucket
    double scs = 0.0;
    int pas = 0;
    int sas = 0;
};

// Arithmetic mean over the defined components; tcs is skipped when absent.
double cas(const CognitiveScores& s);

struct JudgeConfig {
    enum class Kind { rule, external };
    Kind kind = Kind::rule;
    std::string endpoint;  // e.g. "http://127.0.0.1:8731"
    int timeout_ms = 200;
    int max_inflight = 4;
};

class Judge {
public:
    explicit Judge(JudgeConfig config = {});
    ~Judge();
    Judge(const Judge&) = delete;
    Judge& operator=(const Judge&) = delete;

    // Rule tables by default. The external judge POSTs /judge and falls back
    // to the rule tables on timeout, non-2xx or malformed replies.
    int profile_alignment(const UserProfile& profile, const Situation& ctx, const Poi& candidate,
                          int tz_offset_minutes) const;
    int situational_awareness(const Situation& ctx, const Poi& candidate,
                              int tz_offset_minutes) const;

    static int rule_profile_alignment(const UserProfile& profile, const Situation& ctx,
                                      const Poi& candidate, int tz_offset_minutes);
    static int rule_situational_awareness(const Situation& ctx, const Poi& candidate,
                                          int tz_offset_minutes);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct CognitionParams {
    double sim_category_weight = 0.6;
    double sim_distance_weight = 0.4;
    double sim_sigma_m = 500.0;
    int tz_offset_minutes = 0;
};

// Similarity in [0,1]: 1 for the same POI, otherwise a blend of shared
// category-path prefix depth and exponentially decayed distance.
double sim(const Poi& a, const Poi& b, const CognitionParams& params = {});

// Eq.-style temporal consistency over the (day-type, local hour) bucket.
std::optional<double> tcs(const Trajectory& history, const Catalog& catalog, const Situation& ctx,
                          const Poi& candidate, const CognitionParams& params = {});

double scs(const UserProfile& profile, const Situation& ctx, const Poi& candidate);

CognitiveScores score_candidate(const Trajectory& history, const Catalog& catalog,
                                const UserProfile& profile, const Situation& ctx,
                                const Poi& candidate, const Judge& judge,
                                const CognitionParams& params = {});

}  // namespace roam
