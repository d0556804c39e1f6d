// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "roam/catalog.hpp"

namespace roam {

struct PeriodicDemand {
    std::string category;       // top-level category label
    std::vector<int> weekdays;  // 0 = Monday .. 6 = Sunday
    int hour_bucket = 0;        // 0..23
    int support = 0;
    double score = 0.0;         // distinct weeks hit / weeks spanned
};

struct UserProfile {
    std::optional<std::string> home;
    std::optional<std::string> work;
    std::map<std::string, double> long_term;  // top-level category -> weight
    std::vector<PeriodicDemand> periodic;
    double mean_move_distance_m = 1000.0;

    bool empty() const {
        return !home && !work && long_term.empty() && periodic.empty();
    }
};

constexpr double kMinMoveDistanceM = 100.0;
constexpr double kDefaultMoveDistanceM = 1000.0;

// Modal-POI heuristics. Home looks at check-ins with local hour >= 20 or < 8;
// work at weekday check-ins with local hour in [9,18). A POI is emitted only
// when it covers at least 30% of its bucket.
void infer_static(const Trajectory& t, const Catalog& catalog, int tz_offset_minutes,
                  std::optional<std::string>& home, std::optional<std::string>& work);

std::map<std::string, double> infer_long_term(const Trajectory& t, const Catalog& catalog,
                                              double half_life_days = 30.0);

std::vector<PeriodicDemand> infer_periodic(const Trajectory& t, const Catalog& catalog,
                                           int tz_offset_minutes, int min_support = 3);

double mean_move_distance(const Trajectory& t, const Catalog& catalog);

UserProfile build_profile(const Trajectory& t, const Catalog& catalog, int tz_offset_minutes,
                          double half_life_days = 30.0, int min_support = 3);

// Deterministic natural-language summary, at most 120 words.
std::string render_profile_text(const UserProfile& p, const Catalog& catalog,
                                int geohash_precision = kGeohashDefaultPrecision);

std::string profiles_to_json(const std::map<std::string, UserProfile>& profiles);
std::map<std::string, UserProfile> profiles_from_json(const std::string& text);

}  // namespace roam
