// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "roam/catalog.hpp"
#include "roam/cognition.hpp"
#include "roam/profile.hpp"

namespace roam {

struct SynthConfig {
    int n_users = 20;
    int n_pois = 200;
    int weeks = 8;
    double noise_rate = 0.1;
    uint64_t weather_seed = 7;
    uint64_t seed = 42;
    std::string region = "Synthville";
    double rain_prob = 0.10;

    void validate() const;
};

struct WeatherTimeline {
    int64_t start_ts = 0;
    std::vector<Weather> daily;

    Weather at(int64_t ts) const;
    std::string to_json() const;
    static WeatherTimeline from_json(const std::string& text);
};

// Per check-in provenance for generator audits.
struct SynthSlotAudit {
    std::string user_id;
    int64_t ts = 0;
    std::string planted_poi;
    std::string final_poi;
    bool substituted = false;  // rain pushed an outdoor slot to its indoor twin
    bool noise = false;
};

struct SynthWorld {
    Catalog catalog;
    std::vector<Trajectory> trajectories;
    WeatherTimeline weather;
    std::vector<SynthSlotAudit> audit;
};

// Planted-pattern world: per-user commutes (weekday 08:00 to work, 18:00 to
// home), 1-3 weekly periodic demands, fixed weekend leisure slots, rain
// substitution of outdoor slots, plus `noise_rate` uniform random check-ins.
SynthWorld synth_world(const SynthConfig& config);

struct EvalContext {
    std::string user_id;
    Trajectory history;  // check-ins strictly before the target, capped
    Situation situation;
    std::string truth_poi;
};

// One context per test check-in with a non-empty prior history. The situation
// location is the previous check-in's POI. `split` defaults to ds.test.
std::vector<EvalContext> build_eval_contexts(const Dataset& ds, const WeatherTimeline* weather,
                                             int max_history,
                                             const std::vector<CheckIn>* split = nullptr);

using Predictor = std::function<std::string(const EvalContext&)>;  // "" = unresolvable

struct SampleRecord {
    std::string user_id;
    std::string truth_poi;
    std::string pred_poi;
    bool correct = false;
    std::optional<double> tcs;
    double scs = 0.0;
    int pas = 0;
    int sas = 0;
    double cas = 0.0;
    bool resolvable = true;
};

struct EvalReport {
    double acc_at_1 = 0.0;
    std::optional<double> a_tcs;
    double a_scs = 0.0;
    double a_pas = 0.0;
    double a_sas = 0.0;
    double a_cas = 0.0;
    size_t n = 0;
    size_t n_tcs_defined = 0;
    size_t n_unresolvable = 0;
    std::vector<SampleRecord> samples;

    std::string to_json(bool include_samples = false) const;
    std::string samples_csv() const;
};

EvalReport evaluate(const std::vector<EvalContext>& contexts, const Catalog& catalog,
                    const std::map<std::string, UserProfile>& profiles, const Judge& judge,
                    const CognitionParams& params, const Predictor& predictor);

// Absolute and relative metric deltas; relative delta is "n/a" on a zero base.
std::string compare_reports(const EvalReport& candidate, const EvalReport& baseline);

}  // namespace roam
