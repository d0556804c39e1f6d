// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "roam/geo.hpp"

namespace roam {

enum class Action { navigated, searched, walked, rode, other };

const char* action_verb(Action a);  // rendering used by the corpus templates
std::string action_name(Action a);
std::optional<Action> action_from_name(const std::string& name);

enum class Weather { clear, rain, snow, extreme_heat, extreme_cold, unknown };

std::string weather_name(Weather w);
std::optional<Weather> weather_from_name(const std::string& name);

// Weekly opening window: minutes from midnight, on each weekday in `days`
// (0 = Monday .. 6 = Sunday). An empty hours list means always open.
struct OpenWindow {
    std::vector<int> days;
    int open_minute = 0;
    int close_minute = 24 * 60;
};

struct Poi {
    std::string poi_id;
    std::string name;
    GeoPoint point;
    std::vector<std::string> category_path;  // depth <= 4, non-empty
    std::string description;
    bool indoor = true;
    std::vector<OpenWindow> open_hours;  // empty = always open

    const std::string& top_category() const { return category_path.front(); }
    bool open_at(int weekday, int minute_of_day) const;
};

struct CheckIn {
    std::string user_id;
    std::string poi_id;
    int64_t timestamp = 0;  // seconds since epoch, UTC
    Action action = Action::other;
};

struct Trajectory {
    std::string user_id;
    std::vector<CheckIn> check_ins;  // ascending timestamps

    size_t size() const { return check_ins.size(); }
};

struct Situation {
    int64_t time = 0;
    GeoPoint location;
    Weather weather = Weather::unknown;
};

class Catalog {
public:
    void add(Poi poi);
    bool contains(const std::string& poi_id) const { return index_.count(poi_id) > 0; }
    const Poi& get(const std::string& poi_id) const;
    const Poi* find(const std::string& poi_id) const;
    const std::vector<Poi>& pois() const { return pois_; }
    size_t size() const { return pois_.size(); }
    void sort_by_id();

private:
    std::vector<Poi> pois_;
    std::unordered_map<std::string, size_t> index_;
};

struct ParseReport {
    size_t rows = 0;
    size_t kept = 0;
    size_t skipped = 0;
    std::map<std::string, size_t> reasons;

    std::string to_json() const;
};

enum class CheckinFormat { foursquare_tsv, jsonl };

struct LoadResult {
    Catalog catalog;
    std::vector<Trajectory> trajectories;  // sorted by user_id, check-ins by time
    ParseReport report;
    int tz_offset_minutes = 0;  // modal row offset (foursquare), else 0
};

// Loads check-ins and builds one trajectory per user. `catalog_path` is only
// used by the jsonl format (companion POI file); foursquare rows carry enough
// to synthesize POIs. Throws DataError when the file is unreadable or more
// than 10% of rows are malformed.
LoadResult load_checkins(const std::string& path, CheckinFormat format,
                         const std::string& catalog_path = "");

struct SplitReport {
    size_t total = 0;
    size_t train = 0;
    size_t valid = 0;
    size_t test = 0;
    size_t dropped_for_consistency = 0;
    size_t removed_pois = 0;
    size_t removed_users = 0;
    int filter_rounds = 0;
};

struct Dataset {
    Catalog catalog;
    std::vector<Trajectory> trajectories;  // post-filter, all splits merged
    std::vector<CheckIn> train;
    std::vector<CheckIn> valid;
    std::vector<CheckIn> test;
    SplitReport report;
    int tz_offset_minutes = 0;

    const Trajectory* trajectory_of(const std::string& user_id) const;
};

// Iterates the interaction filters to a fixed point, then splits 80/10/10 on
// the global chronological order. Check-ins in valid/test whose user or POI
// never occurs in train are dropped. Throws DataError when nothing survives.
Dataset preprocess(const Catalog& catalog, const std::vector<Trajectory>& trajectories,
                   int min_poi_inter = 10, int min_user_checkins = 10);

// jsonl artifact round-trips (one object per line, keys per the loader spec).
std::string catalog_to_jsonl(const Catalog& catalog);
std::string checkins_to_jsonl(const std::vector<CheckIn>& checkins);
std::vector<CheckIn> checkins_from_jsonl(const std::string& text);

// Per-user trajectories over a single check-in list (assumed time-sorted).
std::vector<Trajectory> group_by_user(const std::vector<CheckIn>& checkins);

}  // namespace roam
