// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace roam {

// Error taxonomy shared across the library. The C API and the CLI map these
// onto stable status/exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// FNV-1a 64-bit. Used for feature hashing and artifact fingerprints.
constexpr uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr uint64_t kFnvPrime = 1099511628211ULL;

constexpr uint64_t fnv1a64(std::string_view s, uint64_t h = kFnvOffset) {
    for (unsigned char c : s) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

std::string hex64(uint64_t v);
uint64_t hash_file(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Broken-down UTC-plus-offset timestamp. All timestamps in the library are
// seconds since the Unix epoch; "local" time is epoch + tz_offset_minutes.
struct CivilTime {
    int year = 1970;
    int month = 1;     // 1..12
    int day = 1;       // 1..31
    int hour = 0;      // 0..23
    int minute = 0;
    int second = 0;
    int weekday = 4;   // 0 = Monday .. 6 = Sunday
};

CivilTime civil_from_ts(int64_t ts, int tz_offset_minutes = 0);
int64_t ts_from_civil(int year, int month, int day, int hour = 0, int minute = 0,
                      int second = 0);

bool is_weekend(const CivilTime& t);

const char* month_name(int month);      // "January".."December"
const char* weekday_name(int weekday);  // "Monday".."Sunday"

// 12-hour clock rendering: hour_12(0) = 12 ("12 AM"), hour_12(13) = 1 ("1 PM").
int hour_12(int hour24);
const char* am_pm(int hour24);

// Deterministic RNG used everywhere a module contract requires seeded draws.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next() { return gen_(); }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        std::uniform_int_distribution<uint64_t> d(0, n - 1);
        return d(gen_);
    }
    int index(size_t n) { return static_cast<int>(below(n)); }

    double uniform() {
        std::uniform_real_distribution<double> d(0.0, 1.0);
        return d(gen_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        std::normal_distribution<double> d(mean, stddev);
        return d(gen_);
    }
    bool chance(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        std::shuffle(v.begin(), v.end(), gen_);
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

}  // namespace roam
