// SPDX-License-Identifier: Apache-2.0
#include "roam/util.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace roam {

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file for hashing: " + path);
    uint64_t h = kFnvOffset;
    char buf[1 << 14];
    while (in) {
        in.read(buf, sizeof(buf));
        std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= kFnvPrime;
        }
    }
    return h;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path);
    out << content;
    if (!out) throw DataError("write failed: " + path);
}

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date (Hinnant's algorithm).
int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

void civil_from_days(int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const int64_t yy = static_cast<int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    y = static_cast<int>(yy + (m <= 2));
}

}  // namespace

CivilTime civil_from_ts(int64_t ts, int tz_offset_minutes) {
    int64_t local = ts + static_cast<int64_t>(tz_offset_minutes) * 60;
    int64_t days = local / 86400;
    int64_t sec = local % 86400;
    if (sec < 0) {
        sec += 86400;
        days -= 1;
    }
    CivilTime c;
    civil_from_days(days, c.year, c.month, c.day);
    c.hour = static_cast<int>(sec / 3600);
    c.minute = static_cast<int>((sec % 3600) / 60);
    c.second = static_cast<int>(sec % 60);
    // 1970-01-01 was a Thursday; weekday 0 = Monday.
    c.weekday = static_cast<int>(((days % 7) + 7 + 3) % 7);
    return c;
}

int64_t ts_from_civil(int year, int month, int day, int hour, int minute, int second) {
    return days_from_civil(year, month, day) * 86400 + hour * 3600 + minute * 60 + second;
}

bool is_weekend(const CivilTime& t) { return t.weekday >= 5; }

const char* month_name(int month) {
    static const std::array<const char*, 12> names = {
        "January", "February", "March", "April", "May", "June", "July", "August",
        "September", "October", "November", "December"};
    if (month < 1 || month > 12) throw std::out_of_range("month out of range");
    return names[static_cast<size_t>(month - 1)];
}

const char* weekday_name(int weekday) {
    static const std::array<const char*, 7> names = {"Monday", "Tuesday", "Wednesday",
                                                     "Thursday", "Friday", "Saturday",
                                                     "Sunday"};
    if (weekday < 0 || weekday > 6) throw std::out_of_range("weekday out of range");
    return names[static_cast<size_t>(weekday)];
}

int hour_12(int hour24) {
    int h = hour24 % 12;
    return h == 0 ? 12 : h;
}

const char* am_pm(int hour24) { return hour24 < 12 ? "AM" : "PM"; }

}  // namespace roam
