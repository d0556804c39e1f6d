// SPDX-License-Identifier: Apache-2.0
#include "roam/geo.hpp"

#include <cmath>
#include <stdexcept>

namespace roam {

namespace {

constexpr char kBase32[] = "0123456789bcdefghjkmnpqrstuvwxyz";

int base32_index(char c) {
    for (int i = 0; i < 32; ++i) {
        if (kBase32[i] == c) return i;
    }
    return -1;
}

constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

}  // namespace

GeoPoint::GeoPoint(double lon_deg, double lat_deg) : lon(lon_deg), lat(lat_deg) {
    if (!std::isfinite(lon) || !std::isfinite(lat))
        throw std::invalid_argument("GeoPoint: coordinates must be finite");
    if (lon < -180.0 || lon > 180.0)
        throw std::invalid_argument("GeoPoint: lon out of [-180,180]");
    if (lat < -90.0 || lat > 90.0)
        throw std::invalid_argument("GeoPoint: lat out of [-90,90]");
}

double haversine(const GeoPoint& a, const GeoPoint& b) {
    const double lat1 = a.lat * kDegToRad;
    const double lat2 = b.lat * kDegToRad;
    const double dlat = (b.lat - a.lat) * kDegToRad;
    const double dlon = (b.lon - a.lon) * kDegToRad;
    const double s1 = std::sin(dlat / 2.0);
    const double s2 = std::sin(dlon / 2.0);
    double h = s1 * s1 + std::cos(lat1) * std::cos(lat2) * s2 * s2;
    h = std::min(1.0, std::max(0.0, h));
    return 2.0 * kEarthRadiusM * std::asin(std::sqrt(h));
}

GeohashCell geohash_encode(const GeoPoint& p, int precision) {
    if (precision < 1 || precision > kGeohashMaxPrecision)
        throw std::invalid_argument("geohash_encode: precision out of [1,12]");
    double lon_min = -180.0, lon_max = 180.0;
    double lat_min = -90.0, lat_max = 90.0;
    bool lon_bit = true;
    std::string code;
    code.reserve(static_cast<size_t>(precision));
    int bits = 0;
    int value = 0;
    while (static_cast<int>(code.size()) < precision) {
        if (lon_bit) {
            double mid = (lon_min + lon_max) / 2.0;
            if (p.lon >= mid) {
                value = (value << 1) | 1;
                lon_min = mid;
            } else {
                value <<= 1;
                lon_max = mid;
            }
        } else {
            double mid = (lat_min + lat_max) / 2.0;
            if (p.lat >= mid) {
                value = (value << 1) | 1;
                lat_min = mid;
            } else {
                value <<= 1;
                lat_max = mid;
            }
        }
        lon_bit = !lon_bit;
        if (++bits == 5) {
            code.push_back(kBase32[value]);
            bits = 0;
            value = 0;
        }
    }
    return GeohashCell{code};
}

GeoBox geohash_decode(const GeohashCell& cell) {
    if (cell.code.empty() || static_cast<int>(cell.code.size()) > kGeohashMaxPrecision)
        throw std::invalid_argument("geohash_decode: code length out of [1,12]");
    GeoBox box{-180.0, 180.0, -90.0, 90.0};
    bool lon_bit = true;
    for (char c : cell.code) {
        int v = base32_index(c);
        if (v < 0) throw std::invalid_argument(std::string("geohash_decode: invalid character '") + c + "'");
        for (int bit = 4; bit >= 0; --bit) {
            const bool set = (v >> bit) & 1;
            if (lon_bit) {
                double mid = (box.lon_min + box.lon_max) / 2.0;
                if (set)
                    box.lon_min = mid;
                else
                    box.lon_max = mid;
            } else {
                double mid = (box.lat_min + box.lat_max) / 2.0;
                if (set)
                    box.lat_min = mid;
                else
                    box.lat_max = mid;
            }
            lon_bit = !lon_bit;
        }
    }
    return box;
}

}  // namespace roam
