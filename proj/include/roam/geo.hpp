// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

namespace roam {

// Mean Earth radius in meters used by every distance computation.
constexpr double kEarthRadiusM = 6371000.0;

constexpr int kGeohashMaxPrecision = 12;
constexpr int kGeohashDefaultPrecision = 5;

struct GeoPoint {
    double lon = 0.0;
    double lat = 0.0;

    GeoPoint() = default;
    // Validates finiteness and ranges; throws std::invalid_argument otherwise.
    GeoPoint(double lon_deg, double lat_deg);
};

struct GeoBox {
    double lon_min = 0.0;
    double lon_max = 0.0;
    double lat_min = 0.0;
    double lat_max = 0.0;

    GeoPoint center() const { return GeoPoint((lon_min + lon_max) / 2.0, (lat_min + lat_max) / 2.0); }
    bool contains(const GeoPoint& p) const {
        return p.lon >= lon_min && p.lon <= lon_max && p.lat >= lat_min && p.lat <= lat_max;
    }
};

struct GeohashCell {
    std::string code;

    // Corpus rendering, e.g. "wm6j0" -> "<wm6j0>".
    std::string token() const { return "<" + code + ">"; }
};

// Great-circle distance in meters on the mean-radius sphere.
double haversine(const GeoPoint& a, const GeoPoint& b);

// Standard bit-interleaved base-32 geohash, longitude bit first.
GeohashCell geohash_encode(const GeoPoint& p, int precision = kGeohashDefaultPrecision);
GeoBox geohash_decode(const GeohashCell& cell);

}  // namespace roam
