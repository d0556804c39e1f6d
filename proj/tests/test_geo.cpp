// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <stdexcept>
#include <random>

#include "doctest.h"
#include "roam/geo.hpp"

using namespace roam;

TEST_CASE("haversine identical points is zero") {
    GeoPoint p(116.40, 39.90);
    CHECK(haversine(p, p) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("haversine half circumference") {
    // Antipodal equator points: exactly pi * R.
    double expected = 3.14159265358979323846 * kEarthRadiusM;
    CHECK(std::abs(haversine(GeoPoint(0, 0), GeoPoint(180, 0)) - expected) < 1.0);
    CHECK(std::abs(haversine(GeoPoint(0, 0), GeoPoint(180, 0)) - 20015086.8) < 1.0);
}

TEST_CASE("haversine quarter circumference") {
    double expected = 0.5 * 3.14159265358979323846 * kEarthRadiusM;
    CHECK(std::abs(haversine(GeoPoint(0, 0), GeoPoint(90, 0)) - expected) < 1.0);
    CHECK(std::abs(haversine(GeoPoint(0, 0), GeoPoint(90, 0)) - 10007543.4) < 1.0);
}

TEST_CASE("haversine symmetry and triangle inequality on random triples") {
    std::mt19937_64 rng(1234);
    std::uniform_real_distribution<double> lon(-180, 180), lat(-90, 90);
    for (int i = 0; i < 200; ++i) {
        GeoPoint a(lon(rng), lat(rng)), b(lon(rng), lat(rng)), c(lon(rng), lat(rng));
        double ab = haversine(a, b), ba = haversine(b, a);
        CHECK(ab == doctest::Approx(ba).epsilon(1e-6));
        CHECK(ab >= 0.0);
        double ac = haversine(a, c), cb = haversine(c, b);
        CHECK(ab <= ac + cb + 1e-6 * (ac + cb + 1.0));
    }
}

TEST_CASE("GeoPoint validates ranges") {
    CHECK_THROWS_AS(GeoPoint(181.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(GeoPoint(0.0, -91.0), std::invalid_argument);
    CHECK_THROWS_AS(GeoPoint(std::nan(""), 0.0), std::invalid_argument);
}

TEST_CASE("geohash encode reference value at origin") {
    // Derived by hand: at (0,0) every bisection takes the upper half, giving
    // bits 10101 10000 00000 00000 00000 -> "s0000".
    CHECK(geohash_encode(GeoPoint(0, 0), 5).code == "s0000");
}

TEST_CASE("geohash cell renders as corpus token") {
    GeohashCell cell{"wm6j0"};
    CHECK(cell.token() == "<wm6j0>");
}

TEST_CASE("geohash precision validated") {
    CHECK_THROWS_AS(geohash_encode(GeoPoint(0, 0), 0), std::invalid_argument);
    CHECK_THROWS_AS(geohash_encode(GeoPoint(0, 0), 13), std::invalid_argument);
}

TEST_CASE("geohash decode of s0000 contains origin") {
    GeoBox box = geohash_decode(GeohashCell{"s0000"});
    CHECK(box.contains(GeoPoint(0, 0)));
}

TEST_CASE("geohash decode single character s") {
    GeoBox box = geohash_decode(GeohashCell{"s"});
    CHECK(box.lon_min == doctest::Approx(0.0));
    CHECK(box.lon_max == doctest::Approx(45.0));
    CHECK(box.lat_min == doctest::Approx(0.0));
    CHECK(box.lat_max == doctest::Approx(45.0));
}

TEST_CASE("geohash decode rejects invalid characters") {
    CHECK_THROWS_AS(geohash_decode(GeohashCell{"abia"}), std::invalid_argument);
    CHECK_THROWS_AS(geohash_decode(GeohashCell{""}), std::invalid_argument);
}

TEST_CASE("geohash round trip on cell centers") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> lon(-180, 180), lat(-90, 90);
    for (int i = 0; i < 100; ++i) {
        int precision = 1 + static_cast<int>(rng() % 12);
        GeohashCell cell = geohash_encode(GeoPoint(lon(rng), lat(rng)), precision);
        GeoBox box = geohash_decode(cell);
        CHECK(geohash_encode(box.center(), precision).code == cell.code);
    }
}

TEST_CASE("geohash containment and prefix properties") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> lon(-180, 180), lat(-90, 90);
    for (int i = 0; i < 100; ++i) {
        GeoPoint p(lon(rng), lat(rng));
        std::string prev;
        for (int k = 1; k <= 12; ++k) {
            GeohashCell cell = geohash_encode(p, k);
            CHECK(geohash_decode(cell).contains(p));
            if (k > 1) CHECK(cell.code.substr(0, prev.size()) == prev);
            prev = cell.code;
        }
    }
}
