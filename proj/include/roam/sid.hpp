// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "roam/catalog.hpp"

namespace roam {

// Engineered POI feature vector. Layout (default D = 64):
//   [0,2)   lon/lat min-max normalized over the catalog
//   [2,32)  category path, each (depth, label) hashed with
//           fnv1a64(label + '\x1f' + depth) % 30
//   [32,64) description byte trigrams hashed with fnv1a64(trigram) % 32
// Each block is l2-normalized; all-zero blocks stay zero.
struct FeatureVector {
    std::vector<double> values;
};

constexpr int kFeatureDim = 64;
constexpr int kGeoBlockDim = 2;
constexpr int kCategoryBlockDim = 30;
constexpr int kTrigramBlockDim = 32;

struct CatalogExtent {
    double lon_min = 0, lon_max = 0, lat_min = 0, lat_max = 0;
};

CatalogExtent catalog_extent(const Catalog& catalog);
FeatureVector featurize(const Poi& poi, const CatalogExtent& extent);

struct Codebook {
    int level = 1;                             // 1-based
    std::vector<std::vector<double>> vectors;  // K rows of D
};

struct Sid {
    std::vector<int> codes;  // L entries in [0, K)
    std::optional<int> collision_break;
};

// Rendered token list, e.g. {"<a_17>","<b_21>","<c_119>"} (+ "<x_N>").
std::vector<std::string> sid_tokens(const Sid& sid);
std::string render_sid(const Sid& sid);
std::optional<Sid> parse_sid(const std::string& rendered);

struct CodebookTrainStats {
    // Mean squared reconstruction error measured after each level.
    std::vector<double> mse_per_level;
    std::vector<int> iterations_per_level;
};

// Residual k-means. Level 1 clusters the raw vectors; level l clusters the
// residuals left by levels < l. Lloyd iterations run until assignments are
// stable or `max_iters` rounds. Initial centroids are `k` distinct input rows
// drawn by mt19937_64(seed + level) with duplicate-index rejection; empty
// clusters are re-seeded with the farthest point of the largest cluster.
// Nearest-centroid ties resolve to the lowest index.
std::vector<Codebook> train_codebooks(const std::vector<FeatureVector>& features, int levels,
                                      int codebook_size, uint64_t seed, int max_iters = 100,
                                      CodebookTrainStats* stats = nullptr);

Sid encode_sid(const FeatureVector& f, const std::vector<Codebook>& books);

struct SidAssignment {
    std::map<std::string, Sid> by_poi;            // poi_id -> sid
    std::map<std::string, std::string> to_poi;    // rendered tokens -> poi_id
    double collision_rate = 0.0;                  // before break assignment
    int max_collision_break = 0;

    const Sid& sid_of(const std::string& poi_id) const;
    // Exact inverse of render; throws DataError for unknown SIDs.
    const std::string& resolve(const std::string& rendered) const;
    const std::string* try_resolve(const std::string& rendered) const;
};

// Encodes every catalog POI and assigns collision-break codes 0,1,2,... in
// poi_id lexicographic order among POIs sharing an identical code tuple.
SidAssignment assign_collision_breaks(const Catalog& catalog, const std::vector<Codebook>& books);

std::string codebooks_to_json(const std::vector<Codebook>& books, int feature_dim, uint64_t seed);
std::vector<Codebook> codebooks_from_json(const std::string& text);
std::string sid_map_to_json(const SidAssignment& assignment);
SidAssignment sid_map_from_json(const std::string& text);

}  // namespace roam
