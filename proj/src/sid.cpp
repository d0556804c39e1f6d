// SPDX-License-Identifier: Apache-2.0
#include "roam/sid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "json.hpp"
#include "roam/util.hpp"

namespace roam {

using nlohmann::json;

namespace {

void l2_normalize_block(std::vector<double>& v, int begin, int end) {
    double ss = 0.0;
    for (int i = begin; i < end; ++i) ss += v[i] * v[i];
    if (ss <= 0.0) return;
    double inv = 1.0 / std::sqrt(ss);
    for (int i = begin; i < end; ++i) v[i] *= inv;
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

int nearest_centroid(const std::vector<double>& x, const std::vector<std::vector<double>>& cents) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < cents.size(); ++k) {
        double d = sq_dist(x, cents[k]);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(k);
        }
    }
    return best;
}

char level_letter(int level) { return static_cast<char>('a' + level - 1); }

}  // namespace

CatalogExtent catalog_extent(const Catalog& catalog) {
    CatalogExtent e;
    bool first = true;
    for (const auto& p : catalog.pois()) {
        if (first) {
            e.lon_min = e.lon_max = p.point.lon;
            e.lat_min = e.lat_max = p.point.lat;
            first = false;
        } else {
            e.lon_min = std::min(e.lon_min, p.point.lon);
            e.lon_max = std::max(e.lon_max, p.point.lon);
            e.lat_min = std::min(e.lat_min, p.point.lat);
            e.lat_max = std::max(e.lat_max, p.point.lat);
        }
    }
    return e;
}

FeatureVector featurize(const Poi& poi, const CatalogExtent& extent) {
    FeatureVector f;
    f.values.assign(kFeatureDim, 0.0);

    auto minmax = [](double v, double lo, double hi) {
        return hi > lo ? (v - lo) / (hi - lo) : 0.5;
    };
    f.values[0] = minmax(poi.point.lon, extent.lon_min, extent.lon_max);
    f.values[1] = minmax(poi.point.lat, extent.lat_min, extent.lat_max);
    l2_normalize_block(f.values, 0, kGeoBlockDim);

    for (size_t depth = 0; depth < poi.category_path.size(); ++depth) {
        std::string key = poi.category_path[depth] + '\x1f' + std::to_string(depth);
        int idx = static_cast<int>(fnv1a64(key) % kCategoryBlockDim);
        f.values[kGeoBlockDim + idx] += 1.0;
    }
    l2_normalize_block(f.values, kGeoBlockDim, kGeoBlockDim + kCategoryBlockDim);

    const std::string& desc = poi.description;
    if (desc.size() >= 3) {
        for (size_t i = 0; i + 3 <= desc.size(); ++i) {
            int idx = static_cast<int>(fnv1a64(std::string_view(desc).substr(i, 3)) % kTrigramBlockDim);
            f.values[kGeoBlockDim + kCategoryBlockDim + idx] += 1.0;
        }
    }
    l2_normalize_block(f.values, kGeoBlockDim + kCategoryBlockDim, kFeatureDim);
    return f;
}

std::vector<Codebook> train_codebooks(const std::vector<FeatureVector>& features, int levels,
                                      int codebook_size, uint64_t seed, int max_iters,
                                      CodebookTrainStats* stats) {
    const size_t n = features.size();
    const int k = codebook_size;
    if (levels < 1) throw ConfigError("train_codebooks: levels must be >= 1");
    if (k < 2) throw ConfigError("train_codebooks: codebook size must be >= 2");
    if (n < static_cast<size_t>(k))
        throw DataError("train_codebooks: need at least K=" + std::to_string(k) + " feature vectors, got " +
                        std::to_string(n));
    const size_t dim = features[0].values.size();

    std::vector<std::vector<double>> residual(n);
    for (size_t i = 0; i < n; ++i) residual[i] = features[i].values;

    std::vector<Codebook> books;
    if (stats) {
        stats->mse_per_level.clear();
        stats->iterations_per_level.clear();
    }

    for (int level = 1; level <= levels; ++level) {
        std::mt19937_64 rng(seed + static_cast<uint64_t>(level));
        std::uniform_int_distribution<size_t> pick(0, n - 1);

        std::vector<std::vector<double>> cents;
        cents.reserve(static_cast<size_t>(k));
        std::vector<char> used(n, 0);
        while (cents.size() < static_cast<size_t>(k)) {
            size_t idx = pick(rng);
            if (used[idx]) continue;
            used[idx] = 1;
            cents.push_back(residual[idx]);
        }

        std::vector<int> assign(n, -1);
        int iters = 0;
        for (; iters < max_iters; ++iters) {
            bool moved = false;
            for (size_t i = 0; i < n; ++i) {
                int a = nearest_centroid(residual[i], cents);
                if (a != assign[i]) {
                    assign[i] = a;
                    moved = true;
                }
            }
            if (!moved) break;

            std::vector<std::vector<double>> sums(static_cast<size_t>(k), std::vector<double>(dim, 0.0));
            std::vector<size_t> counts(static_cast<size_t>(k), 0);
            for (size_t i = 0; i < n; ++i) {
                auto a = static_cast<size_t>(assign[i]);
                counts[a]++;
                for (size_t d = 0; d < dim; ++d) sums[a][d] += residual[i][d];
            }
            for (int c = 0; c < k; ++c) {
                auto cs = static_cast<size_t>(c);
                if (counts[cs] == 0) {
                    // Re-seed from the farthest point of the largest cluster.
                    size_t largest = 0;
                    for (size_t j = 1; j < counts.size(); ++j) {
                        if (counts[j] > counts[largest]) largest = j;
                    }
                    double best_d = -1.0;
                    size_t best_i = 0;
                    for (size_t i = 0; i < n; ++i) {
                        if (static_cast<size_t>(assign[i]) != largest) continue;
                        double d = sq_dist(residual[i], cents[largest]);
                        if (d > best_d) {
                            best_d = d;
                            best_i = i;
                        }
                    }
                    cents[cs] = residual[best_i];
                } else {
                    for (size_t d = 0; d < dim; ++d) cents[cs][d] = sums[cs][d] / static_cast<double>(counts[cs]);
                }
            }
        }

        // Identical rows break the SID bijection guarantee; nudge later
        // duplicates onto the farthest point of the largest cluster.
        for (int c1 = 0; c1 < k; ++c1) {
            for (int c2 = c1 + 1; c2 < k; ++c2) {
                if (cents[static_cast<size_t>(c1)] == cents[static_cast<size_t>(c2)]) {
                    std::vector<size_t> counts(static_cast<size_t>(k), 0);
                    for (size_t i = 0; i < n; ++i) counts[static_cast<size_t>(assign[i])]++;
                    size_t largest = 0;
                    for (size_t j = 1; j < counts.size(); ++j)
                        if (counts[j] > counts[largest]) largest = j;
                    double best_d = -1.0;
                    size_t best_i = 0;
                    for (size_t i = 0; i < n; ++i) {
                        if (static_cast<size_t>(assign[i]) != largest) continue;
                        double d = sq_dist(residual[i], cents[largest]);
                        if (d > best_d) {
                            best_d = d;
                            best_i = i;
                        }
                    }
                    cents[static_cast<size_t>(c2)] = residual[best_i];
                }
            }
        }

        Codebook book;
        book.level = level;
        book.vectors = cents;
        books.push_back(book);

        double mse = 0.0;
        for (size_t i = 0; i < n; ++i) {
            int a = nearest_centroid(residual[i], cents);
            for (size_t d = 0; d < dim; ++d) residual[i][d] -= cents[static_cast<size_t>(a)][d];
            mse += sq_dist(residual[i], std::vector<double>(dim, 0.0));
        }
        mse /= static_cast<double>(n);
        if (stats) {
            stats->mse_per_level.push_back(mse);
            stats->iterations_per_level.push_back(iters);
        }
    }
    return books;
}

Sid encode_sid(const FeatureVector& f, const std::vector<Codebook>& books) {
    if (books.empty()) throw ConfigError("encode_sid: no codebooks");
    Sid s;
    std::vector<double> residual = f.values;
    for (const auto& book : books) {
        int a = nearest_centroid(residual, book.vectors);
        s.codes.push_back(a);
        const auto& c = book.vectors[static_cast<size_t>(a)];
        for (size_t d = 0; d < residual.size(); ++d) residual[d] -= c[d];
    }
    return s;
}

std::vector<std::string> sid_tokens(const Sid& sid) {
    std::vector<std::string> out;
    for (size_t l = 0; l < sid.codes.size(); ++l) {
        out.push_back(std::string("<") + level_letter(static_cast<int>(l) + 1) + "_" +
                      std::to_string(sid.codes[l]) + ">");
    }
    if (sid.collision_break) out.push_back("<x_" + std::to_string(*sid.collision_break) + ">");
    return out;
}

std::string render_sid(const Sid& sid) {
    std::string s;
    for (const auto& t : sid_tokens(sid)) s += t;
    return s;
}

std::optional<Sid> parse_sid(const std::string& rendered) {
    Sid s;
    size_t pos = 0;
    int expected_level = 1;
    while (pos < rendered.size()) {
        if (rendered[pos] != '<') return std::nullopt;
        size_t close = rendered.find('>', pos);
        if (close == std::string::npos) return std::nullopt;
        std::string body = rendered.substr(pos + 1, close - pos - 1);
        if (body.size() < 3 || body[1] != '_') return std::nullopt;
        char letter = body[0];
        int value = 0;
        try {
            value = std::stoi(body.substr(2));
        } catch (const std::exception&) {
            return std::nullopt;
        }
        if (letter == 'x') {
            s.collision_break = value;
            pos = close + 1;
            if (pos != rendered.size()) return std::nullopt;
            break;
        }
        if (letter != level_letter(expected_level)) return std::nullopt;
        s.codes.push_back(value);
        expected_level++;
        pos = close + 1;
    }
    if (s.codes.empty()) return std::nullopt;
    return s;
}

const Sid& SidAssignment::sid_of(const std::string& poi_id) const {
    auto it = by_poi.find(poi_id);
    if (it == by_poi.end()) throw DataError("no SID assigned for poi: " + poi_id);
    return it->second;
}

const std::string& SidAssignment::resolve(const std::string& rendered) const {
    auto it = to_poi.find(rendered);
    if (it == to_poi.end()) throw DataError("unknown SID: " + rendered);
    return it->second;
}

const std::string* SidAssignment::try_resolve(const std::string& rendered) const {
    auto it = to_poi.find(rendered);
    return it == to_poi.end() ? nullptr : &it->second;
}

SidAssignment assign_collision_breaks(const Catalog& catalog, const std::vector<Codebook>& books) {
    SidAssignment out;
    CatalogExtent extent = catalog_extent(catalog);

    // Group by raw code tuple; poi order inside a group is lexicographic
    // because the map key is the poi_id.
    std::map<std::vector<int>, std::vector<std::string>> groups;
    std::map<std::string, Sid> raw;
    for (const auto& p : catalog.pois()) {
        Sid s = encode_sid(featurize(p, extent), books);
        groups[s.codes].push_back(p.poi_id);
        raw[p.poi_id] = s;
    }
    size_t collided = 0;
    for (auto& [codes, ids] : groups) {
        std::sort(ids.begin(), ids.end());
        if (ids.size() > 1) collided += ids.size();
        for (size_t i = 0; i < ids.size(); ++i) {
            Sid s = raw[ids[i]];
            if (ids.size() > 1) {
                s.collision_break = static_cast<int>(i);
                out.max_collision_break = std::max(out.max_collision_break, static_cast<int>(i));
            }
            out.by_poi[ids[i]] = s;
            out.to_poi[render_sid(s)] = ids[i];
        }
    }
    out.collision_rate =
        catalog.size() == 0 ? 0.0 : static_cast<double>(collided) / static_cast<double>(catalog.size());
    if (out.to_poi.size() != catalog.size())
        throw DataError("SID assignment failed to produce a bijection");
    return out;
}

std::string codebooks_to_json(const std::vector<Codebook>& books, int feature_dim, uint64_t seed) {
    json j;
    j["L"] = books.size();
    j["K"] = books.empty() ? 0 : books[0].vectors.size();
    j["D"] = feature_dim;
    j["seed"] = seed;
    j["levels"] = json::array();
    for (const auto& b : books) j["levels"].push_back(b.vectors);
    return j.dump();
}

std::vector<Codebook> codebooks_from_json(const std::string& text) {
    json j = json::parse(text);
    std::vector<Codebook> books;
    int level = 1;
    for (const auto& rows : j.at("levels")) {
        Codebook b;
        b.level = level++;
        b.vectors = rows.get<std::vector<std::vector<double>>>();
        books.push_back(std::move(b));
    }
    return books;
}

std::string sid_map_to_json(const SidAssignment& assignment) {
    json j = json::object();
    for (const auto& [poi, sid] : assignment.by_poi) j[poi] = render_sid(sid);
    return j.dump();
}

SidAssignment sid_map_from_json(const std::string& text) {
    json j = json::parse(text);
    SidAssignment out;
    size_t collided = 0;
    std::map<std::vector<int>, int> tuple_count;
    for (auto it = j.begin(); it != j.end(); ++it) {
        auto sid = parse_sid(it.value().get<std::string>());
        if (!sid) throw DataError("sid_map_from_json: bad SID for poi " + it.key());
        out.by_poi[it.key()] = *sid;
        out.to_poi[it.value().get<std::string>()] = it.key();
        tuple_count[sid->codes]++;
        if (sid->collision_break)
            out.max_collision_break = std::max(out.max_collision_break, *sid->collision_break);
    }
    for (const auto& [codes, cnt] : tuple_count) {
        if (cnt > 1) collided += static_cast<size_t>(cnt);
    }
    out.collision_rate =
        out.by_poi.empty() ? 0.0 : static_cast<double>(collided) / static_cast<double>(out.by_poi.size());
    return out;
}

}  // namespace roam
