// SPDX-License-Identifier: Apache-2.0
#include "roam/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "nn_kernels.hpp"
#include "roam/util.hpp"

namespace roam {

using nlohmann::json;
using nn::dot;
using nn::linear_bwd;
using nn::linear_fwd;
using nn::rmsnorm_bwd;
using nn::rmsnorm_fwd;

void ModelConfig::validate() const {
    if (d_model <= 0 || n_heads <= 0 || n_layers < 0 || context_len <= 0 || vocab_size <= 0)
        throw ConfigError("ModelConfig: dimensions must be positive");
    if (d_model > 256) throw ConfigError("ModelConfig: d_model above the desk-scale cap of 256");
    if (d_model % n_heads != 0) throw ConfigError("ModelConfig: d_model must divide by n_heads");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("ModelConfig: dropout out of [0,1)");
}

size_t param_count(const ModelConfig& cfg) {
    size_t d = static_cast<size_t>(cfg.d_model);
    size_t v = static_cast<size_t>(cfg.vocab_size);
    size_t t = static_cast<size_t>(cfg.context_len);
    return 2 * v * d + t * d + 12 * static_cast<size_t>(cfg.n_layers) * d * d;
}

TrainItem causal_item(const std::vector<int>& tokens) {
    TrainItem item;
    item.tokens = tokens;
    for (size_t i = 0; i + 1 < tokens.size(); ++i) {
        item.targets.push_back({static_cast<int>(i), tokens[i + 1], 1.0});
    }
    return item;
}

TrainItem masked_item(const MaskedRecord& masked) {
    TrainItem item;
    item.tokens = masked.input;
    for (const auto& [pos, orig] : masked.targets) {
        if (pos == 0) continue;  // nothing precedes position 0
        item.targets.push_back({pos - 1, orig, 1.0});
    }
    return item;
}

TrainItem span_item(const CorpusRecord& record) {
    TrainItem item;
    item.tokens = record.tokens;
    for (int i = record.response.begin; i < record.response.end; ++i) {
        if (i == 0) continue;
        item.targets.push_back({i - 1, record.tokens[static_cast<size_t>(i)], 1.0});
    }
    return item;
}

Model::Model(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    size_t d = static_cast<size_t>(cfg_.d_model);
    size_t h4 = static_cast<size_t>(cfg_.mlp_hidden());
    size_t cursor = 0;
    off_.wte = cursor;
    cursor += static_cast<size_t>(cfg_.vocab_size) * d;
    off_.wpe = cursor;
    cursor += static_cast<size_t>(cfg_.context_len) * d;
    off_.lm_head = cursor;
    cursor += static_cast<size_t>(cfg_.vocab_size) * d;
    for (int l = 0; l < cfg_.n_layers; ++l) {
        off_.wq.push_back(cursor);
        cursor += d * d;
        off_.wk.push_back(cursor);
        cursor += d * d;
        off_.wv.push_back(cursor);
        cursor += d * d;
        off_.wo.push_back(cursor);
        cursor += d * d;
        off_.fc1.push_back(cursor);
        cursor += h4 * d;
        off_.fc2.push_back(cursor);
        cursor += d * h4;
    }
    off_.total = cursor;
    params_.assign(cursor, 0.0);
}

void Model::init_params(uint64_t seed, double init_std) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, init_std);
    for (double& p : params_) p = nd(rng);
}

const double* Model::wte_row(int token) const {
    return params_.data() + off_.wte + static_cast<size_t>(token) * cfg_.d_model;
}

const double* Model::lm_head_row(int output) const {
    return params_.data() + off_.lm_head + static_cast<size_t>(output) * cfg_.d_model;
}

struct Model::Activations {
    int T = 0;
    std::vector<int> tokens;
    std::vector<double> emb;                 // [T*D] embedding sum, pre-norm
    std::vector<double> inv0;                // [T]
    std::vector<double> x0;                  // [T*D] stream entering layer 0
    std::vector<std::vector<double>> s_attn; // per layer, stream after attn residual [T*D]
    std::vector<std::vector<double>> s_out;  // per layer, stream after mlp residual [T*D]
    std::vector<std::vector<double>> x1, q, k, v, concat, x3, fc1post;
    std::vector<std::vector<double>> inv_a, inv_m;  // per layer [T]
    std::vector<std::vector<double>> attw;          // per layer [H*T*T]
    std::vector<double> inv_f;                      // [T]
    std::vector<double> h;                          // [T*D] final-norm hidden
};

void Model::forward_item(const std::vector<int>& tokens, Activations& a) const {
    const int T = static_cast<int>(tokens.size());
    const int D = cfg_.d_model;
    const int H = cfg_.n_heads;
    const int hd = cfg_.head_dim();
    const int M = cfg_.mlp_hidden();
    const int L = cfg_.n_layers;
    if (T == 0) throw ConfigError("forward: empty token sequence");
    if (T > cfg_.context_len)
        throw DataError("forward: sequence length " + std::to_string(T) + " exceeds context_len " +
                        std::to_string(cfg_.context_len));
    for (int t : tokens) {
        if (t < 0 || t >= cfg_.vocab_size) throw DataError("forward: token id out of vocab");
    }
    const double* P = params_.data();
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

    a.T = T;
    a.tokens = tokens;
    a.emb.assign(static_cast<size_t>(T) * D, 0.0);
    a.inv0.assign(static_cast<size_t>(T), 0.0);
    a.x0.assign(static_cast<size_t>(T) * D, 0.0);
    auto resize_layer = [&](std::vector<std::vector<double>>& vv, size_t n) {
        vv.assign(static_cast<size_t>(L), std::vector<double>(n, 0.0));
    };
    resize_layer(a.s_attn, static_cast<size_t>(T) * D);
    resize_layer(a.s_out, static_cast<size_t>(T) * D);
    resize_layer(a.x1, static_cast<size_t>(T) * D);
    resize_layer(a.q, static_cast<size_t>(T) * D);
    resize_layer(a.k, static_cast<size_t>(T) * D);
    resize_layer(a.v, static_cast<size_t>(T) * D);
    resize_layer(a.concat, static_cast<size_t>(T) * D);
    resize_layer(a.x3, static_cast<size_t>(T) * D);
    resize_layer(a.fc1post, static_cast<size_t>(T) * M);
    resize_layer(a.inv_a, static_cast<size_t>(T));
    resize_layer(a.inv_m, static_cast<size_t>(T));
    resize_layer(a.attw, static_cast<size_t>(H) * T * T);
    a.inv_f.assign(static_cast<size_t>(T), 0.0);
    a.h.assign(static_cast<size_t>(T) * D, 0.0);

    for (int t = 0; t < T; ++t) {
        const double* wte = P + off_.wte + static_cast<size_t>(tokens[static_cast<size_t>(t)]) * D;
        const double* wpe = P + off_.wpe + static_cast<size_t>(t) * D;
        double* e = a.emb.data() + static_cast<size_t>(t) * D;
        for (int i = 0; i < D; ++i) e[i] = wte[i] + wpe[i];
        a.inv0[static_cast<size_t>(t)] = rmsnorm_fwd(e, a.x0.data() + static_cast<size_t>(t) * D, D);
    }

    const std::vector<double>* stream = &a.x0;
    for (int l = 0; l < L; ++l) {
        auto lu = static_cast<size_t>(l);
        const double* wq = P + off_.wq[lu];
        const double* wk = P + off_.wk[lu];
        const double* wv = P + off_.wv[lu];
        const double* wo = P + off_.wo[lu];
        const double* w1 = P + off_.fc1[lu];
        const double* w2 = P + off_.fc2[lu];

        for (int t = 0; t < T; ++t) {
            const double* sin_ = stream->data() + static_cast<size_t>(t) * D;
            double* x1 = a.x1[lu].data() + static_cast<size_t>(t) * D;
            a.inv_a[lu][static_cast<size_t>(t)] = rmsnorm_fwd(sin_, x1, D);
            linear_fwd(wq, x1, a.q[lu].data() + static_cast<size_t>(t) * D, D, D);
            linear_fwd(wk, x1, a.k[lu].data() + static_cast<size_t>(t) * D, D, D);
            linear_fwd(wv, x1, a.v[lu].data() + static_cast<size_t>(t) * D, D, D);
        }

        for (int t = 0; t < T; ++t) {
            double* conc = a.concat[lu].data() + static_cast<size_t>(t) * D;
            for (int hh = 0; hh < H; ++hh) {
                const int hs = hh * hd;
                double* aw = a.attw[lu].data() + (static_cast<size_t>(t) * H + hh) * T;
                double max_score = -std::numeric_limits<double>::infinity();
                for (int s = 0; s <= t; ++s) {
                    double sc = dot(a.q[lu].data() + static_cast<size_t>(t) * D + hs,
                                    a.k[lu].data() + static_cast<size_t>(s) * D + hs, hd) *
                                inv_sqrt_hd;
                    aw[s] = sc;
                    max_score = std::max(max_score, sc);
                }
                double sum = 0.0;
                for (int s = 0; s <= t; ++s) {
                    aw[s] = std::exp(aw[s] - max_score);
                    sum += aw[s];
                }
                double inv_sum = 1.0 / sum;
                for (int s = 0; s <= t; ++s) aw[s] *= inv_sum;
                for (int j = 0; j < hd; ++j) {
                    double acc = 0.0;
                    for (int s = 0; s <= t; ++s)
                        acc += aw[s] * a.v[lu][static_cast<size_t>(s) * D + hs + j];
                    conc[hs + j] = acc;
                }
            }
        }

        for (int t = 0; t < T; ++t) {
            double proj[1024];
            linear_fwd(wo, a.concat[lu].data() + static_cast<size_t>(t) * D, proj, D, D);
            const double* sin_ = stream->data() + static_cast<size_t>(t) * D;
            double* sa = a.s_attn[lu].data() + static_cast<size_t>(t) * D;
            for (int i = 0; i < D; ++i) sa[i] = sin_[i] + proj[i];
        }

        for (int t = 0; t < T; ++t) {
            const double* sa = a.s_attn[lu].data() + static_cast<size_t>(t) * D;
            double* x3 = a.x3[lu].data() + static_cast<size_t>(t) * D;
            a.inv_m[lu][static_cast<size_t>(t)] = rmsnorm_fwd(sa, x3, D);
            double* f1 = a.fc1post[lu].data() + static_cast<size_t>(t) * M;
            linear_fwd(w1, x3, f1, M, D);
            for (int i = 0; i < M; ++i) f1[i] = f1[i] > 0.0 ? f1[i] : 0.0;
            double f2[1024];
            linear_fwd(w2, f1, f2, D, M);
            double* so = a.s_out[lu].data() + static_cast<size_t>(t) * D;
            for (int i = 0; i < D; ++i) so[i] = sa[i] + f2[i];
        }
        stream = &a.s_out[lu];
    }

    for (int t = 0; t < T; ++t) {
        a.inv_f[static_cast<size_t>(t)] = rmsnorm_fwd(stream->data() + static_cast<size_t>(t) * D,
                                                      a.h.data() + static_cast<size_t>(t) * D, D);
    }
}

std::vector<std::vector<double>> Model::forward_probs(
    const std::vector<int>& tokens, std::vector<std::vector<double>>* hiddens) const {
    Activations a;
    forward_item(tokens, a);
    const int T = a.T;
    const int D = cfg_.d_model;
    const int V = cfg_.vocab_size;
    std::vector<std::vector<double>> probs(static_cast<size_t>(T),
                                           std::vector<double>(static_cast<size_t>(V), 0.0));
    if (hiddens) {
        hiddens->assign(static_cast<size_t>(T), std::vector<double>(static_cast<size_t>(D), 0.0));
    }
    for (int t = 0; t < T; ++t) {
        const double* h = a.h.data() + static_cast<size_t>(t) * D;
        if (hiddens) std::copy(h, h + D, (*hiddens)[static_cast<size_t>(t)].begin());
        auto& row = probs[static_cast<size_t>(t)];
        double max_logit = -std::numeric_limits<double>::infinity();
        for (int o = 0; o < V; ++o) {
            row[static_cast<size_t>(o)] = dot(params_.data() + off_.lm_head + static_cast<size_t>(o) * D, h, D);
            max_logit = std::max(max_logit, row[static_cast<size_t>(o)]);
        }
        double sum = 0.0;
        for (int o = 0; o < V; ++o) {
            row[static_cast<size_t>(o)] = std::exp(row[static_cast<size_t>(o)] - max_logit);
            sum += row[static_cast<size_t>(o)];
        }
        for (int o = 0; o < V; ++o) row[static_cast<size_t>(o)] /= sum;
    }
    return probs;
}

double Model::loss(const std::vector<TrainItem>& batch, bool normalize) const {
    double total = 0.0;
    double weight_sum = 0.0;
    for (const auto& item : batch) {
        if (item.targets.empty()) continue;
        Activations a;
        forward_item(item.tokens, a);
        const int D = cfg_.d_model;
        const int V = cfg_.vocab_size;
        std::vector<double> logits(static_cast<size_t>(V));
        for (const auto& tgt : item.targets) {
            if (tgt.pos < 0 || tgt.pos >= a.T) throw ConfigError("loss: target position out of range");
            const double* h = a.h.data() + static_cast<size_t>(tgt.pos) * D;
            double max_logit = -std::numeric_limits<double>::infinity();
            for (int o = 0; o < V; ++o) {
                logits[static_cast<size_t>(o)] =
                    dot(params_.data() + off_.lm_head + static_cast<size_t>(o) * D, h, D);
                max_logit = std::max(max_logit, logits[static_cast<size_t>(o)]);
            }
            double sum = 0.0;
            for (int o = 0; o < V; ++o) sum += std::exp(logits[static_cast<size_t>(o)] - max_logit);
            double logp = logits[static_cast<size_t>(tgt.token)] - max_logit - std::log(sum);
            total += tgt.weight * (-logp);
            weight_sum += tgt.weight;
        }
    }
    if (normalize) {
        if (weight_sum == 0.0) throw ConfigError("loss: empty active target set");
        return total / weight_sum;
    }
    return total;
}

double Model::loss_grad(const std::vector<TrainItem>& batch, std::vector<double>& grad,
                        bool normalize, uint64_t dropout_seed) const {
    (void)dropout_seed;  // dropout defaults to 0; masks would hook in here
    if (grad.size() != params_.size()) grad.assign(params_.size(), 0.0);
    const int D = cfg_.d_model;
    const int V = cfg_.vocab_size;
    const int H = cfg_.n_heads;
    const int hd = cfg_.head_dim();
    const int M = cfg_.mlp_hidden();
    const int L = cfg_.n_layers;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    const double* P = params_.data();
    double* G = grad.data();

    double weight_sum = 0.0;
    for (const auto& item : batch) {
        for (const auto& t : item.targets) weight_sum += t.weight;
    }
    const double scale = normalize ? (weight_sum != 0.0 ? 1.0 / weight_sum : 0.0) : 1.0;
    if (normalize && weight_sum == 0.0) throw ConfigError("loss_grad: empty active target set");

    double total = 0.0;
    std::vector<double> logits(static_cast<size_t>(V));

    for (const auto& item : batch) {
        if (item.targets.empty()) continue;
        Activations a;
        forward_item(item.tokens, a);
        const int T = a.T;

        std::vector<double> dh(static_cast<size_t>(T) * D, 0.0);
        for (const auto& tgt : item.targets) {
            const double* h = a.h.data() + static_cast<size_t>(tgt.pos) * D;
            double max_logit = -std::numeric_limits<double>::infinity();
            for (int o = 0; o < V; ++o) {
                logits[static_cast<size_t>(o)] =
                    dot(P + off_.lm_head + static_cast<size_t>(o) * D, h, D);
                max_logit = std::max(max_logit, logits[static_cast<size_t>(o)]);
            }
            double sum = 0.0;
            for (int o = 0; o < V; ++o) {
                logits[static_cast<size_t>(o)] = std::exp(logits[static_cast<size_t>(o)] - max_logit);
                sum += logits[static_cast<size_t>(o)];
            }
            double inv_sum = 1.0 / sum;
            double p_target = logits[static_cast<size_t>(tgt.token)] * inv_sum;
            total += tgt.weight * (-std::log(std::max(p_target, 1e-300)));

            double* dh_row = dh.data() + static_cast<size_t>(tgt.pos) * D;
            const double coeff = tgt.weight * scale;
            for (int o = 0; o < V; ++o) {
                double dlogit = logits[static_cast<size_t>(o)] * inv_sum;
                if (o == tgt.token) dlogit -= 1.0;
                dlogit *= coeff;
                if (dlogit == 0.0) continue;
                const double* row = P + off_.lm_head + static_cast<size_t>(o) * D;
                double* drow = G + off_.lm_head + static_cast<size_t>(o) * D;
                for (int i = 0; i < D; ++i) {
                    drow[i] += dlogit * h[i];
                    dh_row[i] += row[i] * dlogit;
                }
            }
        }

        // Final rmsnorm backward into the top-of-stack stream gradient.
        std::vector<double> ds(static_cast<size_t>(T) * D, 0.0);
        const std::vector<double>& top =
            L > 0 ? a.s_out[static_cast<size_t>(L - 1)] : a.x0;
        for (int t = 0; t < T; ++t) {
            rmsnorm_bwd(dh.data() + static_cast<size_t>(t) * D, top.data() + static_cast<size_t>(t) * D,
                        a.inv_f[static_cast<size_t>(t)], ds.data() + static_cast<size_t>(t) * D, D);
        }

        std::vector<double> dx3(static_cast<size_t>(T) * D);
        std::vector<double> df1(static_cast<size_t>(T) * M);
        std::vector<double> dsa(static_cast<size_t>(T) * D);
        std::vector<double> dconc(static_cast<size_t>(T) * D);
        std::vector<double> dq(static_cast<size_t>(T) * D);
        std::vector<double> dk(static_cast<size_t>(T) * D);
        std::vector<double> dv(static_cast<size_t>(T) * D);
        std::vector<double> dx1(static_cast<size_t>(T) * D);
        std::vector<double> dscore(static_cast<size_t>(T));

        for (int l = L - 1; l >= 0; --l) {
            auto lu = static_cast<size_t>(l);
            const std::vector<double>& s_in = l > 0 ? a.s_out[lu - 1] : a.x0;
            const double* w1 = P + off_.fc1[lu];
            const double* w2 = P + off_.fc2[lu];
            const double* wo = P + off_.wo[lu];
            const double* wq = P + off_.wq[lu];
            const double* wk = P + off_.wk[lu];
            const double* wv = P + off_.wv[lu];
            double* g1 = G + off_.fc1[lu];
            double* g2 = G + off_.fc2[lu];
            double* go = G + off_.wo[lu];
            double* gq = G + off_.wq[lu];
            double* gk = G + off_.wk[lu];
            double* gv = G + off_.wv[lu];

            // MLP backward: ds(stream out) -> dsa(stream after attn)
            std::fill(dx3.begin(), dx3.end(), 0.0);
            std::fill(df1.begin(), df1.end(), 0.0);
            std::fill(dsa.begin(), dsa.end(), 0.0);
            for (int t = 0; t < T; ++t) {
                const double* dso = ds.data() + static_cast<size_t>(t) * D;
                double* dsa_row = dsa.data() + static_cast<size_t>(t) * D;
                for (int i = 0; i < D; ++i) dsa_row[i] = dso[i];  // residual path
                const double* f1 = a.fc1post[lu].data() + static_cast<size_t>(t) * M;
                double* df1_row = df1.data() + static_cast<size_t>(t) * M;
                linear_bwd(w2, f1, dso, g2, df1_row, D, M);
                for (int i = 0; i < M; ++i) {
                    if (f1[i] <= 0.0) df1_row[i] = 0.0;  // relu gate
                }
                linear_bwd(w1, a.x3[lu].data() + static_cast<size_t>(t) * D, df1_row, g1,
                           dx3.data() + static_cast<size_t>(t) * D, M, D);
                rmsnorm_bwd(dx3.data() + static_cast<size_t>(t) * D,
                            a.s_attn[lu].data() + static_cast<size_t>(t) * D,
                            a.inv_m[lu][static_cast<size_t>(t)], dsa_row, D);
            }

            // Attention projection backward: dsa -> dconc and residual into ds_in
            std::fill(dconc.begin(), dconc.end(), 0.0);
            for (int t = 0; t < T; ++t) {
                linear_bwd(wo, a.concat[lu].data() + static_cast<size_t>(t) * D,
                           dsa.data() + static_cast<size_t>(t) * D, go,
                           dconc.data() + static_cast<size_t>(t) * D, D, D);
            }

            std::fill(dq.begin(), dq.end(), 0.0);
            std::fill(dk.begin(), dk.end(), 0.0);
            std::fill(dv.begin(), dv.end(), 0.0);
            for (int hh = 0; hh < H; ++hh) {
                const int hs = hh * hd;
                for (int t = 0; t < T; ++t) {
                    const double* aw = a.attw[lu].data() + (static_cast<size_t>(t) * H + hh) * T;
                    const double* dhd = dconc.data() + static_cast<size_t>(t) * D + hs;
                    for (int s = 0; s <= t; ++s) {
                        const double w = aw[s];
                        const double* vs = a.v[lu].data() + static_cast<size_t>(s) * D + hs;
                        double* dvs = dv.data() + static_cast<size_t>(s) * D + hs;
                        for (int j = 0; j < hd; ++j) dvs[j] += w * dhd[j];
                        dscore[static_cast<size_t>(s)] = dot(dhd, vs, hd);
                    }
                    double sum_dw_w = 0.0;
                    for (int s = 0; s <= t; ++s) sum_dw_w += dscore[static_cast<size_t>(s)] * aw[s];
                    for (int s = 0; s <= t; ++s)
                        dscore[static_cast<size_t>(s)] =
                            aw[s] * (dscore[static_cast<size_t>(s)] - sum_dw_w);
                    const double* qt = a.q[lu].data() + static_cast<size_t>(t) * D + hs;
                    double* dqt = dq.data() + static_cast<size_t>(t) * D + hs;
                    for (int s = 0; s <= t; ++s) {
                        const double dsc = dscore[static_cast<size_t>(s)] * inv_sqrt_hd;
                        const double* ks = a.k[lu].data() + static_cast<size_t>(s) * D + hs;
                        double* dks = dk.data() + static_cast<size_t>(s) * D + hs;
                        for (int j = 0; j < hd; ++j) {
                            dqt[j] += dsc * ks[j];
                            dks[j] += dsc * qt[j];
                        }
                    }
                }
            }

            // QKV linears + pre-attn norm backward; write complete ds for layer below.
            std::fill(dx1.begin(), dx1.end(), 0.0);
            for (int t = 0; t < T; ++t) {
                const double* x1 = a.x1[lu].data() + static_cast<size_t>(t) * D;
                double* dx1_row = dx1.data() + static_cast<size_t>(t) * D;
                linear_bwd(wq, x1, dq.data() + static_cast<size_t>(t) * D, gq, dx1_row, D, D);
                linear_bwd(wk, x1, dk.data() + static_cast<size_t>(t) * D, gk, dx1_row, D, D);
                linear_bwd(wv, x1, dv.data() + static_cast<size_t>(t) * D, gv, dx1_row, D, D);
            }
            for (int t = 0; t < T; ++t) {
                double* ds_row = ds.data() + static_cast<size_t>(t) * D;
                const double* dsa_row = dsa.data() + static_cast<size_t>(t) * D;
                for (int i = 0; i < D; ++i) ds_row[i] = dsa_row[i];  // residual into layer input
                rmsnorm_bwd(dx1.data() + static_cast<size_t>(t) * D,
                            s_in.data() + static_cast<size_t>(t) * D, a.inv_a[lu][static_cast<size_t>(t)],
                            ds_row, D);
            }
        }

        // Initial norm + embeddings.
        for (int t = 0; t < T; ++t) {
            double demb[1024];
            std::fill(demb, demb + D, 0.0);
            rmsnorm_bwd(ds.data() + static_cast<size_t>(t) * D, a.emb.data() + static_cast<size_t>(t) * D,
                        a.inv0[static_cast<size_t>(t)], demb, D);
            double* gte = G + off_.wte + static_cast<size_t>(item.tokens[static_cast<size_t>(t)]) * D;
            double* gpe = G + off_.wpe + static_cast<size_t>(t) * D;
            for (int i = 0; i < D; ++i) {
                gte[i] += demb[i];
                gpe[i] += demb[i];
            }
        }
    }
    return normalize ? total / weight_sum : total;
}

double Model::sequence_logprob(const std::vector<int>& tokens, const Span& response) const {
    TrainItem item;
    item.tokens = tokens;
    for (int i = response.begin; i < response.end; ++i) {
        if (i == 0) continue;
        item.targets.push_back({i - 1, tokens[static_cast<size_t>(i)], 1.0});
    }
    if (item.targets.empty()) throw ConfigError("sequence_logprob: empty response span");
    return -loss({item}, /*normalize=*/false);
}

KvCache Model::make_cache() const {
    KvCache c;
    c.k.assign(static_cast<size_t>(cfg_.n_layers), {});
    c.v.assign(static_cast<size_t>(cfg_.n_layers), {});
    c.last_hidden.assign(static_cast<size_t>(cfg_.d_model), 0.0);
    return c;
}

std::vector<std::vector<double>> Model::extend(KvCache& cache, const std::vector<int>& tokens,
                                               std::vector<std::vector<double>>* hiddens) const {
    const int D = cfg_.d_model;
    const int H = cfg_.n_heads;
    const int hd = cfg_.head_dim();
    const int M = cfg_.mlp_hidden();
    const int L = cfg_.n_layers;
    const int V = cfg_.vocab_size;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    const double* P = params_.data();

    if (cache.len + static_cast<int>(tokens.size()) > cfg_.context_len)
        throw DataError("extend: cache would exceed context_len");

    std::vector<std::vector<double>> out;
    if (hiddens) hiddens->clear();
    std::vector<double> x(static_cast<size_t>(D));
    std::vector<double> buf(static_cast<size_t>(std::max(D, M)));
    std::vector<double> qrow(static_cast<size_t>(D));
    std::vector<double> conc(static_cast<size_t>(D));
    std::vector<double> scores;

    for (int tok : tokens) {
        if (tok < 0 || tok >= V) throw DataError("extend: token id out of vocab");
        const int pos = cache.len;
        const double* wte = P + off_.wte + static_cast<size_t>(tok) * D;
        const double* wpe = P + off_.wpe + static_cast<size_t>(pos) * D;
        for (int i = 0; i < D; ++i) x[static_cast<size_t>(i)] = wte[i] + wpe[i];
        rmsnorm_fwd(x.data(), x.data(), D);

        for (int l = 0; l < L; ++l) {
            auto lu = static_cast<size_t>(l);
            auto& kl = cache.k[lu];
            auto& vl = cache.v[lu];
            kl.resize(static_cast<size_t>(pos + 1) * D);
            vl.resize(static_cast<size_t>(pos + 1) * D);

            double inv = rmsnorm_fwd(x.data(), buf.data(), D);
            (void)inv;
            linear_fwd(P + off_.wq[lu], buf.data(), qrow.data(), D, D);
            linear_fwd(P + off_.wk[lu], buf.data(), kl.data() + static_cast<size_t>(pos) * D, D, D);
            linear_fwd(P + off_.wv[lu], buf.data(), vl.data() + static_cast<size_t>(pos) * D, D, D);

            scores.assign(static_cast<size_t>(pos + 1), 0.0);
            for (int hh = 0; hh < H; ++hh) {
                const int hs = hh * hd;
                double max_score = -std::numeric_limits<double>::infinity();
                for (int s = 0; s <= pos; ++s) {
                    double sc = dot(qrow.data() + hs, kl.data() + static_cast<size_t>(s) * D + hs, hd) *
                                inv_sqrt_hd;
                    scores[static_cast<size_t>(s)] = sc;
                    max_score = std::max(max_score, sc);
                }
                double sum = 0.0;
                for (int s = 0; s <= pos; ++s) {
                    scores[static_cast<size_t>(s)] = std::exp(scores[static_cast<size_t>(s)] - max_score);
                    sum += scores[static_cast<size_t>(s)];
                }
                double inv_sum = 1.0 / sum;
                for (int j = 0; j < hd; ++j) {
                    double acc = 0.0;
                    for (int s = 0; s <= pos; ++s)
                        acc += scores[static_cast<size_t>(s)] * vl[static_cast<size_t>(s) * D + hs + j];
                    conc[static_cast<size_t>(hs + j)] = acc * inv_sum;
                }
            }
            linear_fwd(P + off_.wo[lu], conc.data(), buf.data(), D, D);
            for (int i = 0; i < D; ++i) x[static_cast<size_t>(i)] += buf[static_cast<size_t>(i)];

            double x3[1024];
            rmsnorm_fwd(x.data(), x3, D);
            linear_fwd(P + off_.fc1[lu], x3, buf.data(), M, D);
            for (int i = 0; i < M; ++i)
                buf[static_cast<size_t>(i)] = buf[static_cast<size_t>(i)] > 0.0 ? buf[static_cast<size_t>(i)] : 0.0;
            double f2[1024];
            linear_fwd(P + off_.fc2[lu], buf.data(), f2, D, M);
            for (int i = 0; i < D; ++i) x[static_cast<size_t>(i)] += f2[i];
        }

        rmsnorm_fwd(x.data(), cache.last_hidden.data(), D);
        std::vector<double> logits(static_cast<size_t>(V));
        for (int o = 0; o < V; ++o)
            logits[static_cast<size_t>(o)] =
                dot(P + off_.lm_head + static_cast<size_t>(o) * D, cache.last_hidden.data(), D);
        out.push_back(std::move(logits));
        if (hiddens) hiddens->push_back(cache.last_hidden);
        cache.len = pos + 1;
    }
    return out;
}

std::vector<double> Model::prefill(KvCache& cache, const std::vector<int>& prompt) const {
    if (prompt.empty()) throw DataError("prefill: empty prompt");
    auto logits = extend(cache, prompt, nullptr);
    return logits.back();
}

void Model::truncate(KvCache& cache, int new_len) const {
    if (new_len < 0 || new_len > cache.len) throw ConfigError("truncate: bad length");
    cache.len = new_len;
    for (auto& kl : cache.k) kl.resize(static_cast<size_t>(new_len) * cfg_.d_model);
    for (auto& vl : cache.v) vl.resize(static_cast<size_t>(new_len) * cfg_.d_model);
    // last_hidden is left untouched; callers restore it from a saved hidden row.
}

TrainState::TrainState(Model mdl) : model(std::move(mdl)) {
    m.assign(model.n_params(), 0.0);
    v.assign(model.n_params(), 0.0);
}

void apply_grad(TrainState& state, const std::vector<double>& grad, const AdamParams& opt) {
    double lr = opt.lr;
    if (opt.warmup_steps > 0 && state.step < opt.warmup_steps) {
        lr = opt.lr * static_cast<double>(state.step + 1) / opt.warmup_steps;
    }
    if (lr > 0.0) {
        double norm_sq = 0.0;
        for (double g : grad) norm_sq += g * g;
        double norm = std::sqrt(norm_sq);
        double clip_scale = (opt.grad_clip > 0.0 && norm > opt.grad_clip) ? opt.grad_clip / norm : 1.0;

        const int64_t t = state.step + 1;
        const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
        auto& params = state.model.params();
        for (size_t i = 0; i < params.size(); ++i) {
            double g = grad[i] * clip_scale;
            state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
            state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
            double mhat = state.m[i] / bc1;
            double vhat = state.v[i] / bc2;
            params[i] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
    state.step++;
}

double train_step(TrainState& state, const std::vector<TrainItem>& batch, const AdamParams& opt) {
    std::vector<double> grad(state.model.n_params(), 0.0);
    double loss = state.model.loss_grad(batch, grad, /*normalize=*/true, state.rng_seed + state.step);
    if (!std::isfinite(loss)) {
        throw TrainingError("train_step: non-finite loss at step " + std::to_string(state.step));
    }
    apply_grad(state, grad, opt);
    return loss;
}

namespace {
constexpr char kCkptMagic[8] = {'R', 'O', 'A', 'M', 'C', 'K', 'P', '1'};

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::ifstream& in, size_t n) {
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw DataError("checkpoint: truncated parameter block");
    return v;
}
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    json header;
    header["config"] = {{"d_model", ckpt.config.d_model},       {"n_heads", ckpt.config.n_heads},
                        {"n_layers", ckpt.config.n_layers},     {"context_len", ckpt.config.context_len},
                        {"vocab_size", ckpt.config.vocab_size}, {"dropout", ckpt.config.dropout},
                        {"seed", ckpt.config.seed}};
    header["vocab_hash"] = hex64(ckpt.vocab_hash);
    header["step"] = ckpt.step;
    header["n_params"] = ckpt.params.size();
    header["has_moments"] = !ckpt.adam_m.empty();
    header["draft_n_params"] = ckpt.draft_params.size();
    std::string hs = header.dump();
    uint32_t len = static_cast<uint32_t>(hs.size());
    out.write(kCkptMagic, 8);
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    write_doubles(out, ckpt.params);
    if (!ckpt.adam_m.empty()) {
        write_doubles(out, ckpt.adam_m);
        write_doubles(out, ckpt.adam_v);
    }
    if (!ckpt.draft_params.empty()) write_doubles(out, ckpt.draft_params);
    if (!out) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path, std::optional<uint64_t> expect_vocab_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw DataError("not a roam checkpoint: " + path);
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string hs(len, '\0');
    in.read(hs.data(), len);
    if (!in) throw DataError("checkpoint: truncated header");
    json header = json::parse(hs);

    Checkpoint ckpt;
    const json& c = header.at("config");
    ckpt.config.d_model = c.at("d_model").get<int>();
    ckpt.config.n_heads = c.at("n_heads").get<int>();
    ckpt.config.n_layers = c.at("n_layers").get<int>();
    ckpt.config.context_len = c.at("context_len").get<int>();
    ckpt.config.vocab_size = c.at("vocab_size").get<int>();
    ckpt.config.dropout = c.at("dropout").get<double>();
    ckpt.config.seed = c.at("seed").get<uint64_t>();
    ckpt.vocab_hash = std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);
    ckpt.step = header.at("step").get<int64_t>();
    if (expect_vocab_hash && *expect_vocab_hash != ckpt.vocab_hash) {
        throw DataError("checkpoint vocab hash mismatch: expected " + hex64(*expect_vocab_hash) +
                        ", found " + hex64(ckpt.vocab_hash));
    }
    size_t n = header.at("n_params").get<size_t>();
    ckpt.params = read_doubles(in, n);
    if (header.at("has_moments").get<bool>()) {
        ckpt.adam_m = read_doubles(in, n);
        ckpt.adam_v = read_doubles(in, n);
    }
    size_t dn = header.at("draft_n_params").get<size_t>();
    if (dn > 0) ckpt.draft_params = read_doubles(in, dn);
    return ckpt;
}

Checkpoint make_checkpoint(const TrainState& state, uint64_t vocab_hash) {
    Checkpoint ckpt;
    ckpt.config = state.model.config();
    ckpt.vocab_hash = vocab_hash;
    ckpt.step = state.step;
    ckpt.params = state.model.params();
    ckpt.adam_m = state.m;
    ckpt.adam_v = state.v;
    return ckpt;
}

TrainState restore_state(const Checkpoint& ckpt) {
    Model model(ckpt.config);
    if (model.n_params() != ckpt.params.size())
        throw DataError("checkpoint: parameter count mismatch with config");
    model.params() = ckpt.params;
    TrainState state(std::move(model));
    if (!ckpt.adam_m.empty()) {
        state.m = ckpt.adam_m;
        state.v = ckpt.adam_v;
    }
    state.step = ckpt.step;
    return state;
}

double MarkovBaseline::transition_prob(const std::string& from, const std::string& to) const {
    auto it = transitions.find(from);
    size_t vocab = frequency.size();
    if (it == transitions.end()) return 1.0 / static_cast<double>(vocab);
    int total = 0;
    for (const auto& [k, v] : it->second) total += v;
    int count = 0;
    auto jt = it->second.find(to);
    if (jt != it->second.end()) count = jt->second;
    return static_cast<double>(count + 1) / static_cast<double>(total + vocab);
}

std::string MarkovBaseline::predict(const std::string& last_poi) const {
    if (frequency.empty()) throw DataError("markov: empty model");
    auto it = transitions.find(last_poi);
    if (it != transitions.end() && !it->second.empty()) {
        std::string best;
        int best_count = -1;
        for (const auto& [to, count] : it->second) {
            if (count > best_count) {
                best = to;
                best_count = count;
            }
        }
        return best;
    }
    std::string best;
    int best_count = -1;
    for (const auto& [poi, count] : frequency) {
        if (count > best_count) {
            best = poi;
            best_count = count;
        }
    }
    return best;
}

MarkovBaseline markov_fit(const std::vector<Trajectory>& trajectories) {
    MarkovBaseline mb;
    for (const auto& t : trajectories) {
        for (size_t i = 0; i < t.check_ins.size(); ++i) {
            mb.frequency[t.check_ins[i].poi_id]++;
            if (i + 1 < t.check_ins.size())
                mb.transitions[t.check_ins[i].poi_id][t.check_ins[i + 1].poi_id]++;
        }
    }
    if (mb.frequency.empty()) throw DataError("markov_fit: empty training set");
    return mb;
}

GradCheckReport gradcheck_model(const ModelConfig& cfg, int n_probes, uint64_t seed) {
    if (cfg.d_model > 16) throw ConfigError("gradcheck: use a tiny config (d_model <= 16)");
    Model model(cfg);
    model.init_params(seed);
    Rng rng(seed + 1);

    std::vector<TrainItem> batch;
    for (int b = 0; b < 2; ++b) {
        std::vector<int> tokens;
        int len = std::min(cfg.context_len, 8);
        for (int i = 0; i < len; ++i) tokens.push_back(rng.index(static_cast<size_t>(cfg.vocab_size)));
        batch.push_back(causal_item(tokens));
    }

    std::vector<double> grad(model.n_params(), 0.0);
    model.loss_grad(batch, grad);

    GradCheckReport report;
    report.probes = n_probes;
    const double h = 1e-5;
    auto& params = model.params();
    for (int p = 0; p < n_probes; ++p) {
        size_t idx = static_cast<size_t>(rng.below(params.size()));
        double saved = params[idx];
        params[idx] = saved + h;
        double up = model.loss(batch);
        params[idx] = saved - h;
        double down = model.loss(batch);
        params[idx] = saved;
        double fd = (up - down) / (2 * h);
        double denom = std::max({std::abs(fd), std::abs(grad[idx]), 1e-8});
        report.max_rel_err = std::max(report.max_rel_err, std::abs(fd - grad[idx]) / denom);
    }
    return report;
}

}  // namespace roam
