// SPDX-License-Identifier: Apache-2.0
#include "roam/serve.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <limits>
#include <mutex>
#include <queue>
#include <thread>

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

using Clock = std::chrono::steady_clock;

namespace {
double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}
}  // namespace

SidTrie SidTrie::build(const SidAssignment& sids, const Vocab& vocab) {
    SidTrie trie;
    trie.nodes_.push_back(Node{});
    for (const auto& [rendered, poi_id] : sids.to_poi) {
        auto sid = parse_sid(rendered);
        if (!sid) throw DataError("trie: unparsable SID " + rendered);
        int cur = 0;
        for (const auto& tok : sid_tokens(*sid)) {
            int id = vocab.id_of(tok);
            auto it = trie.nodes_[static_cast<size_t>(cur)].children.find(id);
            if (it == trie.nodes_[static_cast<size_t>(cur)].children.end()) {
                if (trie.nodes_[static_cast<size_t>(cur)].poi >= 0)
                    throw DataError("trie: SID path runs through a leaf at " + rendered);
                int next = static_cast<int>(trie.nodes_.size());
                trie.nodes_[static_cast<size_t>(cur)].children.emplace(id, next);
                trie.nodes_.push_back(Node{});
                cur = next;
            } else {
                cur = it->second;
            }
        }
        Node& leaf = trie.nodes_[static_cast<size_t>(cur)];
        if (leaf.poi >= 0 || !leaf.children.empty())
            throw DataError("trie: duplicate or prefix-overlapping SID path " + rendered);
        leaf.poi = static_cast<int>(trie.poi_ids_.size());
        trie.poi_ids_.push_back(poi_id);
    }
    if (trie.poi_ids_.empty()) throw DataError("trie: empty SID map");
    return trie;
}

int SidTrie::child(int idx, int token) const {
    const auto& ch = node(idx).children;
    auto it = ch.find(token);
    return it == ch.end() ? -1 : it->second;
}

int constrained_greedy(const std::vector<double>& logits, const SidTrie& trie, int node) {
    const auto& children = trie.node(node).children;
    if (children.empty()) throw ConfigError("constrained_greedy: node has no children");
    int best = -1;
    double best_logit = -std::numeric_limits<double>::infinity();
    for (const auto& [token, child] : children) {
        double v = logits[static_cast<size_t>(token)];
        if (v > best_logit) {
            best_logit = v;
            best = token;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Draft head
// ---------------------------------------------------------------------------

namespace {
struct DraftOffsets {
    size_t wc = 0, wq = 0, wk = 0, wv = 0, wo = 0, fc1 = 0, fc2 = 0, total = 0;
    explicit DraftOffsets(int d) {
        size_t dd = static_cast<size_t>(d) * d;
        wc = 0;
        wq = wc + 2 * dd;
        wk = wq + dd;
        wv = wk + dd;
        wo = wv + dd;
        fc1 = wo + dd;
        fc2 = fc1 + 4 * dd;
        total = fc2 + 4 * dd;
    }
};
}  // namespace

struct DraftHead::StepTrace {
    std::vector<double> f_in, u, x1, q, conc, u2, x3, fc1post, out, h_d;
    double inv_u = 0, inv_m = 0, inv_f = 0;
    std::vector<double> attw;  // per head, over chain rows
};

DraftHead::DraftHead(const Model& target) : target_(&target) {
    DraftOffsets off(target.config().d_model);
    params_.assign(off.total, 0.0);
    cur_hidden_.assign(static_cast<size_t>(target.config().d_model), 0.0);
}

void DraftHead::init_params(uint64_t seed, double init_std) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, init_std);
    for (double& p : params_) p = nd(rng);
}

void DraftHead::step(int token, const std::vector<double>& hidden, std::vector<double>& logits_out,
                     std::vector<double>& hidden_out, StepTrace* trace) {
    const ModelConfig& cfg = target_->config();
    const int D = cfg.d_model;
    const int H = cfg.n_heads;
    const int hd = cfg.head_dim();
    const int M = cfg.mlp_hidden();
    const int V = cfg.vocab_size;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    DraftOffsets off(D);
    const double* P = params_.data();

    std::vector<double> f_in(static_cast<size_t>(2 * D));
    std::copy(hidden.begin(), hidden.end(), f_in.begin());
    const double* wte_row = target_->wte_row(token);
    std::copy(wte_row, wte_row + D, f_in.begin() + D);

    std::vector<double> u(static_cast<size_t>(D));
    linear_fwd(P + off.wc, f_in.data(), u.data(), D, 2 * D);

    std::vector<double> x1(static_cast<size_t>(D));
    double inv_u = rmsnorm_fwd(u.data(), x1.data(), D);
    std::vector<double> q(static_cast<size_t>(D)), krow(static_cast<size_t>(D)), vrow(static_cast<size_t>(D));
    linear_fwd(P + off.wq, x1.data(), q.data(), D, D);
    linear_fwd(P + off.wk, x1.data(), krow.data(), D, D);
    linear_fwd(P + off.wv, x1.data(), vrow.data(), D, D);
    chain_k_.insert(chain_k_.end(), krow.begin(), krow.end());
    chain_v_.insert(chain_v_.end(), vrow.begin(), vrow.end());
    chain_len_++;
    const int n = chain_len_;

    std::vector<double> conc(static_cast<size_t>(D));
    std::vector<double> attw(static_cast<size_t>(H) * n);
    for (int hh = 0; hh < H; ++hh) {
        const int hs = hh * hd;
        double* aw = attw.data() + static_cast<size_t>(hh) * n;
        double max_score = -std::numeric_limits<double>::infinity();
        for (int s = 0; s < n; ++s) {
            double sc = dot(q.data() + hs, chain_k_.data() + static_cast<size_t>(s) * D + hs, hd) *
                        inv_sqrt_hd;
            aw[s] = sc;
            max_score = std::max(max_score, sc);
        }
        double sum = 0.0;
        for (int s = 0; s < n; ++s) {
            aw[s] = std::exp(aw[s] - max_score);
            sum += aw[s];
        }
        for (int s = 0; s < n; ++s) aw[s] /= sum;
        for (int j = 0; j < hd; ++j) {
            double acc = 0.0;
            for (int s = 0; s < n; ++s) acc += aw[s] * chain_v_[static_cast<size_t>(s) * D + hs + j];
            conc[static_cast<size_t>(hs + j)] = acc;
        }
    }

    std::vector<double> u2(static_cast<size_t>(D));
    {
        std::vector<double> proj(static_cast<size_t>(D));
        linear_fwd(P + off.wo, conc.data(), proj.data(), D, D);
        for (int i = 0; i < D; ++i) u2[static_cast<size_t>(i)] = u[static_cast<size_t>(i)] + proj[static_cast<size_t>(i)];
    }

    std::vector<double> x3(static_cast<size_t>(D));
    double inv_m = rmsnorm_fwd(u2.data(), x3.data(), D);
    std::vector<double> fc1post(static_cast<size_t>(M));
    linear_fwd(P + off.fc1, x3.data(), fc1post.data(), M, D);
    for (int i = 0; i < M; ++i)
        fc1post[static_cast<size_t>(i)] = fc1post[static_cast<size_t>(i)] > 0.0 ? fc1post[static_cast<size_t>(i)] : 0.0;
    std::vector<double> out(static_cast<size_t>(D));
    {
        std::vector<double> f2(static_cast<size_t>(D));
        linear_fwd(P + off.fc2, fc1post.data(), f2.data(), D, M);
        for (int i = 0; i < D; ++i) out[static_cast<size_t>(i)] = u2[static_cast<size_t>(i)] + f2[static_cast<size_t>(i)];
    }

    hidden_out.assign(static_cast<size_t>(D), 0.0);
    double inv_f = rmsnorm_fwd(out.data(), hidden_out.data(), D);

    logits_out.assign(static_cast<size_t>(V), 0.0);
    for (int o = 0; o < V; ++o)
        logits_out[static_cast<size_t>(o)] = dot(target_->lm_head_row(o), hidden_out.data(), D);

    if (trace) {
        trace->f_in = std::move(f_in);
        trace->u = std::move(u);
        trace->x1 = std::move(x1);
        trace->q = std::move(q);
        trace->conc = std::move(conc);
        trace->u2 = std::move(u2);
        trace->x3 = std::move(x3);
        trace->fc1post = std::move(fc1post);
        trace->out = std::move(out);
        trace->h_d = hidden_out;
        trace->inv_u = inv_u;
        trace->inv_m = inv_m;
        trace->inv_f = inv_f;
        trace->attw = std::move(attw);
    }
}

void DraftHead::begin_round(const std::vector<int>& prefix_with_next,
                            const std::vector<double>& prev_hidden) {
    chain_k_.clear();
    chain_v_.clear();
    chain_len_ = 0;
    cur_token_ = prefix_with_next.back();
    cur_hidden_ = prev_hidden;
}

int DraftHead::next(const SidTrie& trie, int trie_node) {
    std::vector<double> logits, h_out;
    step(cur_token_, cur_hidden_, logits, h_out, nullptr);
    int tok = constrained_greedy(logits, trie, trie_node);
    cur_token_ = tok;
    cur_hidden_ = std::move(h_out);
    return tok;
}

namespace {

struct DistillSample {
    // One teacher-forced chain: inputs are gold tokens and target hiddens,
    // labels are the target's own argmax choices.
    std::vector<int> tokens;
    std::vector<std::vector<double>> hiddens;
    std::vector<int> labels;
};

std::vector<DistillSample> collect_distill_samples(const Model& target,
                                                   const std::vector<CorpusRecord>& records) {
    std::vector<DistillSample> samples;
    for (const auto& r : records) {
        if (r.kind != RecordKind::sft) continue;
        if (r.response.size() < 2) continue;
        std::vector<std::vector<double>> hiddens;
        auto probs = target.forward_probs(r.tokens, &hiddens);
        DistillSample s;
        for (int i = r.response.begin; i + 1 < r.response.end; ++i) {
            s.tokens.push_back(r.tokens[static_cast<size_t>(i)]);
            s.hiddens.push_back(hiddens[static_cast<size_t>(i - 1)]);
            const auto& row = probs[static_cast<size_t>(i)];
            s.labels.push_back(static_cast<int>(
                std::max_element(row.begin(), row.end()) - row.begin()));
        }
        if (!s.tokens.empty()) samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace

double DraftHead::distill(const std::vector<CorpusRecord>& records, int epochs, double lr,
                          uint64_t seed) {
    const ModelConfig& cfg = target_->config();
    const int D = cfg.d_model;
    const int H = cfg.n_heads;
    const int hd = cfg.head_dim();
    const int M = cfg.mlp_hidden();
    const int V = cfg.vocab_size;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    DraftOffsets off(D);

    auto samples = collect_distill_samples(*target_, records);
    if (samples.empty()) throw DataError("draft distill: no usable records");
    init_params(seed);

    std::vector<double> m(params_.size(), 0.0), v(params_.size(), 0.0);
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t step_count = 0;
    double last_epoch_ce = 0.0;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        double ce_sum = 0.0;
        size_t ce_count = 0;
        for (const auto& sample : samples) {
            const int n = static_cast<int>(sample.tokens.size());
            chain_k_.clear();
            chain_v_.clear();
            chain_len_ = 0;
            std::vector<StepTrace> traces(static_cast<size_t>(n));
            std::vector<std::vector<double>> dh(static_cast<size_t>(n));
            std::vector<double> logits, h_out;
            for (int i = 0; i < n; ++i) {
                step(sample.tokens[static_cast<size_t>(i)], sample.hiddens[static_cast<size_t>(i)],
                     logits, h_out, &traces[static_cast<size_t>(i)]);
                // softmax CE against the teacher argmax label
                double max_logit = *std::max_element(logits.begin(), logits.end());
                double sum = 0.0;
                for (double& z : logits) {
                    z = std::exp(z - max_logit);
                    sum += z;
                }
                int label = sample.labels[static_cast<size_t>(i)];
                double p = logits[static_cast<size_t>(label)] / sum;
                ce_sum += -std::log(std::max(p, 1e-300));
                ce_count++;
                dh[static_cast<size_t>(i)].assign(static_cast<size_t>(D), 0.0);
                for (int o = 0; o < V; ++o) {
                    double dlogit = logits[static_cast<size_t>(o)] / sum;
                    if (o == label) dlogit -= 1.0;
                    dlogit /= static_cast<double>(n);
                    if (dlogit == 0.0) continue;
                    const double* row = target_->lm_head_row(o);
                    for (int d = 0; d < D; ++d) dh[static_cast<size_t>(i)][static_cast<size_t>(d)] += row[d] * dlogit;
                }
            }

            // Backward through the chain.
            std::vector<double> grad(params_.size(), 0.0);
            const double* P = params_.data();
            double* G = grad.data();
            std::vector<std::vector<double>> dK(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(D), 0.0));
            std::vector<std::vector<double>> dV(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(D), 0.0));
            std::vector<double> du_carry(static_cast<size_t>(n) * D, 0.0);

            for (int i = n - 1; i >= 0; --i) {
                StepTrace& tr = traces[static_cast<size_t>(i)];
                std::vector<double> dout(static_cast<size_t>(D), 0.0);
                rmsnorm_bwd(dh[static_cast<size_t>(i)].data(), tr.out.data(), tr.inv_f, dout.data(), D);

                std::vector<double> du2 = dout;  // residual
                std::vector<double> df1(static_cast<size_t>(M), 0.0);
                linear_bwd(P + off.fc2, tr.fc1post.data(), dout.data(), G + off.fc2, df1.data(), D, M);
                for (int k = 0; k < M; ++k)
                    if (tr.fc1post[static_cast<size_t>(k)] <= 0.0) df1[static_cast<size_t>(k)] = 0.0;
                std::vector<double> dx3(static_cast<size_t>(D), 0.0);
                linear_bwd(P + off.fc1, tr.x3.data(), df1.data(), G + off.fc1, dx3.data(), M, D);
                rmsnorm_bwd(dx3.data(), tr.u2.data(), tr.inv_m, du2.data(), D);

                std::vector<double> du = du2;  // residual into u
                std::vector<double> dconc(static_cast<size_t>(D), 0.0);
                linear_bwd(P + off.wo, tr.conc.data(), du2.data(), G + off.wo, dconc.data(), D, D);

                std::vector<double> dq(static_cast<size_t>(D), 0.0);
                for (int hh = 0; hh < H; ++hh) {
                    const int hs = hh * hd;
                    const double* aw = tr.attw.data() + static_cast<size_t>(hh) * (i + 1);
                    std::vector<double> dscore(static_cast<size_t>(i + 1), 0.0);
                    for (int s = 0; s <= i; ++s) {
                        const double* vs = chain_v_.data() + static_cast<size_t>(s) * D + hs;
                        for (int j = 0; j < hd; ++j)
                            dV[static_cast<size_t>(s)][static_cast<size_t>(hs + j)] +=
                                aw[s] * dconc[static_cast<size_t>(hs + j)];
                        dscore[static_cast<size_t>(s)] = dot(dconc.data() + hs, vs, hd);
                    }
                    double sum_dw = 0.0;
                    for (int s = 0; s <= i; ++s) sum_dw += dscore[static_cast<size_t>(s)] * aw[s];
                    for (int s = 0; s <= i; ++s)
                        dscore[static_cast<size_t>(s)] = aw[s] * (dscore[static_cast<size_t>(s)] - sum_dw);
                    for (int s = 0; s <= i; ++s) {
                        double dsc = dscore[static_cast<size_t>(s)] * inv_sqrt_hd;
                        const double* ks = chain_k_.data() + static_cast<size_t>(s) * D + hs;
                        for (int j = 0; j < hd; ++j) {
                            dq[static_cast<size_t>(hs + j)] += dsc * ks[j];
                            dK[static_cast<size_t>(s)][static_cast<size_t>(hs + j)] +=
                                dsc * tr.q[static_cast<size_t>(hs + j)];
                        }
                    }
                }

                std::vector<double> dx1(static_cast<size_t>(D), 0.0);
                linear_bwd(P + off.wq, tr.x1.data(), dq.data(), G + off.wq, dx1.data(), D, D);
                linear_bwd(P + off.wk, tr.x1.data(), dK[static_cast<size_t>(i)].data(), G + off.wk, dx1.data(), D, D);
                linear_bwd(P + off.wv, tr.x1.data(), dV[static_cast<size_t>(i)].data(), G + off.wv, dx1.data(), D, D);
                rmsnorm_bwd(dx1.data(), tr.u.data(), tr.inv_u, du.data(), D);
                for (int d = 0; d < D; ++d) du_carry[static_cast<size_t>(i) * D + d] += du[static_cast<size_t>(d)];
                std::vector<double> df_in(static_cast<size_t>(2 * D), 0.0);
                linear_bwd(P + off.wc, tr.f_in.data(), du_carry.data() + static_cast<size_t>(i) * D,
                           G + off.wc, df_in.data(), D, 2 * D);
                // gradients into the frozen target hidden/embedding stop here
            }
            // Earlier positions' k/v rows feed later attention; their grads were
            // accumulated in dK/dV above and applied in the same sweep (each
            // position backward consumed its own dK/dV row after later rows
            // contributed), so nothing further to do.

            double norm_sq = 0.0;
            for (double g : grad) norm_sq += g * g;
            double clip = std::sqrt(norm_sq) > 1.0 ? 1.0 / std::sqrt(norm_sq) : 1.0;
            step_count++;
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
            for (size_t k = 0; k < params_.size(); ++k) {
                double g = grad[k] * clip;
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                params_[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps);
            }
        }
        last_epoch_ce = ce_count > 0 ? ce_sum / static_cast<double>(ce_count) : 0.0;
    }
    chain_k_.clear();
    chain_v_.clear();
    chain_len_ = 0;
    return last_epoch_ce;
}

double DraftHead::agreement(const std::vector<CorpusRecord>& records) const {
    auto samples = collect_distill_samples(*target_, records);
    if (samples.empty()) return 0.0;
    DraftHead probe = *this;
    size_t match = 0, total = 0;
    std::vector<double> logits, h_out;
    for (const auto& s : samples) {
        probe.chain_k_.clear();
        probe.chain_v_.clear();
        probe.chain_len_ = 0;
        for (size_t i = 0; i < s.tokens.size(); ++i) {
            probe.step(s.tokens[i], s.hiddens[i], logits, h_out, nullptr);
            int argmax = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
            if (argmax == s.labels[i]) match++;
            total++;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(match) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

PrefillOutput prefill_stage(const Model& model, const std::vector<int>& prompt) {
    PrefillOutput out;
    auto t0 = Clock::now();
    out.cache = model.make_cache();
    out.last_logits = model.prefill(out.cache, prompt);
    out.prefill_ms = ms_since(t0);
    out.prompt = prompt;
    return out;
}

GenerateResult decode_stage(const Model& model, const SidTrie& trie, PrefillOutput prefilled,
                            int max_new_tokens, Drafter* drafter, int gamma) {
    GenerateResult res;
    res.timing.prefill_ms = prefilled.prefill_ms;
    if (max_new_tokens <= 0) return res;

    auto t0 = Clock::now();
    KvCache cache = std::move(prefilled.cache);
    std::vector<double> logits = std::move(prefilled.last_logits);
    std::vector<double> hidden_prev = cache.last_hidden;

    int node = trie.root();
    int t_next = constrained_greedy(logits, trie, node);

    while (true) {
        res.tokens.push_back(t_next);
        node = trie.child(node, t_next);
        if (node < 0) throw DataError("decode: emitted token leaves the trie");
        if (trie.is_leaf(node)) {
            res.poi_id = trie.poi_at(node);
            break;
        }
        if (static_cast<int>(res.tokens.size()) >= max_new_tokens) break;

        if (!drafter || gamma < 2) {
            logits = model.extend(cache, {t_next}).back();
            hidden_prev = cache.last_hidden;
            t_next = constrained_greedy(logits, trie, node);
            continue;
        }

        // Speculative round: verify [t_next, d2..dγ] in one batched pass.
        res.draft_rounds++;
        std::vector<int> prefix = prefilled.prompt;
        prefix.insert(prefix.end(), res.tokens.begin(), res.tokens.end());
        drafter->begin_round(prefix, hidden_prev);

        std::vector<int> drafts = {t_next};
        int sim_node = node;
        while (static_cast<int>(drafts.size()) < gamma && !trie.is_leaf(sim_node)) {
            int d = drafter->next(trie, sim_node);
            sim_node = trie.child(sim_node, d);
            if (sim_node < 0) throw DataError("decode: draft token leaves the trie");
            drafts.push_back(d);
        }
        res.proposed_drafts += static_cast<int>(drafts.size()) - 1;

        const int base_len = cache.len;
        std::vector<std::vector<double>> hiddens;
        auto logit_rows = model.extend(cache, drafts, &hiddens);

        int cur = node;
        bool resume_outer = false;
        size_t j = 1;
        for (; j < drafts.size(); ++j) {
            int true_tok = constrained_greedy(logit_rows[j - 1], trie, cur);
            if (drafts[j] == true_tok) {
                res.accepted_drafts++;
                res.tokens.push_back(true_tok);
                cur = trie.child(cur, true_tok);
                if (trie.is_leaf(cur)) {
                    res.poi_id = trie.poi_at(cur);
                    break;
                }
                if (static_cast<int>(res.tokens.size()) >= max_new_tokens) break;
            } else {
                model.truncate(cache, base_len + static_cast<int>(j));
                cache.last_hidden = hiddens[j - 1];
                hidden_prev = hiddens[j - 1];
                t_next = true_tok;
                node = cur;
                resume_outer = true;
                break;
            }
        }
        if (resume_outer) continue;
        if (!res.poi_id.empty() || static_cast<int>(res.tokens.size()) >= max_new_tokens) break;
        // All drafts accepted: the final verified logits give the next token.
        hidden_prev = hiddens.back();
        t_next = constrained_greedy(logit_rows.back(), trie, cur);
        node = cur;
    }
    res.timing.decode_ms = ms_since(t0);
    return res;
}

GenerateResult generate(const Model& model, const SidTrie& trie, const std::vector<int>& prompt,
                        int max_new_tokens, Drafter* drafter, int gamma) {
    return decode_stage(model, trie, prefill_stage(model, prompt), max_new_tokens, drafter, gamma);
}

// ---------------------------------------------------------------------------
// Two-stage pipeline
// ---------------------------------------------------------------------------

namespace {

template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(size_t capacity) : cap_(capacity) {}

    void push(T item) {
        std::unique_lock<std::mutex> lock(mu_);
        cv_push_.wait(lock, [&] { return q_.size() < cap_; });
        q_.push(std::move(item));
        cv_pop_.notify_one();
    }

    bool pop(T& out) {
        std::unique_lock<std::mutex> lock(mu_);
        cv_pop_.wait(lock, [&] { return !q_.empty() || closed_; });
        if (q_.empty()) return false;
        out = std::move(q_.front());
        q_.pop();
        cv_push_.notify_one();
        return true;
    }

    void close() {
        std::lock_guard<std::mutex> lock(mu_);
        closed_ = true;
        cv_pop_.notify_all();
    }

private:
    std::queue<T> q_;
    std::mutex mu_;
    std::condition_variable cv_push_, cv_pop_;
    size_t cap_;
    bool closed_ = false;
};

LatencyStats stats_from(const std::vector<PipelineResult>& results, double wall_ms) {
    LatencyStats st;
    st.wall_ms = wall_ms;
    if (results.empty()) return st;
    std::vector<double> lat;
    size_t tokens = 0;
    long accepted = 0, proposed = 0;
    for (const auto& r : results) {
        lat.push_back(r.latency_ms);
        tokens += r.tokens.size();
        accepted += r.accepted_drafts;
        proposed += r.proposed_drafts;
    }
    std::sort(lat.begin(), lat.end());
    auto pct = [&](double p) {
        size_t idx = static_cast<size_t>(p * static_cast<double>(lat.size() - 1));
        return lat[idx];
    };
    st.p50_ms = pct(0.50);
    st.p99_ms = pct(0.99);
    double wall_s = wall_ms / 1000.0;
    if (wall_s > 0) {
        st.tokens_per_sec = static_cast<double>(tokens) / wall_s;
        st.requests_per_sec = static_cast<double>(results.size()) / wall_s;
    }
    st.acceptance_rate = proposed > 0 ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0;
    return st;
}

PipelineResult finish_result(const PipelineRequest& req, GenerateResult&& gen, double latency_ms) {
    PipelineResult r;
    r.id = req.id;
    r.tokens = std::move(gen.tokens);
    r.poi_id = std::move(gen.poi_id);
    r.timing = gen.timing;
    r.latency_ms = latency_ms;
    r.accepted_drafts = gen.accepted_drafts;
    r.proposed_drafts = gen.proposed_drafts;
    return r;
}

}  // namespace

std::string LatencyStats::to_json() const {
    json j;
    j["p50_ms"] = p50_ms;
    j["p99_ms"] = p99_ms;
    j["tokens_per_sec"] = tokens_per_sec;
    j["requests_per_sec"] = requests_per_sec;
    j["acceptance_rate"] = acceptance_rate;
    j["wall_ms"] = wall_ms;
    return j.dump();
}

std::vector<PipelineResult> run_pipeline(const Model& model, const SidTrie& trie,
                                         const DraftHead* draft, int gamma,
                                         const std::vector<PipelineRequest>& requests,
                                         int prefill_workers, int decode_workers,
                                         int queue_capacity, LatencyStats* stats) {
    if (prefill_workers < 1 || decode_workers < 1)
        throw ConfigError("run_pipeline: need at least one worker per stage");
    const size_t n = requests.size();
    std::vector<PipelineResult> results(n);

    struct Handoff {
        size_t index = 0;
        PrefillOutput prefilled;
    };
    BoundedQueue<Handoff> queue(static_cast<size_t>(std::max(1, queue_capacity)));
    std::atomic<size_t> next_req{0};
    std::atomic<int> live_producers{prefill_workers};

    auto t0 = Clock::now();

    std::vector<std::thread> threads;
    for (int w = 0; w < prefill_workers; ++w) {
        threads.emplace_back([&] {
            while (true) {
                size_t i = next_req.fetch_add(1);
                if (i >= n) break;
                Handoff h;
                h.index = i;
                h.prefilled = prefill_stage(model, requests[i].prompt);
                queue.push(std::move(h));
            }
            if (live_producers.fetch_sub(1) == 1) queue.close();
        });
    }
    for (int w = 0; w < decode_workers; ++w) {
        threads.emplace_back([&] {
            // Each decode worker owns a private drafter copy: the chain state
            // is mutable, the underlying parameters are shared read-only.
            std::unique_ptr<DraftHead> local_draft;
            if (draft) local_draft = std::make_unique<DraftHead>(*draft);
            Handoff h;
            while (queue.pop(h)) {
                const PipelineRequest& req = requests[h.index];
                Drafter* d = req.speculative && local_draft ? local_draft.get() : nullptr;
                GenerateResult gen =
                    decode_stage(model, trie, std::move(h.prefilled), req.max_new_tokens, d, gamma);
                results[h.index] = finish_result(req, std::move(gen), ms_since(t0));
            }
        });
    }
    for (auto& t : threads) t.join();
    double wall = ms_since(t0);
    if (stats) *stats = stats_from(results, wall);
    return results;
}

std::vector<PipelineResult> run_serial(const Model& model, const SidTrie& trie,
                                       const DraftHead* draft, int gamma,
                                       const std::vector<PipelineRequest>& requests,
                                       LatencyStats* stats) {
    std::vector<PipelineResult> results(requests.size());
    std::unique_ptr<DraftHead> local_draft;
    if (draft) local_draft = std::make_unique<DraftHead>(*draft);
    auto t0 = Clock::now();
    for (size_t i = 0; i < requests.size(); ++i) {
        const auto& req = requests[i];
        Drafter* d = req.speculative && local_draft ? local_draft.get() : nullptr;
        GenerateResult gen = generate(model, trie, req.prompt, req.max_new_tokens, d, gamma);
        results[i] = finish_result(req, std::move(gen), ms_since(t0));
    }
    double wall = ms_since(t0);
    if (stats) *stats = stats_from(results, wall);
    return results;
}

}  // namespace roam
