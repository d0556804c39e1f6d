// SPDX-License-Identifier: Apache-2.0
#include "roam/align.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "roam/corpus.hpp"
#include "roam/util.hpp"

namespace roam {

using nlohmann::json;

bool passes_hard_rules(const CognitiveScores& s) {
    return s.sas == 1 && s.pas == 1 && s.scs >= 0.05;
}

namespace {

bool violates_hard_rule(const CognitiveScores& s) {
    return s.sas == 0 || s.pas == 0 || s.scs < 0.05;
}

}  // namespace

std::vector<PreferencePair> build_pairs(const std::vector<PairContext>& contexts,
                                        const SidAssignment& sids, const Vocab& vocab,
                                        uint64_t seed) {
    std::vector<PreferencePair> out;
    Rng rng(seed);
    for (const auto& ctx : contexts) {
        if (ctx.candidates.size() < 2) continue;

        const CandidateScore* chosen = nullptr;
        if (!ctx.truth_poi.empty()) {
            for (const auto& c : ctx.candidates) {
                if (c.poi_id == ctx.truth_poi && c.scores.sas == 1 && c.scores.pas == 1) {
                    chosen = &c;
                    break;
                }
            }
        }
        if (!chosen) {
            double best_cas = -1.0;
            for (const auto& c : ctx.candidates) {
                if (!passes_hard_rules(c.scores)) continue;
                double v = cas(c.scores);
                if (v > best_cas || (v == best_cas && chosen && c.poi_id < chosen->poi_id)) {
                    best_cas = v;
                    chosen = &c;
                }
            }
        }
        if (!chosen) continue;

        std::vector<const CandidateScore*> violators;
        for (const auto& c : ctx.candidates) {
            if (c.poi_id == chosen->poi_id) continue;
            if (violates_hard_rule(c.scores)) violators.push_back(&c);
        }
        if (violators.empty()) continue;
        std::sort(violators.begin(), violators.end(),
                  [](const CandidateScore* a, const CandidateScore* b) { return a->poi_id < b->poi_id; });
        const CandidateScore* rejected = violators[rng.below(violators.size())];

        PreferencePair pair;
        pair.prompt = ctx.prompt_tokens;
        auto response_ids = [&](const std::string& poi_id) {
            std::vector<int> ids;
            for (const auto& tok : sid_tokens(sids.sid_of(poi_id))) ids.push_back(vocab.id_of(tok));
            ids.push_back(kEosId);
            return ids;
        };
        pair.chosen = response_ids(chosen->poi_id);
        pair.rejected = response_ids(rejected->poi_id);
        pair.provenance.chosen_poi = chosen->poi_id;
        pair.provenance.rejected_poi = rejected->poi_id;
        pair.provenance.chosen_scores = chosen->scores;
        pair.provenance.rejected_scores = rejected->scores;
        out.push_back(std::move(pair));
    }
    return out;
}

double dpo_loss(const Model& policy, const Model& reference, const PreferencePair& pair,
                double beta) {
    if (pair.chosen == pair.rejected) throw ConfigError("dpo_loss: chosen == rejected");
    auto seq = [&](const std::vector<int>& response) {
        std::vector<int> tokens = pair.prompt;
        tokens.insert(tokens.end(), response.begin(), response.end());
        Span span{static_cast<int>(pair.prompt.size()), static_cast<int>(tokens.size())};
        return std::make_pair(tokens, span);
    };
    auto [tok_w, span_w] = seq(pair.chosen);
    auto [tok_l, span_l] = seq(pair.rejected);
    double lpw = policy.sequence_logprob(tok_w, span_w);
    double lpl = policy.sequence_logprob(tok_l, span_l);
    double lpw_ref = reference.sequence_logprob(tok_w, span_w);
    double lpl_ref = reference.sequence_logprob(tok_l, span_l);
    if (!std::isfinite(lpw) || !std::isfinite(lpl) || !std::isfinite(lpw_ref) || !std::isfinite(lpl_ref))
        throw TrainingError("dpo_loss: non-finite sequence log-probability");
    double margin = beta * ((lpw - lpw_ref) - (lpl - lpl_ref));
    // -log sigmoid(m), computed stably.
    return margin >= 0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
}

namespace {

TrainItem weighted_span_item(const std::vector<int>& prompt, const std::vector<int>& response,
                             double weight) {
    TrainItem item;
    item.tokens = prompt;
    item.tokens.insert(item.tokens.end(), response.begin(), response.end());
    int begin = static_cast<int>(prompt.size());
    for (size_t i = 0; i < response.size(); ++i) {
        int pos = begin + static_cast<int>(i);
        if (pos == 0) continue;
        item.targets.push_back({pos - 1, response[i], weight});
    }
    return item;
}

}  // namespace

double dpo_margin_grad(const Model& policy, double ref_logp_w, double ref_logp_l,
                       const PreferencePair& pair, double beta, std::vector<double>* grad,
                       double* loss_out) {
    // Pass 1: policy log-probabilities.
    TrainItem probe_w = weighted_span_item(pair.prompt, pair.chosen, 1.0);
    TrainItem probe_l = weighted_span_item(pair.prompt, pair.rejected, 1.0);
    double lpw = -policy.loss({probe_w}, /*normalize=*/false);
    double lpl = -policy.loss({probe_l}, /*normalize=*/false);
    double margin = beta * ((lpw - ref_logp_w) - (lpl - ref_logp_l));

    double sig = 1.0 / (1.0 + std::exp(-margin));
    if (loss_out) {
        *loss_out = margin >= 0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
    }
    if (grad) {
        // dL/d lpw = (sig-1)*beta, dL/d lpl = -(sig-1)*beta. The loss engine
        // accumulates gradients of sum(w * -log p), so w = -dL/dlp.
        double g = sig - 1.0;
        TrainItem item_w = weighted_span_item(pair.prompt, pair.chosen, -g * beta);
        TrainItem item_l = weighted_span_item(pair.prompt, pair.rejected, g * beta);
        policy.loss_grad({item_w, item_l}, *grad, /*normalize=*/false);
    }
    return margin;
}

DpoTrace dpo_train(TrainState& state, const Model& reference, const std::vector<PreferencePair>& pairs,
                   const DpoConfig& config) {
    DpoTrace trace;
    if (pairs.empty()) return trace;
    if (config.beta <= 0.0) throw ConfigError("dpo_train: beta must be positive");

    // Reference log-probabilities are fixed; compute them once.
    std::vector<double> ref_w(pairs.size()), ref_l(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
        TrainItem probe_w = weighted_span_item(pairs[i].prompt, pairs[i].chosen, 1.0);
        TrainItem probe_l = weighted_span_item(pairs[i].prompt, pairs[i].rejected, 1.0);
        ref_w[i] = -reference.loss({probe_w}, false);
        ref_l[i] = -reference.loss({probe_l}, false);
    }

    AdamParams opt;
    opt.lr = config.lr;
    opt.warmup_steps = config.warmup_steps;
    opt.grad_clip = config.grad_clip;

    double prev_epoch_margin = -1e30;
    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        double margin_sum = 0.0;
        size_t i = 0;
        while (i < pairs.size()) {
            size_t end = std::min(pairs.size(), i + static_cast<size_t>(config.batch_size));
            std::vector<double> grad(state.model.n_params(), 0.0);
            for (size_t j = i; j < end; ++j) {
                double loss = 0.0;
                margin_sum += dpo_margin_grad(state.model, ref_w[j], ref_l[j], pairs[j], config.beta,
                                              &grad, &loss);
                if (!std::isfinite(loss)) throw TrainingError("dpo_train: non-finite loss");
            }
            double scale = 1.0 / static_cast<double>(end - i);
            for (double& g : grad) g *= scale;
            apply_grad(state, grad, opt);
            trace.steps++;
            i = end;
        }
        double mean_margin = margin_sum / static_cast<double>(pairs.size());
        trace.mean_margin_per_epoch.push_back(mean_margin);
        if (epoch > 0 && std::abs(mean_margin - prev_epoch_margin) < config.plateau_eps) break;
        prev_epoch_margin = mean_margin;
    }
    return trace;
}

GradCheckReport gradcheck_dpo(const ModelConfig& cfg, int n_probes, uint64_t seed, double beta) {
    if (cfg.d_model > 16) throw ConfigError("gradcheck_dpo: use a tiny config (d_model <= 16)");
    Model policy(cfg);
    policy.init_params(seed);
    Model reference(cfg);
    reference.init_params(seed + 17);

    Rng rng(seed + 2);
    PreferencePair pair;
    for (int i = 0; i < 6; ++i) pair.prompt.push_back(rng.index(static_cast<size_t>(cfg.vocab_size)));
    for (int i = 0; i < 3; ++i) pair.chosen.push_back(rng.index(static_cast<size_t>(cfg.vocab_size)));
    do {
        pair.rejected.clear();
        for (int i = 0; i < 3; ++i) pair.rejected.push_back(rng.index(static_cast<size_t>(cfg.vocab_size)));
    } while (pair.rejected == pair.chosen);

    TrainItem probe_w = weighted_span_item(pair.prompt, pair.chosen, 1.0);
    TrainItem probe_l = weighted_span_item(pair.prompt, pair.rejected, 1.0);
    double ref_w = -reference.loss({probe_w}, false);
    double ref_l = -reference.loss({probe_l}, false);

    std::vector<double> grad(policy.n_params(), 0.0);
    dpo_margin_grad(policy, ref_w, ref_l, pair, beta, &grad);

    auto loss_at = [&]() {
        double loss = 0.0;
        dpo_margin_grad(policy, ref_w, ref_l, pair, beta, nullptr, &loss);
        return loss;
    };

    GradCheckReport report;
    report.probes = n_probes;
    const double h = 1e-5;
    auto& params = policy.params();
    for (int p = 0; p < n_probes; ++p) {
        size_t idx = static_cast<size_t>(rng.below(params.size()));
        double saved = params[idx];
        params[idx] = saved + h;
        double up = loss_at();
        params[idx] = saved - h;
        double down = loss_at();
        params[idx] = saved;
        double fd = (up - down) / (2 * h);
        double denom = std::max({std::abs(fd), std::abs(grad[idx]), 1e-8});
        report.max_rel_err = std::max(report.max_rel_err, std::abs(fd - grad[idx]) / denom);
    }
    return report;
}

std::string pairs_to_jsonl(const std::vector<PreferencePair>& pairs) {
    std::ostringstream out;
    for (const auto& p : pairs) {
        json j;
        j["prompt_ids"] = p.prompt;
        j["chosen_ids"] = p.chosen;
        j["rejected_ids"] = p.rejected;
        json prov;
        prov["chosen_poi"] = p.provenance.chosen_poi;
        prov["rejected_poi"] = p.provenance.rejected_poi;
        auto scores_json = [](const CognitiveScores& s) {
            json sj;
            if (s.tcs) sj["tcs"] = *s.tcs;
            sj["scs"] = s.scs;
            sj["pas"] = s.pas;
            sj["sas"] = s.sas;
            return sj;
        };
        prov["chosen_scores"] = scores_json(p.provenance.chosen_scores);
        prov["rejected_scores"] = scores_json(p.provenance.rejected_scores);
        j["provenance"] = prov;
        out << j.dump() << "\n";
    }
    return out.str();
}

std::vector<PreferencePair> pairs_from_jsonl(const std::string& text) {
    std::vector<PreferencePair> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        PreferencePair p;
        p.prompt = j.at("prompt_ids").get<std::vector<int>>();
        p.chosen = j.at("chosen_ids").get<std::vector<int>>();
        p.rejected = j.at("rejected_ids").get<std::vector<int>>();
        const json& prov = j.at("provenance");
        p.provenance.chosen_poi = prov.at("chosen_poi").get<std::string>();
        p.provenance.rejected_poi = prov.at("rejected_poi").get<std::string>();
        auto parse_scores = [](const json& sj) {
            CognitiveScores s;
            if (sj.contains("tcs")) s.tcs = sj.at("tcs").get<double>();
            s.scs = sj.at("scs").get<double>();
            s.pas = sj.at("pas").get<int>();
            s.sas = sj.at("sas").get<int>();
            return s;
        };
        p.provenance.chosen_scores = parse_scores(prov.at("chosen_scores"));
        p.provenance.rejected_scores = parse_scores(prov.at("rejected_scores"));
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace roam
