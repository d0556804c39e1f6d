// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "roam/cognition.hpp"
#include "roam/model.hpp"
#include "roam/sid.hpp"

namespace roam {

struct PairProvenance {
    std::string chosen_poi;
    std::string rejected_poi;
    CognitiveScores chosen_scores;
    CognitiveScores rejected_scores;
};

struct PreferencePair {
    std::vector<int> prompt;    // token ids, ends with <sep>
    std::vector<int> chosen;    // response token ids incl. <eos>
    std::vector<int> rejected;  // response token ids incl. <eos>
    PairProvenance provenance;
};

struct DpoConfig {
    double beta = 0.1;
    double lr = 1e-4;
    int max_epochs = 4;
    int batch_size = 4;
    double plateau_eps = 1e-3;
    int warmup_steps = 0;
    double grad_clip = 1.0;
};

struct CandidateScore {
    std::string poi_id;
    CognitiveScores scores;
};

struct PairContext {
    std::vector<int> prompt_tokens;
    std::string truth_poi;  // empty when unknown
    std::vector<CandidateScore> candidates;
};

// A candidate passes the hard rules when sas = 1, pas = 1 and scs >= 0.05.
bool passes_hard_rules(const CognitiveScores& s);

// Chosen side: the ground truth when it passes (sas and pas), otherwise the
// highest-cas rule-passing candidate. Rejected side: a hard-rule violator
// sampled deterministically by seed. Contexts without both sides yield no pair.
std::vector<PreferencePair> build_pairs(const std::vector<PairContext>& contexts,
                                        const SidAssignment& sids, const Vocab& vocab,
                                        uint64_t seed);

// Standard DPO loss with log-ratios inside the sigmoid; sequence log
// probabilities are summed over response tokens only.
double dpo_loss(const Model& policy, const Model& reference, const PreferencePair& pair,
                double beta);

// Margin beta * [(logp_w - logp_w_ref) - (logp_l - logp_l_ref)], plus the loss
// gradient accumulated into `grad` when non-null.
double dpo_margin_grad(const Model& policy, double ref_logp_w, double ref_logp_l,
                       const PreferencePair& pair, double beta, std::vector<double>* grad,
                       double* loss_out = nullptr);

struct DpoTrace {
    std::vector<double> mean_margin_per_epoch;
    int steps = 0;
};

// Policy starts from (a copy of) the SFT checkpoint; `reference` stays frozen.
DpoTrace dpo_train(TrainState& state, const Model& reference, const std::vector<PreferencePair>& pairs,
                   const DpoConfig& config);

GradCheckReport gradcheck_dpo(const ModelConfig& cfg, int n_probes, uint64_t seed, double beta = 0.1);

std::string pairs_to_jsonl(const std::vector<PreferencePair>& pairs);
std::vector<PreferencePair> pairs_from_jsonl(const std::string& text);

}  // namespace roam
