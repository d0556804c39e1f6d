// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "roam/corpus.hpp"

namespace roam {

struct ModelConfig {
    int d_model = 128;
    int n_heads = 4;
    int n_layers = 4;
    int context_len = 512;
    int vocab_size = 0;
    double dropout = 0.0;
    uint64_t seed = 0;

    void validate() const;
    int head_dim() const { return d_model / n_heads; }
    int mlp_hidden() const { return 4 * d_model; }
};

// Closed-form parameter count: wte + wpe + lm_head + 12*L*D^2 for the blocks.
size_t param_count(const ModelConfig& cfg);

struct TargetAt {
    int pos = 0;     // output position whose distribution is scored
    int token = 0;   // expected token id
    double weight = 1.0;
};

struct TrainItem {
    std::vector<int> tokens;
    std::vector<TargetAt> targets;
};

TrainItem causal_item(const std::vector<int>& tokens);
TrainItem masked_item(const MaskedRecord& masked);
TrainItem span_item(const CorpusRecord& record);  // response-span-only loss

// Attention K/V rows for a processed prefix plus the final-norm hidden state
// of the last processed position.
struct KvCache {
    int len = 0;
    std::vector<std::vector<double>> k;  // [layer][pos * d_model + i]
    std::vector<std::vector<double>> v;
    std::vector<double> last_hidden;
};

class Model {
public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    size_t n_params() const { return params_.size(); }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    void init_params(uint64_t seed, double init_std = 0.08);

    // Shared-weight access for the speculative draft head.
    const double* wte_row(int token) const;
    const double* lm_head_row(int output) const;

    // Per-position next-token distributions for the whole sequence. The
    // optional out-parameter receives the final-norm hidden states.
    std::vector<std::vector<double>> forward_probs(
        const std::vector<int>& tokens, std::vector<std::vector<double>>* hiddens = nullptr) const;

    // Mean NLL over the weighted targets (normalize=true), or the raw
    // weighted sum of -log p (normalize=false). loss_grad accumulates
    // d(objective)/d(params) into `grad` (same normalization).
    double loss(const std::vector<TrainItem>& batch, bool normalize = true) const;
    double loss_grad(const std::vector<TrainItem>& batch, std::vector<double>& grad,
                     bool normalize = true, uint64_t dropout_seed = 0) const;

    double sequence_logprob(const std::vector<int>& tokens, const Span& response) const;

    // Incremental inference. extend() appends tokens to the cache and returns
    // the logits after each appended token; `hiddens` receives the matching
    // final-norm hidden rows when non-null.
    KvCache make_cache() const;
    std::vector<std::vector<double>> extend(KvCache& cache, const std::vector<int>& tokens,
                                            std::vector<std::vector<double>>* hiddens = nullptr) const;
    std::vector<double> prefill(KvCache& cache, const std::vector<int>& prompt) const;
    void truncate(KvCache& cache, int new_len) const;

private:
    struct Offsets {
        size_t wte = 0, wpe = 0, lm_head = 0;
        std::vector<size_t> wq, wk, wv, wo, fc1, fc2;
        size_t total = 0;
    };
    ModelConfig cfg_;
    Offsets off_;
    std::vector<double> params_;

    friend class DraftHead;
    struct Activations;
    void forward_item(const std::vector<int>& tokens, Activations& acts) const;
};

struct AdamParams {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int warmup_steps = 20;
    double grad_clip = 1.0;
};

struct TrainState {
    Model model;
    std::vector<double> m;
    std::vector<double> v;
    int64_t step = 0;
    uint64_t rng_seed = 0;

    explicit TrainState(Model mdl);
};

// One optimizer step: linear warm-up to a constant rate, global-norm clip,
// Adam update. Throws TrainingError on a non-finite loss.
double train_step(TrainState& state, const std::vector<TrainItem>& batch, const AdamParams& opt);

// Applies an externally computed gradient (clip + warm-up + Adam + step++).
void apply_grad(TrainState& state, const std::vector<double>& grad, const AdamParams& opt);

// Checkpoint container: model config + vocab fingerprint + parameters +
// optimizer moments, plus the optional speculative draft head.
struct Checkpoint {
    ModelConfig config;
    uint64_t vocab_hash = 0;
    int64_t step = 0;
    std::vector<double> params;
    std::vector<double> adam_m;
    std::vector<double> adam_v;
    std::vector<double> draft_params;  // empty when no draft head was trained
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path, std::optional<uint64_t> expect_vocab_hash);

Checkpoint make_checkpoint(const TrainState& state, uint64_t vocab_hash);
TrainState restore_state(const Checkpoint& ckpt);

struct MarkovBaseline {
    std::map<std::string, std::map<std::string, int>> transitions;
    std::map<std::string, int> frequency;

    // Row distributions carry add-one smoothing over the known POI set.
    double transition_prob(const std::string& from, const std::string& to) const;
    std::string predict(const std::string& last_poi) const;
};

MarkovBaseline markov_fit(const std::vector<Trajectory>& trajectories);

struct GradCheckReport {
    double max_rel_err = 0.0;
    int probes = 0;
};

// Central finite differences on random parameter probes vs analytic grads.
GradCheckReport gradcheck_model(const ModelConfig& cfg, int n_probes, uint64_t seed);

}  // namespace roam
