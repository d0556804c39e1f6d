// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "roam/corpus.hpp"
#include "roam/model.hpp"
#include "roam/sid.hpp"

namespace roam {

// Prefix trie over rendered SID token ids. Every leaf is one catalog POI.
class SidTrie {
public:
    struct Node {
        std::map<int, int> children;  // token id -> node index
        int poi = -1;                 // >= 0 marks a leaf (index into poi_ids_)
    };

    static SidTrie build(const SidAssignment& sids, const Vocab& vocab);

    int root() const { return 0; }
    const Node& node(int idx) const { return nodes_[static_cast<size_t>(idx)]; }
    bool is_leaf(int idx) const { return node(idx).poi >= 0; }
    const std::string& poi_at(int idx) const { return poi_ids_[static_cast<size_t>(node(idx).poi)]; }
    int child(int idx, int token) const;  // -1 when no such edge
    size_t leaf_count() const { return poi_ids_.size(); }
    size_t node_count() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
    std::vector<std::string> poi_ids_;
};

// Argmax over the current node's children; ties resolve to the lowest token id.
int constrained_greedy(const std::vector<double>& logits, const SidTrie& trie, int node);

// Proposes draft tokens for one speculative round. begin_round() receives the
// full committed prefix (whose last element is the token about to be verified)
// and the target's hidden state at the position before it.
class Drafter {
public:
    virtual ~Drafter() = default;
    virtual void begin_round(const std::vector<int>& prefix_with_next,
                             const std::vector<double>& prev_hidden) = 0;
    virtual int next(const SidTrie& trie, int trie_node) = 0;
};

// Single-block speculative head: a combiner over [previous hidden; token
// embedding] followed by one transformer block, sharing the target's
// embedding table and output projection.
class DraftHead : public Drafter {
public:
    explicit DraftHead(const Model& target);

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    size_t n_params() const { return params_.size(); }
    void init_params(uint64_t seed, double init_std = 0.08);

    void begin_round(const std::vector<int>& prefix_with_next,
                     const std::vector<double>& prev_hidden) override;
    int next(const SidTrie& trie, int trie_node) override;

    // Distills the target's next-token argmax on the response spans of the
    // given records. Returns the final epoch's mean cross-entropy.
    double distill(const std::vector<CorpusRecord>& records, int epochs, double lr, uint64_t seed);

    double agreement(const std::vector<CorpusRecord>& records) const;  // argmax match rate

private:
    const Model* target_;
    std::vector<double> params_;
    // Round-local chain state.
    std::vector<double> chain_k_, chain_v_;
    int chain_len_ = 0;
    int cur_token_ = -1;
    std::vector<double> cur_hidden_;

    struct StepTrace;
    void step(int token, const std::vector<double>& hidden, std::vector<double>& logits_out,
              std::vector<double>& hidden_out, StepTrace* trace);
};

struct DecodeTimings {
    double prefill_ms = 0.0;
    double decode_ms = 0.0;
};

struct GenerateResult {
    std::vector<int> tokens;  // trie path (SID tokens)
    std::string poi_id;       // resolved leaf, empty if generation was truncated
    DecodeTimings timing;
    int accepted_drafts = 0;
    int proposed_drafts = 0;
    int draft_rounds = 0;
};

struct PrefillOutput {
    KvCache cache;
    std::vector<double> last_logits;
    std::vector<int> prompt;
    double prefill_ms = 0.0;
};

PrefillOutput prefill_stage(const Model& model, const std::vector<int>& prompt);

// Greedy trie-constrained decoding. `drafter` switches on lossless
// speculative verification; output tokens are identical either way.
GenerateResult decode_stage(const Model& model, const SidTrie& trie, PrefillOutput prefilled,
                            int max_new_tokens, Drafter* drafter, int gamma);

GenerateResult generate(const Model& model, const SidTrie& trie, const std::vector<int>& prompt,
                        int max_new_tokens, Drafter* drafter = nullptr, int gamma = 3);

struct PipelineRequest {
    std::string id;
    std::vector<int> prompt;
    int max_new_tokens = 8;
    bool speculative = false;
};

struct PipelineResult {
    std::string id;
    std::vector<int> tokens;
    std::string poi_id;
    DecodeTimings timing;
    double latency_ms = 0.0;
    int accepted_drafts = 0;
    int proposed_drafts = 0;
};

struct LatencyStats {
    double p50_ms = 0.0;
    double p99_ms = 0.0;
    double tokens_per_sec = 0.0;
    double requests_per_sec = 0.0;
    double acceptance_rate = 0.0;
    double wall_ms = 0.0;

    std::string to_json() const;
};

// Two-stage prefill/decode pipeline over a bounded handoff queue. Caches move
// between stages by value; results are written to per-request slots.
std::vector<PipelineResult> run_pipeline(const Model& model, const SidTrie& trie,
                                         const DraftHead* draft, int gamma,
                                         const std::vector<PipelineRequest>& requests,
                                         int prefill_workers, int decode_workers,
                                         int queue_capacity, LatencyStats* stats);

// Strictly serial single-worker reference path used for throughput baselines.
std::vector<PipelineResult> run_serial(const Model& model, const SidTrie& trie,
                                       const DraftHead* draft, int gamma,
                                       const std::vector<PipelineRequest>& requests,
                                       LatencyStats* stats);

}  // namespace roam
