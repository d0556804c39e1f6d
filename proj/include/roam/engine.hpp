// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "roam/serve.hpp"

namespace roam {

struct EngineOptions {
    std::string mode = "speculative";  // default decode mode for requests
    int gamma = 3;
    int max_new_tokens = 8;
    int queue_capacity = 8;
};

// Frozen-checkpoint inference runtime: vocabulary, SID trie, target model and
// the optional speculative draft head.
class Engine {
public:
    Engine(const std::string& checkpoint_path, const std::string& vocab_path,
           const std::string& sid_map_path, EngineOptions options = {});
    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;
    // Moving is safe: the draft head points at the heap-allocated model.
    Engine(Engine&&) = default;
    Engine& operator=(Engine&&) = default;

    const Vocab& vocab() const { return vocab_; }
    const SidTrie& trie() const { return trie_; }
    const Model& model() const { return *model_; }
    const SidAssignment& sids() const { return sids_; }
    bool has_draft() const { return draft_ != nullptr; }
    const EngineOptions& options() const { return options_; }

    // <bos> + word tokens + <sep>, the same shape SFT prompts use.
    std::vector<int> encode_prompt(const std::string& text) const;

    GenerateResult predict(const std::vector<int>& prompt_ids, bool speculative);

    // Line protocol: {id, prompt_text|prompt_ids, mode?} ->
    // {id, poi_id, sid_tokens, timing_ms:{prefill,decode}, accepted_drafts}.
    std::string predict_json(const std::string& request_json);

    std::vector<PipelineResult> run_batch(const std::vector<PipelineRequest>& requests,
                                          int prefill_workers, int decode_workers,
                                          LatencyStats* stats) const;

private:
    EngineOptions options_;
    Vocab vocab_;
    SidAssignment sids_;
    std::unique_ptr<Model> model_;
    SidTrie trie_;
    std::unique_ptr<DraftHead> draft_;
};

}  // namespace roam
