// SPDX-License-Identifier: Apache-2.0
#include "roam/engine.hpp"

#include "json.hpp"
#include "roam/util.hpp"

namespace roam {

using nlohmann::json;

Engine::Engine(const std::string& checkpoint_path, const std::string& vocab_path,
               const std::string& sid_map_path, EngineOptions options)
    : options_(std::move(options)),
      vocab_(Vocab::from_json(read_text_file(vocab_path))),
      sids_(sid_map_from_json(read_text_file(sid_map_path))),
      trie_(SidTrie::build(sids_, vocab_)) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path, vocab_.fingerprint());
    model_ = std::make_unique<Model>(ckpt.config);
    if (model_->n_params() != ckpt.params.size())
        throw DataError("engine: checkpoint parameter size mismatch");
    model_->params() = ckpt.params;
    if (!ckpt.draft_params.empty()) {
        draft_ = std::make_unique<DraftHead>(*model_);
        if (draft_->n_params() != ckpt.draft_params.size())
            throw DataError("engine: draft parameter size mismatch");
        draft_->params() = ckpt.draft_params;
    }
}

std::vector<int> Engine::encode_prompt(const std::string& text) const {
    std::vector<int> ids;
    ids.push_back(kBosId);
    for (int id : vocab_.encode(text)) ids.push_back(id);
    ids.push_back(kSepId);
    return ids;
}

GenerateResult Engine::predict(const std::vector<int>& prompt_ids, bool speculative) {
    Drafter* drafter = (speculative && draft_) ? draft_.get() : nullptr;
    return generate(*model_, trie_, prompt_ids, options_.max_new_tokens, drafter, options_.gamma);
}

std::string Engine::predict_json(const std::string& request_json) {
    json req = json::parse(request_json, nullptr, false);
    json resp;
    if (req.is_discarded() || !req.is_object()) {
        resp["error"] = "malformed request";
        return resp.dump();
    }
    resp["id"] = req.value("id", json());
    try {
        std::vector<int> prompt;
        if (req.contains("prompt_ids")) {
            prompt = req.at("prompt_ids").get<std::vector<int>>();
        } else if (req.contains("prompt_text")) {
            prompt = encode_prompt(req.at("prompt_text").get<std::string>());
        } else {
            throw DataError("request needs prompt_ids or prompt_text");
        }
        std::string mode = req.value("mode", options_.mode);
        GenerateResult gen = predict(prompt, mode == "speculative");
        resp["poi_id"] = gen.poi_id;
        json toks = json::array();
        for (int t : gen.tokens) toks.push_back(vocab_.token_of(t));
        resp["sid_tokens"] = toks;
        resp["timing_ms"] = {{"prefill", gen.timing.prefill_ms}, {"decode", gen.timing.decode_ms}};
        resp["accepted_drafts"] = gen.accepted_drafts;
    } catch (const std::exception& e) {
        resp["error"] = e.what();
    }
    return resp.dump();
}

std::vector<PipelineResult> Engine::run_batch(const std::vector<PipelineRequest>& requests,
                                              int prefill_workers, int decode_workers,
                                              LatencyStats* stats) const {
    return run_pipeline(*model_, trie_, draft_.get(), options_.gamma, requests, prefill_workers,
                        decode_workers, options_.queue_capacity, stats);
}

}  // namespace roam
