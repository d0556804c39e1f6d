// SPDX-License-Identifier: Apache-2.0
#include "roam.h"

#include <cstdlib>
#include <cstring>
#include <functional>
#include <sstream>
#include <string>

#include "json.hpp"
#include "roam/pipeline.hpp"
#include "roam/util.hpp"

using nlohmann::json;

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

roam_status set_error(roam_status code, const std::string& message) {
    g_last_error = message;
    return code;
}

roam_status guard(const std::function<void()>& body) {
    try {
        body();
        return ROAM_OK;
    } catch (const roam::ConfigError& e) {
        return set_error(ROAM_ERR_CONFIG, e.what());
    } catch (const roam::DataError& e) {
        return set_error(ROAM_ERR_DATA, e.what());
    } catch (const roam::TrainingError& e) {
        return set_error(ROAM_ERR_TRAINING, e.what());
    } catch (const std::exception& e) {
        return set_error(ROAM_ERR_INTERNAL, e.what());
    } catch (...) {
        return set_error(ROAM_ERR_INTERNAL, "unknown error");
    }
}

roam::RunConfig load_config_with_overrides(const char* config_path, const char* overrides_json) {
    std::string text = "{}";
    if (config_path && *config_path) text = roam::read_text_file(config_path);
    if (overrides_json && *overrides_json) {
        json base = json::parse(text, nullptr, false);
        json over = json::parse(overrides_json, nullptr, false);
        if (base.is_discarded()) throw roam::ConfigError("config: invalid JSON in config file");
        if (over.is_discarded()) throw roam::ConfigError("config: invalid JSON in overrides");
        base.merge_patch(over);
        text = base.dump();
    }
    return roam::RunConfig::from_json(text);
}

}  // namespace

struct roam_engine {
    roam::Engine impl;
    explicit roam_engine(roam::Engine e) : impl(std::move(e)) {}
};

extern "C" {

const char* roam_version(void) { return "0.1.0"; }

const char* roam_last_error(void) { return g_last_error.c_str(); }

void roam_free(char* ptr) { std::free(ptr); }

roam_status roam_stage_run(const char* stage, const char* config_path, const char* out_dir,
                           const char* overrides_json, char** report_json) {
    if (!stage || !out_dir) return set_error(ROAM_ERR_INVALID, "stage and out_dir are required");
    return guard([&] {
        roam::RunConfig cfg = load_config_with_overrides(config_path, overrides_json);
        std::string report = roam::run_stage(stage, cfg, out_dir);
        if (report_json) *report_json = dup_string(report);
    });
}

roam_status roam_engine_open(const char* checkpoint_path, const char* vocab_path,
                             const char* sid_map_path, const char* options_json,
                             roam_engine** out_engine) {
    if (!checkpoint_path || !vocab_path || !sid_map_path || !out_engine)
        return set_error(ROAM_ERR_INVALID, "all artifact paths and out_engine are required");
    return guard([&] {
        roam::EngineOptions opt;
        if (options_json && *options_json) {
            json j = json::parse(options_json, nullptr, false);
            if (j.is_discarded()) throw roam::ConfigError("engine options: invalid JSON");
            opt.mode = j.value("mode", opt.mode);
            opt.gamma = j.value("gamma", opt.gamma);
            opt.max_new_tokens = j.value("max_new_tokens", opt.max_new_tokens);
            opt.queue_capacity = j.value("queue_capacity", opt.queue_capacity);
        }
        *out_engine =
            new roam_engine(roam::Engine(checkpoint_path, vocab_path, sid_map_path, opt));
    });
}

roam_status roam_engine_open_config(const char* config_path, roam_engine** out_engine) {
    if (!out_engine) return set_error(ROAM_ERR_INVALID, "out_engine is required");
    return guard([&] {
        roam::RunConfig cfg = load_config_with_overrides(config_path, nullptr);
        *out_engine = new roam_engine(roam::make_engine(cfg));
    });
}

void roam_engine_close(roam_engine* engine) { delete engine; }

roam_status roam_engine_predict(roam_engine* engine, const char* request_json,
                                char** response_json) {
    if (!engine || !request_json || !response_json)
        return set_error(ROAM_ERR_INVALID, "engine, request_json and response_json are required");
    return guard([&] { *response_json = dup_string(engine->impl.predict_json(request_json)); });
}

roam_status roam_engine_run_batch(roam_engine* engine, const char* requests_jsonl,
                                  int prefill_workers, int decode_workers, char** responses_jsonl,
                                  char** stats_json) {
    if (!engine || !requests_jsonl)
        return set_error(ROAM_ERR_INVALID, "engine and requests_jsonl are required");
    return guard([&] {
        std::vector<roam::PipelineRequest> requests;
        std::istringstream in(requests_jsonl);
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            line_no++;
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object())
                throw roam::DataError("batch request line " + std::to_string(line_no) +
                                      ": malformed JSON");
            roam::PipelineRequest r;
            r.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>()
                                                           : j["id"].dump())
                                    : std::to_string(line_no);
            if (j.contains("prompt_ids")) {
                r.prompt = j.at("prompt_ids").get<std::vector<int>>();
            } else if (j.contains("prompt_text")) {
                r.prompt = engine->impl.encode_prompt(j.at("prompt_text").get<std::string>());
            } else {
                throw roam::DataError("batch request line " + std::to_string(line_no) +
                                      ": needs prompt_ids or prompt_text");
            }
            r.max_new_tokens = j.value("max_new_tokens", engine->impl.options().max_new_tokens);
            std::string mode = j.value("mode", engine->impl.options().mode);
            r.speculative = mode == "speculative" && engine->impl.has_draft();
            requests.push_back(std::move(r));
        }
        roam::LatencyStats stats;
        auto results = engine->impl.run_batch(requests, prefill_workers, decode_workers, &stats);
        if (responses_jsonl) {
            std::ostringstream out;
            for (const auto& res : results) {
                json j;
                j["id"] = res.id;
                j["poi_id"] = res.poi_id;
                json toks = json::array();
                for (int t : res.tokens) toks.push_back(engine->impl.vocab().token_of(t));
                j["sid_tokens"] = toks;
                j["timing_ms"] = {{"prefill", res.timing.prefill_ms},
                                  {"decode", res.timing.decode_ms}};
                j["accepted_drafts"] = res.accepted_drafts;
                out << j.dump() << "\n";
            }
            *responses_jsonl = dup_string(out.str());
        }
        if (stats_json) *stats_json = dup_string(stats.to_json());
    });
}

}  // extern "C"
