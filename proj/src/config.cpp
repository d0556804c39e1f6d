// SPDX-License-Identifier: Apache-2.0
#include "roam/config.hpp"

#include <set>

#include "json.hpp"
#include "roam/util.hpp"

namespace roam {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key()))
            throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string RunConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["artifacts"] = {{"synth", artifacts.synth},   {"dataset", artifacts.dataset},
                      {"sids", artifacts.sids},     {"corpus", artifacts.corpus},
                      {"pretrain", artifacts.pretrain}, {"sft", artifacts.sft},
                      {"dpo", artifacts.dpo}};
    j["synth"] = {{"n_users", synth.n_users},   {"n_pois", synth.n_pois},
                  {"weeks", synth.weeks},       {"noise_rate", synth.noise_rate},
                  {"weather_seed", synth.weather_seed}, {"seed", synth.seed},
                  {"region", synth.region},     {"rain_prob", synth.rain_prob}};
    j["ingest"] = {{"format", ingest.format},
                   {"checkins", ingest.checkins},
                   {"catalog", ingest.catalog},
                   {"min_poi_inter", ingest.min_poi_inter},
                   {"min_user_checkins", ingest.min_user_checkins},
                   {"tz_offset_minutes", ingest.tz_offset_minutes}};
    j["sid"] = {{"levels", sid.levels},
                {"codebook_size", sid.codebook_size},
                {"kmeans_iters", sid.kmeans_iters}};
    j["profile"] = {{"half_life_days", profile.half_life_days}, {"min_support", profile.min_support}};
    j["cognition"] = {{"judge", cognition.judge},
                      {"endpoint", cognition.endpoint},
                      {"timeout_ms", cognition.timeout_ms},
                      {"max_inflight", cognition.max_inflight},
                      {"sim_sigma_m", cognition.sim_sigma_m}};
    j["corpus"] = {{"geohash_precision", corpus.geohash_precision},
                   {"max_checkins", corpus.max_checkins},
                   {"history_checkins", corpus.history_checkins},
                   {"mask_ratio", corpus.mask_ratio},
                   {"align_mix", corpus.align_mix},
                   {"window_stride", corpus.window_stride},
                   {"max_vocab", corpus.max_vocab}};
    j["model"] = {{"d_model", model.d_model},
                  {"n_heads", model.n_heads},
                  {"n_layers", model.n_layers},
                  {"context_len", model.context_len},
                  {"dropout", model.dropout}};
    j["pretrain"] = {{"steps", pretrain.steps},
                     {"batch_size", pretrain.batch_size},
                     {"lr", pretrain.lr},
                     {"warmup_steps", pretrain.warmup_steps},
                     {"grad_clip", pretrain.grad_clip}};
    j["sft"] = {{"epochs", sft.epochs},
                {"batch_size", sft.batch_size},
                {"lr", sft.lr},
                {"warmup_steps", sft.warmup_steps},
                {"grad_clip", sft.grad_clip},
                {"stride", sft.stride},
                {"draft_epochs", sft.draft_epochs},
                {"draft_lr", sft.draft_lr}};
    j["dpo"] = {{"beta", dpo.beta},        {"lr", dpo.lr},
                {"epochs", dpo.epochs},    {"batch_size", dpo.batch_size},
                {"max_pairs", dpo.max_pairs}, {"n_distractors", dpo.n_distractors},
                {"rain_injection", dpo.rain_injection}};
    j["serve"] = {{"gamma", serve.gamma},
                  {"mode", serve.mode},
                  {"queue_capacity", serve.queue_capacity},
                  {"max_new_tokens", serve.max_new_tokens}};
    j["eval"] = {{"checkpoint", eval.checkpoint}};
    return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError("config: not a JSON object");

    reject_unknown(j, {"seed", "artifacts", "synth", "ingest", "sid", "profile", "cognition",
                       "corpus", "model", "pretrain", "sft", "dpo", "serve", "eval"},
                   "top level");
    RunConfig c;
    get_if(j, "seed", c.seed);
    if (j.contains("artifacts")) {
        const json& a = j["artifacts"];
        reject_unknown(a, {"synth", "dataset", "sids", "corpus", "pretrain", "sft", "dpo"},
                       "artifacts");
        get_if(a, "synth", c.artifacts.synth);
        get_if(a, "dataset", c.artifacts.dataset);
        get_if(a, "sids", c.artifacts.sids);
        get_if(a, "corpus", c.artifacts.corpus);
        get_if(a, "pretrain", c.artifacts.pretrain);
        get_if(a, "sft", c.artifacts.sft);
        get_if(a, "dpo", c.artifacts.dpo);
    }
    if (j.contains("synth")) {
        const json& s = j["synth"];
        reject_unknown(s, {"n_users", "n_pois", "weeks", "noise_rate", "weather_seed", "seed",
                           "region", "rain_prob"},
                       "synth");
        get_if(s, "n_users", c.synth.n_users);
        get_if(s, "n_pois", c.synth.n_pois);
        get_if(s, "weeks", c.synth.weeks);
        get_if(s, "noise_rate", c.synth.noise_rate);
        get_if(s, "weather_seed", c.synth.weather_seed);
        get_if(s, "seed", c.synth.seed);
        get_if(s, "region", c.synth.region);
        get_if(s, "rain_prob", c.synth.rain_prob);
    }
    if (j.contains("ingest")) {
        const json& s = j["ingest"];
        reject_unknown(s, {"format", "checkins", "catalog", "min_poi_inter", "min_user_checkins",
                           "tz_offset_minutes"},
                       "ingest");
        get_if(s, "format", c.ingest.format);
        get_if(s, "checkins", c.ingest.checkins);
        get_if(s, "catalog", c.ingest.catalog);
        get_if(s, "min_poi_inter", c.ingest.min_poi_inter);
        get_if(s, "min_user_checkins", c.ingest.min_user_checkins);
        get_if(s, "tz_offset_minutes", c.ingest.tz_offset_minutes);
        if (c.ingest.format != "jsonl" && c.ingest.format != "foursquare_tsv")
            throw ConfigError("config: ingest.format must be jsonl or foursquare_tsv");
    }
    if (j.contains("sid")) {
        const json& s = j["sid"];
        reject_unknown(s, {"levels", "codebook_size", "kmeans_iters"}, "sid");
        get_if(s, "levels", c.sid.levels);
        get_if(s, "codebook_size", c.sid.codebook_size);
        get_if(s, "kmeans_iters", c.sid.kmeans_iters);
    }
    if (j.contains("profile")) {
        const json& s = j["profile"];
        reject_unknown(s, {"half_life_days", "min_support"}, "profile");
        get_if(s, "half_life_days", c.profile.half_life_days);
        get_if(s, "min_support", c.profile.min_support);
    }
    if (j.contains("cognition")) {
        const json& s = j["cognition"];
        reject_unknown(s, {"judge", "endpoint", "timeout_ms", "max_inflight", "sim_sigma_m"},
                       "cognition");
        get_if(s, "judge", c.cognition.judge);
        get_if(s, "endpoint", c.cognition.endpoint);
        get_if(s, "timeout_ms", c.cognition.timeout_ms);
        get_if(s, "max_inflight", c.cognition.max_inflight);
        get_if(s, "sim_sigma_m", c.cognition.sim_sigma_m);
        if (c.cognition.judge != "rule" && c.cognition.judge != "external")
            throw ConfigError("config: cognition.judge must be rule or external");
    }
    if (j.contains("corpus")) {
        const json& s = j["corpus"];
        reject_unknown(s, {"geohash_precision", "max_checkins", "history_checkins", "mask_ratio",
                           "align_mix", "window_stride", "max_vocab"},
                       "corpus");
        get_if(s, "geohash_precision", c.corpus.geohash_precision);
        get_if(s, "max_checkins", c.corpus.max_checkins);
        get_if(s, "history_checkins", c.corpus.history_checkins);
        get_if(s, "mask_ratio", c.corpus.mask_ratio);
        get_if(s, "align_mix", c.corpus.align_mix);
        get_if(s, "window_stride", c.corpus.window_stride);
        get_if(s, "max_vocab", c.corpus.max_vocab);
    }
    if (j.contains("model")) {
        const json& s = j["model"];
        reject_unknown(s, {"d_model", "n_heads", "n_layers", "context_len", "dropout"}, "model");
        get_if(s, "d_model", c.model.d_model);
        get_if(s, "n_heads", c.model.n_heads);
        get_if(s, "n_layers", c.model.n_layers);
        get_if(s, "context_len", c.model.context_len);
        get_if(s, "dropout", c.model.dropout);
    }
    if (j.contains("pretrain")) {
        const json& s = j["pretrain"];
        reject_unknown(s, {"steps", "batch_size", "lr", "warmup_steps", "grad_clip"}, "pretrain");
        get_if(s, "steps", c.pretrain.steps);
        get_if(s, "batch_size", c.pretrain.batch_size);
        get_if(s, "lr", c.pretrain.lr);
        get_if(s, "warmup_steps", c.pretrain.warmup_steps);
        get_if(s, "grad_clip", c.pretrain.grad_clip);
    }
    if (j.contains("sft")) {
        const json& s = j["sft"];
        reject_unknown(s, {"epochs", "batch_size", "lr", "warmup_steps", "grad_clip", "stride",
                           "draft_epochs", "draft_lr"},
                       "sft");
        get_if(s, "epochs", c.sft.epochs);
        get_if(s, "batch_size", c.sft.batch_size);
        get_if(s, "lr", c.sft.lr);
        get_if(s, "warmup_steps", c.sft.warmup_steps);
        get_if(s, "grad_clip", c.sft.grad_clip);
        get_if(s, "stride", c.sft.stride);
        get_if(s, "draft_epochs", c.sft.draft_epochs);
        get_if(s, "draft_lr", c.sft.draft_lr);
    }
    if (j.contains("dpo")) {
        const json& s = j["dpo"];
        reject_unknown(s, {"beta", "lr", "epochs", "batch_size", "max_pairs", "n_distractors",
                           "rain_injection"},
                       "dpo");
        get_if(s, "beta", c.dpo.beta);
        get_if(s, "lr", c.dpo.lr);
        get_if(s, "epochs", c.dpo.epochs);
        get_if(s, "batch_size", c.dpo.batch_size);
        get_if(s, "max_pairs", c.dpo.max_pairs);
        get_if(s, "n_distractors", c.dpo.n_distractors);
        get_if(s, "rain_injection", c.dpo.rain_injection);
        if (c.dpo.beta <= 0.0) throw ConfigError("config: dpo.beta must be positive");
    }
    if (j.contains("serve")) {
        const json& s = j["serve"];
        reject_unknown(s, {"gamma", "mode", "queue_capacity", "max_new_tokens"}, "serve");
        get_if(s, "gamma", c.serve.gamma);
        get_if(s, "mode", c.serve.mode);
        get_if(s, "queue_capacity", c.serve.queue_capacity);
        get_if(s, "max_new_tokens", c.serve.max_new_tokens);
        if (c.serve.mode != "speculative" && c.serve.mode != "vanilla")
            throw ConfigError("config: serve.mode must be speculative or vanilla");
    }
    if (j.contains("eval")) {
        const json& s = j["eval"];
        reject_unknown(s, {"checkpoint"}, "eval");
        get_if(s, "checkpoint", c.eval.checkpoint);
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const DataError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    try {
        return from_json(text);
    } catch (const json::exception& e) {
        throw ConfigError("config: parse error in " + path + ": " + e.what());
    }
}

}  // namespace roam
