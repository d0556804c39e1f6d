// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "roam/bench.hpp"
#include "roam/model.hpp"

namespace roam {

// One JSON document with a section per module. Unknown keys are rejected.
struct RunConfig {
    uint64_t seed = 42;

    struct Artifacts {
        std::string synth = "runs/synth";
        std::string dataset = "runs/dataset";
        std::string sids = "runs/sids";
        std::string corpus = "runs/corpus";
        std::string pretrain = "runs/pretrain";
        std::string sft = "runs/sft";
        std::string dpo = "runs/dpo";
    } artifacts;

    SynthConfig synth;

    struct Ingest {
        std::string format = "jsonl";  // "jsonl" | "foursquare_tsv"
        std::string checkins;          // default: <artifacts.synth>/checkins.jsonl
        std::string catalog;           // default: <artifacts.synth>/catalog.jsonl
        int min_poi_inter = 10;
        int min_user_checkins = 10;
        int tz_offset_minutes = 0;
    } ingest;

    struct SidCfg {
        int levels = 3;
        int codebook_size = 256;
        int kmeans_iters = 100;
    } sid;

    struct ProfileCfg {
        double half_life_days = 30.0;
        int min_support = 3;
    } profile;

    struct CognitionCfg {
        std::string judge = "rule";  // "rule" | "external"
        std::string endpoint;
        int timeout_ms = 200;
        int max_inflight = 4;
        double sim_sigma_m = 500.0;
    } cognition;

    struct CorpusCfg {
        int geohash_precision = 5;
        int max_checkins = 50;      // behavior-sequence record cap
        int history_checkins = 12;  // prompt history clauses (train and eval)
        double mask_ratio = 0.15;
        double align_mix = 0.25;  // alignment fraction of each pretrain batch
        int window_stride = 8;
        int max_vocab = 50000;
    } corpus;

    ModelConfig model;  // vocab_size is filled from the built vocabulary

    struct PretrainCfg {
        int steps = 600;
        int batch_size = 8;
        double lr = 3e-4;
        int warmup_steps = 20;
        double grad_clip = 1.0;
    } pretrain;

    struct SftCfg {
        int epochs = 2;
        int batch_size = 8;
        double lr = 3e-4;
        int warmup_steps = 20;
        double grad_clip = 1.0;
        int stride = 1;  // take every stride-th training context
        int draft_epochs = 2;
        double draft_lr = 1e-3;
    } sft;

    struct DpoCfg {
        double beta = 0.1;
        double lr = 1e-4;
        int epochs = 4;
        int batch_size = 4;
        int max_pairs = 256;
        int n_distractors = 3;
        bool rain_injection = true;
    } dpo;

    struct ServeCfg {
        int gamma = 3;
        std::string mode = "speculative";  // "speculative" | "vanilla"
        int queue_capacity = 8;
        int max_new_tokens = 8;
    } serve;

    struct EvalCfg {
        std::string checkpoint = "auto";  // "auto" | "sft" | "dpo" | explicit path
    } eval;

    std::string to_json() const;
    static RunConfig from_json(const std::string& text);
    static RunConfig load(const std::string& path);
};

}  // namespace roam
