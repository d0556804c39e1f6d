/* SPDX-License-Identifier: Apache-2.0
 *
 * roam C API: next-POI prediction pipeline and serving engine.
 *
 * All functions return roam_status; ROAM_OK is 0. On failure,
 * roam_last_error() returns a thread-local message describing the most
 * recent error in the calling thread. Strings returned through out
 * parameters are heap-allocated and must be released with roam_free().
 */
#ifndef ROAM_H
#define ROAM_H

#ifdef __cplusplus
extern "C" {
#endif

typedef enum roam_status {
    ROAM_OK = 0,
    ROAM_ERR_CONFIG = 1,   /* usage/config errors (CLI exit 1) */
    ROAM_ERR_DATA = 2,     /* data/parse errors (CLI exit 2) */
    ROAM_ERR_TRAINING = 3, /* training divergence (CLI exit 3) */
    ROAM_ERR_INVALID = 4,  /* bad arguments to the C API itself */
    ROAM_ERR_INTERNAL = 5
} roam_status;

const char* roam_version(void);
const char* roam_last_error(void);
void roam_free(char* ptr);

/*
 * Runs one pipeline stage. `stage` is one of: synth, ingest, build-sids,
 * build-corpus, pretrain, sft, dpo, eval, ablate, bench-latency, gradcheck.
 * `config_path` may be NULL or empty for all-default configuration.
 * `overrides_json` (optional) is a JSON object merged over the file config;
 * it supports the same schema (e.g. {"seed": 7}).
 * On success *report_json receives the stage report.
 */
roam_status roam_stage_run(const char* stage, const char* config_path, const char* out_dir,
                           const char* overrides_json, char** report_json);

/* Serving engine over a trained checkpoint (opaque handle). */
typedef struct roam_engine roam_engine;

/*
 * Opens an engine from explicit artifact paths. `options_json` (optional):
 * {"mode":"speculative"|"vanilla","gamma":3,"max_new_tokens":8,
 *  "queue_capacity":8}.
 */
roam_status roam_engine_open(const char* checkpoint_path, const char* vocab_path,
                             const char* sid_map_path, const char* options_json,
                             roam_engine** out_engine);

/* Opens an engine from a run config file (artifact paths + serve options). */
roam_status roam_engine_open_config(const char* config_path, roam_engine** out_engine);

void roam_engine_close(roam_engine* engine);

/*
 * One request/response exchange in the line protocol:
 *   request  {"id":..., "prompt_text":"..."|"prompt_ids":[...], "mode":...}
 *   response {"id":..., "poi_id":..., "sid_tokens":[...],
 *             "timing_ms":{"prefill":...,"decode":...}, "accepted_drafts":...}
 */
roam_status roam_engine_predict(roam_engine* engine, const char* request_json,
                                char** response_json);

/*
 * Runs a batch through the two-stage prefill/decode pipeline.
 * `requests_jsonl` holds one request object per line. *responses_jsonl
 * receives one response per line (input order); *stats_json the LatencyStats.
 */
roam_status roam_engine_run_batch(roam_engine* engine, const char* requests_jsonl,
                                  int prefill_workers, int decode_workers, char** responses_jsonl,
                                  char** stats_json);

#ifdef __cplusplus
}
#endif

#endif /* ROAM_H */
