// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "roam/bench.hpp"
#include "roam/config.hpp"
#include "roam/engine.hpp"

namespace roam {

struct AblationFlags {
    bool no_profile = false;        // blank the profile prompt slot
    bool no_situation = false;      // blank time/location/weather slots
    bool no_alignment_corpus = false;
    bool no_pretrain = false;

    bool any() const { return no_profile || no_situation || no_alignment_corpus || no_pretrain; }
};

// Stage entry point used by the C API and the CLI. Valid stage names:
// synth | ingest | build-sids | build-corpus | pretrain | sft | dpo | eval |
// ablate | bench-latency | gradcheck. Each stage reads its inputs from
// cfg.artifacts, writes its outputs plus resolved_config.json and
// provenance.json into out_dir, and returns a JSON report.
std::string run_stage(const std::string& stage, const RunConfig& cfg, const std::string& out_dir);

std::string stage_synth(const RunConfig& cfg, const std::string& out);
std::string stage_ingest(const RunConfig& cfg, const std::string& out);
std::string stage_build_sids(const RunConfig& cfg, const std::string& out);
std::string stage_build_corpus(const RunConfig& cfg, const std::string& out,
                               const AblationFlags& flags = {});
std::string stage_pretrain(const RunConfig& cfg, const std::string& out,
                           const AblationFlags& flags = {});
std::string stage_sft(const RunConfig& cfg, const std::string& out, const AblationFlags& flags = {});
std::string stage_dpo(const RunConfig& cfg, const std::string& out);
std::string stage_eval(const RunConfig& cfg, const std::string& out, const AblationFlags& flags = {});
std::string stage_ablate(const RunConfig& cfg, const std::string& out);
std::string stage_bench_latency(const RunConfig& cfg, const std::string& out);
std::string stage_gradcheck(const RunConfig& cfg, const std::string& out);

// Shared loading helpers.
struct LoadedDataset {
    Dataset ds;
    WeatherTimeline weather;
    bool has_weather = false;
    int tz_offset_minutes = 0;
};
LoadedDataset load_dataset_dir(const std::string& dir);

// Builds SFT/eval prompts consistently across training, DPO and evaluation.
class PromptBuilder {
public:
    PromptBuilder(const Catalog& catalog, const SidAssignment& sids,
                  const std::map<std::string, UserProfile>& profiles, int geohash_precision,
                  int tz_offset_minutes, AblationFlags flags);

    std::string prompt_text(const std::string& user_id, const std::vector<CheckIn>& history,
                            const Situation& situation) const;

private:
    const Catalog& catalog_;
    const SidAssignment& sids_;
    int precision_;
    int tz_offset_;
    AblationFlags flags_;
    std::map<std::string, std::string> profile_texts_;
};

// Resolves the checkpoint the eval/serve stages should load.
std::string resolve_checkpoint(const RunConfig& cfg);

Engine make_engine(const RunConfig& cfg);

}  // namespace roam
