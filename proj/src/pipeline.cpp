// SPDX-License-Identifier: Apache-2.0
#include "roam/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "json.hpp"
#include "roam/align.hpp"
#include "roam/util.hpp"

namespace roam {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- artifact plumbing -----------------------------------------------------

struct StageIo {
    std::string out_dir;
    std::map<std::string, std::string> input_hashes;
    std::vector<std::string> outputs;

    explicit StageIo(const std::string& dir) : out_dir(dir) { fs::create_directories(dir); }

    std::string in(const std::string& path) {
        input_hashes[path] = hex64(hash_file(path));
        return path;
    }
    void write(const std::string& name, const std::string& content) {
        write_text_file(out_dir + "/" + name, content);
        outputs.push_back(name);
    }
    void finish(const std::string& stage, const RunConfig& cfg) {
        std::string resolved = cfg.to_json();
        write("resolved_config.json", resolved);
        json prov;
        prov["stage"] = stage;
        prov["config_hash"] = hex64(fnv1a64(resolved));
        prov["inputs"] = input_hashes;
        json outs = json::object();
        for (const auto& name : outputs) {
            if (name == "provenance.json") continue;
            outs[name] = hex64(hash_file(out_dir + "/" + name));
        }
        prov["outputs"] = outs;
        write_text_file(out_dir + "/provenance.json", prov.dump(2));
    }
};

std::string path_join(const std::string& dir, const std::string& name) { return dir + "/" + name; }

std::string require_file(const std::string& path, const std::string& stage_hint) {
    if (!fs::exists(path))
        throw ConfigError("missing input artifact '" + path + "'; run the " + stage_hint +
                          " stage first");
    return path;
}

CognitionParams cognition_params(const RunConfig& cfg, int tz_offset) {
    CognitionParams p;
    p.sim_sigma_m = cfg.cognition.sim_sigma_m;
    p.tz_offset_minutes = tz_offset;
    return p;
}

JudgeConfig judge_config(const RunConfig& cfg) {
    JudgeConfig jc;
    jc.kind = cfg.cognition.judge == "external" ? JudgeConfig::Kind::external : JudgeConfig::Kind::rule;
    jc.endpoint = cfg.cognition.endpoint;
    jc.timeout_ms = cfg.cognition.timeout_ms;
    jc.max_inflight = cfg.cognition.max_inflight;
    return jc;
}

}  // namespace

// ---- prompt building --------------------------------------------------------

PromptBuilder::PromptBuilder(const Catalog& catalog, const SidAssignment& sids,
                             const std::map<std::string, UserProfile>& profiles,
                             int geohash_precision, int tz_offset_minutes, AblationFlags flags)
    : catalog_(catalog),
      sids_(sids),
      precision_(geohash_precision),
      tz_offset_(tz_offset_minutes),
      flags_(flags) {
    for (const auto& [user, profile] : profiles) {
        profile_texts_[user] = render_profile_text(profile, catalog, precision_);
    }
}

std::string PromptBuilder::prompt_text(const std::string& user_id,
                                       const std::vector<CheckIn>& history,
                                       const Situation& situation) const {
    SftSlots slots;
    if (!flags_.no_profile) {
        auto it = profile_texts_.find(user_id);
        slots.profile_text = it != profile_texts_.end() ? it->second : "no known profile";
    }
    std::ostringstream hist;
    for (size_t i = 0; i < history.size(); ++i) {
        if (i) hist << ", ";
        hist << checkin_clause(history[i], catalog_, sids_, tz_offset_);
    }
    slots.history_text = hist.str();
    if (!flags_.no_situation) {
        slots.time_text = situation_time_text(situation.time, tz_offset_);
        slots.location_cell = geohash_encode(situation.location, precision_).token();
        slots.weather_text = weather_name(situation.weather);
    }
    return sft_prompt_text(slots);
}

// ---- dataset loading ---------------------------------------------------------

LoadedDataset load_dataset_dir(const std::string& dir) {
    LoadedDataset out;
    std::string catalog_path = require_file(path_join(dir, "catalog.jsonl"), "ingest");
    {
        std::istringstream in(read_text_file(catalog_path));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            json j = json::parse(line);
            Poi p;
            p.poi_id = j.at("id").get<std::string>();
            p.name = j.value("name", p.poi_id);
            p.point = GeoPoint(j.at("lon").get<double>(), j.at("lat").get<double>());
            if (j.at("cat").is_array())
                p.category_path = j.at("cat").get<std::vector<std::string>>();
            else
                p.category_path = {j.at("cat").get<std::string>()};
            p.description = j.value("desc", "");
            p.indoor = j.value("indoor", true);
            if (j.contains("hours")) {
                for (const auto& h : j.at("hours")) {
                    OpenWindow w;
                    w.days = h.at(0).get<std::vector<int>>();
                    w.open_minute = h.at(1).get<int>();
                    w.close_minute = h.at(2).get<int>();
                    p.open_hours.push_back(std::move(w));
                }
            }
            out.ds.catalog.add(std::move(p));
        }
        out.ds.catalog.sort_by_id();
    }
    out.ds.train = checkins_from_jsonl(read_text_file(require_file(path_join(dir, "train.jsonl"), "ingest")));
    out.ds.valid = checkins_from_jsonl(read_text_file(require_file(path_join(dir, "valid.jsonl"), "ingest")));
    out.ds.test = checkins_from_jsonl(read_text_file(require_file(path_join(dir, "test.jsonl"), "ingest")));

    std::vector<CheckIn> all;
    all.insert(all.end(), out.ds.train.begin(), out.ds.train.end());
    all.insert(all.end(), out.ds.valid.begin(), out.ds.valid.end());
    all.insert(all.end(), out.ds.test.begin(), out.ds.test.end());
    std::sort(all.begin(), all.end(), [](const CheckIn& a, const CheckIn& b) {
        if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
        if (a.user_id != b.user_id) return a.user_id < b.user_id;
        return a.poi_id < b.poi_id;
    });
    out.ds.trajectories = group_by_user(all);

    std::string weather_path = path_join(dir, "weather.json");
    if (fs::exists(weather_path)) {
        out.weather = WeatherTimeline::from_json(read_text_file(weather_path));
        out.has_weather = true;
    }
    std::string meta_path = path_join(dir, "dataset_meta.json");
    if (fs::exists(meta_path)) {
        json meta = json::parse(read_text_file(meta_path));
        out.tz_offset_minutes = meta.value("tz_offset_minutes", 0);
    }
    return out;
}

// ---- stages -------------------------------------------------------------------

std::string stage_synth(const RunConfig& cfg, const std::string& out) {
    StageIo io(out);
    SynthConfig sc = cfg.synth;
    SynthWorld world = synth_world(sc);
    io.write("catalog.jsonl", catalog_to_jsonl(world.catalog));
    std::vector<CheckIn> all;
    for (const auto& t : world.trajectories)
        all.insert(all.end(), t.check_ins.begin(), t.check_ins.end());
    io.write("checkins.jsonl", checkins_to_jsonl(all));
    io.write("weather.json", world.weather.to_json());

    json report;
    report["stage"] = "synth";
    report["users"] = world.trajectories.size();
    report["pois"] = world.catalog.size();
    report["checkins"] = all.size();
    size_t noisy = 0, substituted = 0;
    for (const auto& a : world.audit) {
        if (a.noise) noisy++;
        if (a.substituted) substituted++;
    }
    report["noise_checkins"] = noisy;
    report["rain_substitutions"] = substituted;
    io.write("synth_report.json", report.dump(2));
    io.finish("synth", cfg);
    return report.dump(2);
}

std::string stage_ingest(const RunConfig& cfg, const std::string& out) {
    StageIo io(out);
    std::string checkins_path = cfg.ingest.checkins.empty()
                                    ? path_join(cfg.artifacts.synth, "checkins.jsonl")
                                    : cfg.ingest.checkins;
    std::string catalog_path = cfg.ingest.catalog.empty()
                                   ? path_join(cfg.artifacts.synth, "catalog.jsonl")
                                   : cfg.ingest.catalog;
    CheckinFormat format = cfg.ingest.format == "foursquare_tsv" ? CheckinFormat::foursquare_tsv
                                                                 : CheckinFormat::jsonl;
    io.in(require_file(checkins_path, "synth"));
    LoadResult loaded;
    if (format == CheckinFormat::jsonl) {
        io.in(require_file(catalog_path, "synth"));
        loaded = load_checkins(checkins_path, format, catalog_path);
    } else {
        loaded = load_checkins(checkins_path, format);
    }

    Dataset ds = preprocess(loaded.catalog, loaded.trajectories, cfg.ingest.min_poi_inter,
                            cfg.ingest.min_user_checkins);

    io.write("catalog.jsonl", catalog_to_jsonl(ds.catalog));
    io.write("train.jsonl", checkins_to_jsonl(ds.train));
    io.write("valid.jsonl", checkins_to_jsonl(ds.valid));
    io.write("test.jsonl", checkins_to_jsonl(ds.test));
    io.write("parse_report.json", loaded.report.to_json());

    int tz = cfg.ingest.tz_offset_minutes != 0 ? cfg.ingest.tz_offset_minutes
                                               : loaded.tz_offset_minutes;
    json meta;
    meta["tz_offset_minutes"] = tz;
    io.write("dataset_meta.json", meta.dump(2));

    std::string weather_src = path_join(cfg.artifacts.synth, "weather.json");
    if (fs::exists(weather_src)) io.write("weather.json", read_text_file(io.in(weather_src)));

    json report;
    report["stage"] = "ingest";
    report["total"] = ds.report.total;
    report["train"] = ds.report.train;
    report["valid"] = ds.report.valid;
    report["test"] = ds.report.test;
    report["dropped_for_consistency"] = ds.report.dropped_for_consistency;
    report["removed_pois"] = ds.report.removed_pois;
    report["removed_users"] = ds.report.removed_users;
    report["filter_rounds"] = ds.report.filter_rounds;
    report["parse"] = json::parse(loaded.report.to_json());
    io.write("split_report.json", report.dump(2));
    io.finish("ingest", cfg);
    return report.dump(2);
}

std::string stage_build_sids(const RunConfig& cfg, const std::string& out) {
    StageIo io(out);
    LoadedDataset data = load_dataset_dir(cfg.artifacts.dataset);
    io.in(path_join(cfg.artifacts.dataset, "catalog.jsonl"));
    const Catalog& catalog = data.ds.catalog;

    CatalogExtent extent = catalog_extent(catalog);
    std::vector<FeatureVector> features;
    features.reserve(catalog.size());
    for (const auto& p : catalog.pois()) features.push_back(featurize(p, extent));

    CodebookTrainStats stats;
    auto books = train_codebooks(features, cfg.sid.levels, cfg.sid.codebook_size, cfg.seed,
                                 cfg.sid.kmeans_iters, &stats);
    SidAssignment sids = assign_collision_breaks(catalog, books);

    io.write("codebooks.json", codebooks_to_json(books, kFeatureDim, cfg.seed));
    io.write("sid_map.json", sid_map_to_json(sids));

    json report;
    report["stage"] = "build-sids";
    report["pois"] = catalog.size();
    report["levels"] = cfg.sid.levels;
    report["codebook_size"] = cfg.sid.codebook_size;
    report["collision_rate"] = sids.collision_rate;
    report["max_collision_break"] = sids.max_collision_break;
    report["mse_per_level"] = stats.mse_per_level;
    report["kmeans_iterations"] = stats.iterations_per_level;
    io.write("sid_report.json", report.dump(2));
    io.finish("build-sids", cfg);
    return report.dump(2);
}

namespace {

struct CorpusBundle {
    Vocab vocab;
    std::vector<CorpusRecord> pretrain_records;
    std::vector<CorpusRecord> sft_train;
    std::vector<CorpusRecord> sft_valid;
    std::map<std::string, UserProfile> profiles;
    size_t max_record_len = 0;
};

CorpusBundle build_corpus_bundle(const RunConfig& cfg, const LoadedDataset& data,
                                 const SidAssignment& sids, const AblationFlags& flags) {
    const Catalog& catalog = data.ds.catalog;
    const int tz = data.tz_offset_minutes;
    CorpusTemplates tpl;
    tpl.region = cfg.synth.region;

    // Profiles from train-split behavior only.
    std::map<std::string, UserProfile> profiles;
    for (const auto& traj : group_by_user(data.ds.train)) {
        profiles[traj.user_id] =
            build_profile(traj, catalog, tz, cfg.profile.half_life_days, cfg.profile.min_support);
    }

    // Texts first, vocabulary second, tokens last.
    std::vector<std::string> alignment_texts;
    int variant = 0;
    for (const auto& p : catalog.pois()) {
        Sid sid = sids.sid_of(p.poi_id);
        GeohashCell cell = geohash_encode(p.point, cfg.corpus.geohash_precision);
        alignment_texts.push_back(alignment_text(p, sid, cell, tpl, variant++));
    }

    std::vector<std::string> sequence_texts;
    for (const auto& traj : group_by_user(data.ds.train)) {
        const auto& checks = traj.check_ins;
        size_t n = checks.size();
        size_t stride = std::max(1, cfg.corpus.window_stride);
        for (size_t start = 0; start + 2 <= n; start += stride) {
            size_t end = std::min(n, start + static_cast<size_t>(cfg.corpus.max_checkins));
            Trajectory window;
            window.user_id = traj.user_id;
            window.check_ins.assign(checks.begin() + static_cast<long>(start),
                                    checks.begin() + static_cast<long>(end));
            sequence_texts.push_back(
                sequence_text(window, catalog, sids, tz, cfg.corpus.max_checkins));
            if (end == n) break;
        }
    }

    PromptBuilder builder(catalog, sids, profiles, cfg.corpus.geohash_precision, tz, flags);

    struct SftSample {
        std::string prompt;
        std::string target_poi;
    };
    auto build_sft_samples = [&](const std::vector<CheckIn>& split, int stride) {
        std::vector<SftSample> samples;
        auto contexts = build_eval_contexts(data.ds, data.has_weather ? &data.weather : nullptr,
                                            cfg.corpus.history_checkins, &split);
        int idx = 0;
        for (const auto& ctx : contexts) {
            if (stride > 1 && (idx++ % stride) != 0) continue;
            SftSample s;
            s.prompt = builder.prompt_text(ctx.user_id, ctx.history.check_ins, ctx.situation);
            s.target_poi = ctx.truth_poi;
            samples.push_back(std::move(s));
        }
        return samples;
    };
    auto train_samples = build_sft_samples(data.ds.train, cfg.sft.stride);
    auto valid_samples = build_sft_samples(data.ds.valid, 1);

    std::vector<std::string> text_samples = alignment_texts;
    text_samples.insert(text_samples.end(), sequence_texts.begin(), sequence_texts.end());
    for (const auto& s : train_samples) text_samples.push_back(s.prompt);
    for (const auto& s : valid_samples) text_samples.push_back(s.prompt);

    CorpusBundle bundle{Vocab::build(catalog, sids, text_samples, cfg.corpus.geohash_precision,
                                     static_cast<size_t>(cfg.corpus.max_vocab)),
                        {}, {}, {}, std::move(profiles)};

    RecordBuilder rb{&bundle.vocab};
    for (const auto& t : alignment_texts) bundle.pretrain_records.push_back(rb.alignment_record(t));
    for (const auto& t : sequence_texts) bundle.pretrain_records.push_back(rb.sequence_record(t));
    for (const auto& s : train_samples)
        bundle.sft_train.push_back(rb.sft_record(s.prompt, sids.sid_of(s.target_poi)));
    for (const auto& s : valid_samples)
        bundle.sft_valid.push_back(rb.sft_record(s.prompt, sids.sid_of(s.target_poi)));

    for (const auto& r : bundle.pretrain_records) bundle.max_record_len = std::max(bundle.max_record_len, r.tokens.size());
    for (const auto& r : bundle.sft_train) bundle.max_record_len = std::max(bundle.max_record_len, r.tokens.size());
    for (const auto& r : bundle.sft_valid) bundle.max_record_len = std::max(bundle.max_record_len, r.tokens.size());
    return bundle;
}

}  // namespace

std::string stage_build_corpus(const RunConfig& cfg, const std::string& out,
                               const AblationFlags& flags) {
    StageIo io(out);
    LoadedDataset data = load_dataset_dir(cfg.artifacts.dataset);
    io.in(path_join(cfg.artifacts.dataset, "train.jsonl"));
    SidAssignment sids =
        sid_map_from_json(read_text_file(io.in(require_file(
            path_join(cfg.artifacts.sids, "sid_map.json"), "build-sids"))));

    CorpusBundle bundle = build_corpus_bundle(cfg, data, sids, flags);

    io.write("vocab.json", bundle.vocab.to_json());
    io.write("profiles.json", profiles_to_json(bundle.profiles));
    io.write("pretrain.jsonl", records_to_jsonl(bundle.pretrain_records));
    io.write("sft_train.jsonl", records_to_jsonl(bundle.sft_train));
    io.write("sft_valid.jsonl", records_to_jsonl(bundle.sft_valid));

    size_t n_alignment = 0, n_sequence = 0;
    for (const auto& r : bundle.pretrain_records) {
        if (r.kind == RecordKind::alignment)
            n_alignment++;
        else
            n_sequence++;
    }
    json report;
    report["stage"] = "build-corpus";
    report["vocab_size"] = bundle.vocab.size();
    report["vocab_fingerprint"] = hex64(bundle.vocab.fingerprint());
    report["alignment_records"] = n_alignment;
    report["sequence_records"] = n_sequence;
    report["sft_train_records"] = bundle.sft_train.size();
    report["sft_valid_records"] = bundle.sft_valid.size();
    report["max_record_len"] = bundle.max_record_len;
    io.write("corpus_report.json", report.dump(2));
    io.finish("build-corpus", cfg);
    return report.dump(2);
}

namespace {

ModelConfig model_config_for(const RunConfig& cfg, const Vocab& vocab) {
    ModelConfig mc = cfg.model;
    mc.vocab_size = static_cast<int>(vocab.size());
    mc.seed = cfg.seed;
    mc.validate();
    return mc;
}

void check_context(const ModelConfig& mc, const std::vector<CorpusRecord>& records,
                   const std::string& what) {
    for (const auto& r : records) {
        if (static_cast<int>(r.tokens.size()) > mc.context_len)
            throw ConfigError(what + ": record of " + std::to_string(r.tokens.size()) +
                              " tokens exceeds context_len " + std::to_string(mc.context_len));
    }
}

}  // namespace

std::string stage_pretrain(const RunConfig& cfg, const std::string& out,
                           const AblationFlags& flags) {
    StageIo io(out);
    Vocab vocab = Vocab::from_json(read_text_file(
        io.in(require_file(path_join(cfg.artifacts.corpus, "vocab.json"), "build-corpus"))));
    auto records = records_from_jsonl(read_text_file(
        io.in(require_file(path_join(cfg.artifacts.corpus, "pretrain.jsonl"), "build-corpus"))));

    std::vector<CorpusRecord> alignment, sequence;
    for (auto& r : records) {
        if (r.kind == RecordKind::alignment) {
            if (!flags.no_alignment_corpus) alignment.push_back(std::move(r));
        } else {
            sequence.push_back(std::move(r));
        }
    }
    if (sequence.empty()) throw DataError("pretrain: no sequence records");

    ModelConfig mc = model_config_for(cfg, vocab);
    check_context(mc, alignment, "pretrain");
    check_context(mc, sequence, "pretrain");

    Model model(mc);
    model.init_params(cfg.seed);
    TrainState state(std::move(model));
    state.rng_seed = cfg.seed;

    AdamParams opt;
    opt.lr = cfg.pretrain.lr;
    opt.warmup_steps = cfg.pretrain.warmup_steps;
    opt.grad_clip = cfg.pretrain.grad_clip;

    Rng order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<size_t> seq_order(sequence.size());
    std::vector<size_t> align_order(alignment.size());
    for (size_t i = 0; i < seq_order.size(); ++i) seq_order[i] = i;
    for (size_t i = 0; i < align_order.size(); ++i) align_order[i] = i;
    order_rng.shuffle(seq_order);
    order_rng.shuffle(align_order);
    size_t seq_cursor = 0, align_cursor = 0, align_draws = 0;

    json trace = json::array();
    double last_loss = 0.0;
    for (int step = 0; step < cfg.pretrain.steps; ++step) {
        int n_align = alignment.empty()
                          ? 0
                          : static_cast<int>(std::lround(cfg.corpus.align_mix * cfg.pretrain.batch_size));
        std::vector<TrainItem> batch;
        for (int b = 0; b < cfg.pretrain.batch_size; ++b) {
            if (b < n_align) {
                const CorpusRecord& rec = alignment[align_order[align_cursor]];
                align_cursor = (align_cursor + 1) % align_order.size();
                if (align_cursor == 0) order_rng.shuffle(align_order);
                // Alternate the masked and causal objectives on alignment text.
                if (align_draws++ % 2 == 0) {
                    MaskedRecord masked =
                        mask_for_pretraining(rec, vocab, cfg.corpus.mask_ratio, cfg.seed + step);
                    TrainItem item = masked_item(masked);
                    if (!item.targets.empty()) {
                        batch.push_back(std::move(item));
                        continue;
                    }
                }
                batch.push_back(causal_item(rec.tokens));
            } else {
                const CorpusRecord& rec = sequence[seq_order[seq_cursor]];
                seq_cursor = (seq_cursor + 1) % seq_order.size();
                if (seq_cursor == 0) order_rng.shuffle(seq_order);
                batch.push_back(causal_item(rec.tokens));
            }
        }
        last_loss = train_step(state, batch, opt);
        if (step % 10 == 0 || step + 1 == cfg.pretrain.steps) {
            trace.push_back({{"step", step}, {"loss", last_loss}});
        }
    }

    Checkpoint ckpt = make_checkpoint(state, vocab.fingerprint());
    save_checkpoint(path_join(io.out_dir, "model.ckpt"), ckpt);
    io.outputs.push_back("model.ckpt");
    json trace_doc;
    trace_doc["loss_trace"] = trace;
    io.write("trace.json", trace_doc.dump(2));

    json report;
    report["stage"] = "pretrain";
    report["steps"] = cfg.pretrain.steps;
    report["final_loss"] = last_loss;
    report["params"] = param_count(mc);
    report["alignment_records"] = alignment.size();
    report["sequence_records"] = sequence.size();
    io.write("pretrain_report.json", report.dump(2));
    io.finish("pretrain", cfg);
    return report.dump(2);
}

std::string stage_sft(const RunConfig& cfg, const std::string& out, const AblationFlags& flags) {
    StageIo io(out);
    Vocab vocab = Vocab::from_json(read_text_file(
        io.in(require_file(path_join(cfg.artifacts.corpus, "vocab.json"), "build-corpus"))));
    auto train_records = records_from_jsonl(read_text_file(
        io.in(require_file(path_join(cfg.artifacts.corpus, "sft_train.jsonl"), "build-corpus"))));
    auto valid_records = records_from_jsonl(read_text_file(
        io.in(require_file(path_join(cfg.artifacts.corpus, "sft_valid.jsonl"), "build-corpus"))));
    if (train_records.empty()) throw DataError("sft: no training records");

    ModelConfig mc = model_config_for(cfg, vocab);
    check_context(mc, train_records, "sft");

    Model model(mc);
    if (flags.no_pretrain) {
        model.init_params(cfg.seed);
    } else {
        Checkpoint pre = load_checkpoint(
            io.in(require_file(path_join(cfg.artifacts.pretrain, "model.ckpt"), "pretrain")),
            vocab.fingerprint());
        if (pre.params.size() != model.n_params())
            throw DataError("sft: pretrain checkpoint does not match the model config");
        model.params() = pre.params;
    }
    TrainState state(std::move(model));
    state.rng_seed = cfg.seed + 1;

    AdamParams opt;
    opt.lr = cfg.sft.lr;
    opt.warmup_steps = cfg.sft.warmup_steps;
    opt.grad_clip = cfg.sft.grad_clip;

    Rng order_rng(cfg.seed ^ 0xb5297a4d1c693c1aULL);
    json trace = json::array();
    double last_loss = 0.0;
    for (int epoch = 0; epoch < cfg.sft.epochs; ++epoch) {
        std::vector<size_t> order(train_records.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(order);
        for (size_t i = 0; i < order.size(); i += static_cast<size_t>(cfg.sft.batch_size)) {
            std::vector<TrainItem> batch;
            size_t end = std::min(order.size(), i + static_cast<size_t>(cfg.sft.batch_size));
            for (size_t k = i; k < end; ++k) batch.push_back(span_item(train_records[order[k]]));
            last_loss = train_step(state, batch, opt);
        }
        trace.push_back({{"epoch", epoch}, {"loss", last_loss}});
    }

    // Distill the speculative draft head on held-out records.
    Checkpoint ckpt = make_checkpoint(state, vocab.fingerprint());
    double draft_ce = 0.0, draft_agreement = 0.0;
    if (cfg.sft.draft_epochs > 0) {
        const auto& distill_source = valid_records.empty() ? train_records : valid_records;
        DraftHead draft(state.model);
        draft_ce = draft.distill(distill_source, cfg.sft.draft_epochs, cfg.sft.draft_lr,
                                 cfg.seed + 7);
        draft_agreement = draft.agreement(distill_source);
        ckpt.draft_params = draft.params();
    }
    save_checkpoint(path_join(io.out_dir, "model.ckpt"), ckpt);
    io.outputs.push_back("model.ckpt");
    json trace_doc;
    trace_doc["loss_trace"] = trace;
    io.write("trace.json", trace_doc.dump(2));

    json report;
    report["stage"] = "sft";
    report["epochs"] = cfg.sft.epochs;
    report["records"] = train_records.size();
    report["final_loss"] = last_loss;
    report["draft_ce"] = draft_ce;
    report["draft_agreement"] = draft_agreement;
    report["pretrain_initialized"] = !flags.no_pretrain;
    io.write("sft_report.json", report.dump(2));
    io.finish("sft", cfg);
    return report.dump(2);
}

std::string stage_dpo(const RunConfig& cfg, const std::string& out) {
    StageIo io(out);
    LoadedDataset data = load_dataset_dir(cfg.artifacts.dataset);
    Vocab vocab = Vocab::from_json(read_text_file(
        io.in(require_file(path_join(cfg.artifacts.corpus, "vocab.json"), "build-corpus"))));
    SidAssignment sids = sid_map_from_json(read_text_file(
        io.in(require_file(path_join(cfg.artifacts.sids, "sid_map.json"), "build-sids"))));
    auto profiles = profiles_from_json(read_text_file(
        io.in(require_file(path_join(cfg.artifacts.corpus, "profiles.json"), "build-corpus"))));
    Checkpoint sft_ckpt = load_checkpoint(
        io.in(require_file(path_join(cfg.artifacts.sft, "model.ckpt"), "sft")), vocab.fingerprint());

    Model policy_model(sft_ckpt.config);
    policy_model.params() = sft_ckpt.params;
    Model reference(sft_ckpt.config);
    reference.params() = sft_ckpt.params;

    SidTrie trie = SidTrie::build(sids, vocab);
    const int tz = data.tz_offset_minutes;
    PromptBuilder builder(data.ds.catalog, sids, profiles, cfg.corpus.geohash_precision, tz, {});
    Judge judge(judge_config(cfg));
    CognitionParams params = cognition_params(cfg, tz);

    auto contexts = build_eval_contexts(data.ds, data.has_weather ? &data.weather : nullptr,
                                        cfg.corpus.history_checkins, &data.ds.valid);

    // Pair contexts: natural ones plus (optionally) rain-forced variants.
    std::vector<PairContext> pair_contexts;
    Rng rng(cfg.seed + 11);
    for (const auto& base_ctx : contexts) {
        if (static_cast<int>(pair_contexts.size()) >= 2 * cfg.dpo.max_pairs) break;
        std::vector<EvalContext> variants = {base_ctx};
        if (cfg.dpo.rain_injection && base_ctx.situation.weather != Weather::rain) {
            EvalContext wet = base_ctx;
            wet.situation.weather = Weather::rain;
            wet.truth_poi.clear();  // forced weather invalidates the recorded truth
            variants.push_back(std::move(wet));
        }
        for (const auto& ctx : variants) {
            PairContext pc;
            pc.truth_poi = ctx.truth_poi;
            std::string prompt = builder.prompt_text(ctx.user_id, ctx.history.check_ins, ctx.situation);
            pc.prompt_tokens.push_back(kBosId);
            for (int id : vocab.encode(prompt)) pc.prompt_tokens.push_back(id);
            pc.prompt_tokens.push_back(kSepId);

            std::set<std::string> candidate_ids;
            if (!ctx.truth_poi.empty()) candidate_ids.insert(ctx.truth_poi);
            GenerateResult pred = generate(policy_model, trie, pc.prompt_tokens,
                                           cfg.serve.max_new_tokens, nullptr, cfg.serve.gamma);
            if (!pred.poi_id.empty()) candidate_ids.insert(pred.poi_id);

            // Nearest venues make natural alternates; one random keeps variety.
            std::vector<std::pair<double, std::string>> near;
            for (const auto& p : data.ds.catalog.pois()) {
                near.emplace_back(haversine(ctx.situation.location, p.point), p.poi_id);
            }
            std::sort(near.begin(), near.end());
            for (const auto& [d, id] : near) {
                if (static_cast<int>(candidate_ids.size()) >= 2 + cfg.dpo.n_distractors) break;
                candidate_ids.insert(id);
            }
            candidate_ids.insert(near[rng.below(near.size())].second);

            UserProfile profile;
            auto pit = profiles.find(ctx.user_id);
            if (pit != profiles.end()) profile = pit->second;
            for (const auto& id : candidate_ids) {
                CandidateScore cs;
                cs.poi_id = id;
                cs.scores = score_candidate(ctx.history, data.ds.catalog, profile, ctx.situation,
                                            data.ds.catalog.get(id), judge, params);
                pc.candidates.push_back(std::move(cs));
            }
            pair_contexts.push_back(std::move(pc));
        }
    }

    auto pairs = build_pairs(pair_contexts, sids, vocab, cfg.seed + 13);
    if (static_cast<int>(pairs.size()) > cfg.dpo.max_pairs) pairs.resize(static_cast<size_t>(cfg.dpo.max_pairs));
    io.write("pairs.jsonl", pairs_to_jsonl(pairs));

    TrainState state(std::move(policy_model));
    state.rng_seed = cfg.seed + 2;
    DpoConfig dc;
    dc.beta = cfg.dpo.beta;
    dc.lr = cfg.dpo.lr;
    dc.max_epochs = cfg.dpo.epochs;
    dc.batch_size = cfg.dpo.batch_size;
    DpoTrace dpo_trace = dpo_train(state, reference, pairs, dc);

    Checkpoint ckpt = make_checkpoint(state, vocab.fingerprint());
    ckpt.draft_params = sft_ckpt.draft_params;
    save_checkpoint(path_join(io.out_dir, "model.ckpt"), ckpt);
    io.outputs.push_back("model.ckpt");

    json report;
    report["stage"] = "dpo";
    report["pairs"] = pairs.size();
    report["steps"] = dpo_trace.steps;
    report["mean_margin_per_epoch"] = dpo_trace.mean_margin_per_epoch;
    io.write("dpo_report.json", report.dump(2));
    io.finish("dpo", cfg);
    return report.dump(2);
}

std::string resolve_checkpoint(const RunConfig& cfg) {
    const std::string& which = cfg.eval.checkpoint;
    if (which == "sft") return path_join(cfg.artifacts.sft, "model.ckpt");
    if (which == "dpo") return path_join(cfg.artifacts.dpo, "model.ckpt");
    if (which == "auto") {
        std::string dpo_path = path_join(cfg.artifacts.dpo, "model.ckpt");
        if (fs::exists(dpo_path)) return dpo_path;
        return path_join(cfg.artifacts.sft, "model.ckpt");
    }
    return which;  // explicit path
}

Engine make_engine(const RunConfig& cfg) {
    EngineOptions opt;
    opt.mode = cfg.serve.mode;
    opt.gamma = cfg.serve.gamma;
    opt.max_new_tokens = cfg.serve.max_new_tokens;
    opt.queue_capacity = cfg.serve.queue_capacity;
    std::string ckpt = resolve_checkpoint(cfg);
    require_file(ckpt, "sft");
    return Engine(ckpt, require_file(path_join(cfg.artifacts.corpus, "vocab.json"), "build-corpus"),
                  require_file(path_join(cfg.artifacts.sids, "sid_map.json"), "build-sids"), opt);
}

std::string stage_eval(const RunConfig& cfg, const std::string& out, const AblationFlags& flags) {
    StageIo io(out);
    LoadedDataset data = load_dataset_dir(cfg.artifacts.dataset);
    auto profiles = profiles_from_json(read_text_file(
        io.in(require_file(path_join(cfg.artifacts.corpus, "profiles.json"), "build-corpus"))));
    Engine engine = make_engine(cfg);
    io.in(resolve_checkpoint(cfg));

    const int tz = data.tz_offset_minutes;
    PromptBuilder builder(data.ds.catalog, engine.sids(), profiles, cfg.corpus.geohash_precision,
                          tz, flags);
    Judge judge(judge_config(cfg));
    CognitionParams params = cognition_params(cfg, tz);

    auto contexts = build_eval_contexts(data.ds, data.has_weather ? &data.weather : nullptr,
                                        cfg.corpus.history_checkins);

    Predictor model_pred = [&](const EvalContext& ctx) {
        std::string prompt = builder.prompt_text(ctx.user_id, ctx.history.check_ins, ctx.situation);
        GenerateResult gen = engine.predict(engine.encode_prompt(prompt), false);
        return gen.poi_id;
    };
    EvalReport model_report =
        evaluate(contexts, data.ds.catalog, profiles, judge, params, model_pred);

    MarkovBaseline markov = markov_fit(group_by_user(data.ds.train));
    Predictor markov_pred = [&](const EvalContext& ctx) {
        return markov.predict(ctx.history.check_ins.back().poi_id);
    };
    EvalReport markov_report =
        evaluate(contexts, data.ds.catalog, profiles, judge, params, markov_pred);

    io.write("eval_model.json", model_report.to_json());
    io.write("eval_markov.json", markov_report.to_json());
    io.write("per_sample.csv", model_report.samples_csv());
    std::string cmp = compare_reports(model_report, markov_report);
    io.write("compare.json", cmp);

    json report;
    report["stage"] = "eval";
    report["model"] = json::parse(model_report.to_json());
    report["markov"] = json::parse(markov_report.to_json());
    report["compare"] = json::parse(cmp);
    io.finish("eval", cfg);
    return report.dump(2);
}

std::string stage_ablate(const RunConfig& cfg, const std::string& out) {
    StageIo io(out);
    struct Variant {
        std::string name;
        AblationFlags flags;
    };
    std::vector<Variant> variants = {
        {"full", {}},
        {"no_profile", {.no_profile = true}},
        {"no_situation", {.no_situation = true}},
        {"no_alignment_corpus", {.no_alignment_corpus = true}},
        {"no_pretrain", {.no_pretrain = true}},
    };

    json report;
    report["stage"] = "ablate";
    json runs = json::object();
    for (const auto& v : variants) {
        RunConfig vc = cfg;
        std::string base = path_join(out, v.name);
        vc.artifacts.corpus = path_join(base, "corpus");
        vc.artifacts.pretrain = path_join(base, "pretrain");
        vc.artifacts.sft = path_join(base, "sft");
        vc.artifacts.dpo = path_join(base, "dpo");  // not produced; eval falls back to sft
        vc.eval.checkpoint = "sft";

        stage_build_corpus(vc, vc.artifacts.corpus, v.flags);
        if (!v.flags.no_pretrain) stage_pretrain(vc, vc.artifacts.pretrain, v.flags);
        stage_sft(vc, vc.artifacts.sft, v.flags);
        std::string eval_json = stage_eval(vc, path_join(base, "eval"), v.flags);
        runs[v.name] = json::parse(eval_json)["model"];
    }
    report["runs"] = runs;

    double full_cas = runs["full"]["a_cas"].get<double>();
    json degradation = json::object();
    for (const auto& v : variants) {
        if (v.name == "full") continue;
        degradation[v.name] = full_cas - runs[v.name]["a_cas"].get<double>();
    }
    report["a_cas_degradation_vs_full"] = degradation;
    io.write("ablate_report.json", report.dump(2));
    io.finish("ablate", cfg);
    return report.dump(2);
}

std::string stage_bench_latency(const RunConfig& cfg, const std::string& out) {
    StageIo io(out);
    LoadedDataset data = load_dataset_dir(cfg.artifacts.dataset);
    auto profiles = profiles_from_json(read_text_file(
        io.in(require_file(path_join(cfg.artifacts.corpus, "profiles.json"), "build-corpus"))));
    Engine engine = make_engine(cfg);

    const int tz = data.tz_offset_minutes;
    PromptBuilder builder(data.ds.catalog, engine.sids(), profiles, cfg.corpus.geohash_precision,
                          tz, {});
    auto contexts = build_eval_contexts(data.ds, data.has_weather ? &data.weather : nullptr,
                                        cfg.corpus.history_checkins);

    std::vector<PipelineRequest> requests;
    for (size_t i = 0; i < contexts.size() && requests.size() < 64; ++i) {
        PipelineRequest r;
        r.id = "req" + std::to_string(i);
        std::string prompt = builder.prompt_text(contexts[i].user_id,
                                                 contexts[i].history.check_ins,
                                                 contexts[i].situation);
        r.prompt = engine.encode_prompt(prompt);
        r.max_new_tokens = cfg.serve.max_new_tokens;
        r.speculative = cfg.serve.mode == "speculative" && engine.has_draft();
        requests.push_back(std::move(r));
    }
    if (requests.empty()) throw DataError("bench-latency: no requests available");

    LatencyStats serial_stats;
    run_serial(engine.model(), engine.trie(), nullptr, cfg.serve.gamma, requests, &serial_stats);
    LatencyStats pipe_stats;
    engine.run_batch(requests, 1, 1, &pipe_stats);

    json report;
    report["stage"] = "bench-latency";
    report["requests"] = requests.size();
    report["serial"] = json::parse(serial_stats.to_json());
    report["pipeline_1_1"] = json::parse(pipe_stats.to_json());
    report["throughput_speedup"] =
        serial_stats.requests_per_sec > 0 ? pipe_stats.requests_per_sec / serial_stats.requests_per_sec
                                          : 0.0;
    io.write("latency_report.json", report.dump(2));
    io.finish("bench-latency", cfg);
    return report.dump(2);
}

std::string stage_gradcheck(const RunConfig& cfg, const std::string& out) {
    StageIo io(out);
    ModelConfig tiny;
    tiny.d_model = 16;
    tiny.n_heads = 4;
    tiny.n_layers = 2;
    tiny.context_len = 16;
    tiny.vocab_size = 23;
    tiny.seed = cfg.seed;
    GradCheckReport model_report = gradcheck_model(tiny, 12, cfg.seed);
    GradCheckReport dpo_report = gradcheck_dpo(tiny, 12, cfg.seed + 1, cfg.dpo.beta);

    json report;
    report["stage"] = "gradcheck";
    report["model_max_rel_err"] = model_report.max_rel_err;
    report["dpo_max_rel_err"] = dpo_report.max_rel_err;
    report["probes_each"] = 12;
    report["threshold"] = 1e-3;
    report["pass"] = model_report.max_rel_err < 1e-3 && dpo_report.max_rel_err < 1e-3;
    io.write("gradcheck_report.json", report.dump(2));
    io.finish("gradcheck", cfg);
    return report.dump(2);
}

std::string run_stage(const std::string& stage, const RunConfig& cfg, const std::string& out_dir) {
    if (stage == "synth") return stage_synth(cfg, out_dir);
    if (stage == "ingest") return stage_ingest(cfg, out_dir);
    if (stage == "build-sids") return stage_build_sids(cfg, out_dir);
    if (stage == "build-corpus") return stage_build_corpus(cfg, out_dir);
    if (stage == "pretrain") return stage_pretrain(cfg, out_dir);
    if (stage == "sft") return stage_sft(cfg, out_dir);
    if (stage == "dpo") return stage_dpo(cfg, out_dir);
    if (stage == "eval") return stage_eval(cfg, out_dir);
    if (stage == "ablate") return stage_ablate(cfg, out_dir);
    if (stage == "bench-latency") return stage_bench_latency(cfg, out_dir);
    if (stage == "gradcheck") return stage_gradcheck(cfg, out_dir);
    throw ConfigError("unknown stage: " + stage);
}

}  // namespace roam
