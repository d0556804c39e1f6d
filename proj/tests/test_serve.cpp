// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "roam/serve.hpp"
#include "roam/util.hpp"

using namespace roam;

namespace {

// A small synthetic serving world: random catalog entries with hand-assigned
// SIDs, an untrained (random-weight) model, and a trie over the vocabulary.
struct ServeWorld {
    Catalog catalog;
    SidAssignment sids;
    Vocab vocab;
    Model model;
    SidTrie trie;

    ServeWorld(int n_pois, int levels, int codes_per_level, uint64_t seed, ModelConfig base = {})
        : model(configure(base, n_pois, levels, codes_per_level, seed)) {
        Rng rng(seed);
        std::set<std::vector<int>> used;
        for (int i = 0; i < n_pois; ++i) {
            std::string id = "p" + std::to_string(100 + i);
            Poi p;
            p.poi_id = id;
            p.name = id;
            p.point = GeoPoint(rng.uniform(), rng.uniform());
            p.category_path = {"cafe"};
            catalog.add(p);
            Sid s;
            do {
                s.codes.clear();
                for (int l = 0; l < levels; ++l) s.codes.push_back(rng.index(static_cast<size_t>(codes_per_level)));
            } while (!used.insert(s.codes).second);
            sids.by_poi[id] = s;
            sids.to_poi[render_sid(s)] = id;
        }
        catalog.sort_by_id();
        vocab = Vocab::build(catalog, sids, {"some words to fill the base range"}, 5);
        ModelConfig cfg = model.config();
        (void)cfg;
        model.init_params(seed + 1);
        trie = SidTrie::build(sids, vocab);
    }

    static ModelConfig configure(ModelConfig base, int n_pois, int levels, int codes, uint64_t seed) {
        (void)n_pois;
        ModelConfig cfg = base;
        if (cfg.d_model == 128) {
            cfg.d_model = 16;
            cfg.n_heads = 4;
            cfg.n_layers = 2;
            cfg.context_len = 64;
        }
        // vocab layout: 5 specials + levels*(max_code+1) sids + cells + words;
        // build a scratch vocabulary to size it exactly
        Catalog scratch_catalog;
        SidAssignment scratch;
        Rng rng(seed);
        std::set<std::vector<int>> used;
        for (int i = 0; i < n_pois; ++i) {
            std::string id = "p" + std::to_string(100 + i);
            Poi p;
            p.poi_id = id;
            p.name = id;
            p.point = GeoPoint(rng.uniform(), rng.uniform());
            p.category_path = {"cafe"};
            scratch_catalog.add(p);
            Sid s;
            do {
                s.codes.clear();
                for (int l = 0; l < levels; ++l) s.codes.push_back(rng.index(static_cast<size_t>(codes)));
            } while (!used.insert(s.codes).second);
            scratch.by_poi[id] = s;
            scratch.to_poi[render_sid(s)] = id;
        }
        Vocab v = Vocab::build(scratch_catalog, scratch, {"some words to fill the base range"}, 5);
        cfg.vocab_size = static_cast<int>(v.size());
        cfg.seed = seed;
        return cfg;
    }

    std::vector<int> random_prompt(Rng& rng, int len) const {
        std::vector<int> p;
        p.push_back(kBosId);
        for (int i = 0; i < len; ++i) p.push_back(rng.index(vocab.size()));
        p.push_back(kSepId);
        return p;
    }
};

// Drafter that consults the target model itself: every proposal is exact.
class OracleDrafter : public Drafter {
public:
    explicit OracleDrafter(const Model& model) : model_(&model) {}
    void begin_round(const std::vector<int>& prefix_with_next,
                     const std::vector<double>& prev_hidden) override {
        (void)prev_hidden;
        cache_ = model_->make_cache();
        logits_ = model_->prefill(cache_, prefix_with_next);
    }
    int next(const SidTrie& trie, int trie_node) override {
        int tok = constrained_greedy(logits_, trie, trie_node);
        logits_ = model_->extend(cache_, {tok}).back();
        return tok;
    }

private:
    const Model* model_;
    KvCache cache_;
    std::vector<double> logits_;
};

// Adversarial drafter: picks the constrained argmin, guaranteed wrong unless
// the node is forced.
class ArgminDrafter : public Drafter {
public:
    explicit ArgminDrafter(const Model& model) : model_(&model) {}
    void begin_round(const std::vector<int>& prefix_with_next,
                     const std::vector<double>& prev_hidden) override {
        (void)prev_hidden;
        cache_ = model_->make_cache();
        logits_ = model_->prefill(cache_, prefix_with_next);
    }
    int next(const SidTrie& trie, int trie_node) override {
        const auto& children = trie.node(trie_node).children;
        int worst = -1;
        double worst_logit = 1e300;
        for (const auto& [token, child] : children) {
            if (logits_[static_cast<size_t>(token)] < worst_logit) {
                worst_logit = logits_[static_cast<size_t>(token)];
                worst = token;
            }
        }
        logits_ = model_->extend(cache_, {worst}).back();
        return worst;
    }

private:
    const Model* model_;
    KvCache cache_;
    std::vector<double> logits_;
};

}  // namespace

TEST_CASE("trie over a single POI is a single path") {
    ServeWorld w(1, 3, 4, 5);
    CHECK(w.trie.leaf_count() == 1);
    int node = w.trie.root();
    int depth = 0;
    while (!w.trie.is_leaf(node)) {
        REQUIRE(w.trie.node(node).children.size() == 1);
        node = w.trie.node(node).children.begin()->second;
        depth++;
    }
    CHECK(depth == 3);
    CHECK(w.trie.poi_at(node) == w.catalog.pois()[0].poi_id);
}

TEST_CASE("trie leaf count equals catalog size") {
    ServeWorld w(60, 3, 6, 7);
    CHECK(w.trie.leaf_count() == 60);
}

TEST_CASE("random trie walks always end at a resolvable POI") {
    ServeWorld w(40, 3, 5, 9);
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
        int node = w.trie.root();
        std::vector<std::string> toks;
        while (!w.trie.is_leaf(node)) {
            const auto& children = w.trie.node(node).children;
            auto it = children.begin();
            std::advance(it, static_cast<long>(rng.below(children.size())));
            toks.push_back(w.vocab.token_of(it->first));
            node = it->second;
        }
        std::string rendered;
        for (const auto& t : toks) rendered += t;
        CHECK(w.sids.to_poi.count(rendered) == 1);
        CHECK(w.sids.to_poi.at(rendered) == w.trie.poi_at(node));
    }
}

TEST_CASE("duplicate SID paths are a hard error") {
    Catalog catalog;
    Poi p;
    p.poi_id = "a";
    p.name = "a";
    p.point = GeoPoint(0, 0);
    p.category_path = {"cafe"};
    catalog.add(p);
    SidAssignment sids;
    Sid s1;
    s1.codes = {1, 2};
    sids.by_poi["a"] = s1;
    sids.to_poi[render_sid(s1)] = "a";
    Sid s2;
    s2.codes = {1};  // prefix of s1: its leaf lies on s1's path
    sids.by_poi["b"] = s2;
    sids.to_poi[render_sid(s2)] = "b";
    Vocab vocab = Vocab::build(catalog, sids, {}, 5);
    CHECK_THROWS_AS(SidTrie::build(sids, vocab), DataError);
}

TEST_CASE("constrained greedy respects children and tie-breaks by token id") {
    ServeWorld w(8, 2, 3, 13);
    // find a node with at least 2 children
    int node = w.trie.root();
    REQUIRE(w.trie.node(node).children.size() >= 2);
    std::vector<int> child_tokens;
    for (const auto& [tok, child] : w.trie.node(node).children) child_tokens.push_back(tok);

    std::vector<double> logits(w.vocab.size(), 0.0);
    // favor the second child explicitly
    logits[static_cast<size_t>(child_tokens[1])] = 5.0;
    CHECK(constrained_greedy(logits, w.trie, node) == child_tokens[1]);
    // out-of-trie tokens never win, however large
    logits.assign(w.vocab.size(), 0.0);
    logits[0] = 100.0;  // <pad> is not a child
    CHECK(constrained_greedy(logits, w.trie, node) == child_tokens[0]);
    // exact ties resolve to the lowest token id
    logits.assign(w.vocab.size(), 1.0);
    CHECK(constrained_greedy(logits, w.trie, node) == child_tokens[0]);

    // single-child nodes are forced regardless of logits
    int forced_node = -1;
    for (size_t i = 0; i < w.trie.node_count(); ++i) {
        if (!w.trie.is_leaf(static_cast<int>(i)) &&
            w.trie.node(static_cast<int>(i)).children.size() == 1) {
            forced_node = static_cast<int>(i);
            break;
        }
    }
    if (forced_node >= 0) {
        std::vector<double> anti(w.vocab.size(), 0.0);
        int only = w.trie.node(forced_node).children.begin()->first;
        anti[static_cast<size_t>(only)] = -100.0;
        CHECK(constrained_greedy(anti, w.trie, forced_node) == only);
    }
}

TEST_CASE("prefill-then-decode equals full-recompute greedy") {
    ServeWorld w(30, 3, 5, 17);
    Rng rng(18);
    for (int trial = 0; trial < 20; ++trial) {
        auto prompt = w.random_prompt(rng, 12);
        GenerateResult gen = generate(w.model, w.trie, prompt, 8);

        // Oracle: recompute the full sequence from scratch for every token.
        std::vector<int> tokens = prompt;
        std::vector<int> expected;
        int node = w.trie.root();
        while (!w.trie.is_leaf(node) && static_cast<int>(expected.size()) < 8) {
            auto probs = w.model.forward_probs(tokens);
            const auto& row = probs.back();
            int best = -1;
            double best_p = -1;
            for (const auto& [tok, child] : w.trie.node(node).children) {
                if (row[static_cast<size_t>(tok)] > best_p) {
                    best_p = row[static_cast<size_t>(tok)];
                    best = tok;
                }
            }
            expected.push_back(best);
            node = w.trie.child(node, best);
            tokens.push_back(best);
        }
        CHECK(gen.tokens == expected);
        CHECK(gen.poi_id == w.trie.poi_at(node));
    }
}

TEST_CASE("empty continuation request decodes nothing") {
    ServeWorld w(10, 3, 4, 19);
    Rng rng(20);
    GenerateResult gen = generate(w.model, w.trie, w.random_prompt(rng, 6), 0);
    CHECK(gen.tokens.empty());
    CHECK(gen.poi_id.empty());
}

TEST_CASE("cache length grows by one per decode step") {
    ServeWorld w(10, 3, 4, 21);
    Rng rng(22);
    auto prompt = w.random_prompt(rng, 6);
    KvCache cache = w.model.make_cache();
    w.model.prefill(cache, prompt);
    int len0 = cache.len;
    w.model.extend(cache, {kPadId});
    CHECK(cache.len == len0 + 1);
    w.model.extend(cache, {kPadId});
    CHECK(cache.len == len0 + 2);
}

TEST_CASE("perfect drafts are all accepted and rounds are ceil(len/gamma)") {
    ServeWorld w(40, 3, 6, 23);
    Rng rng(24);
    for (int trial = 0; trial < 10; ++trial) {
        auto prompt = w.random_prompt(rng, 10);
        GenerateResult vanilla = generate(w.model, w.trie, prompt, 8);
        OracleDrafter oracle(w.model);
        GenerateResult spec = generate(w.model, w.trie, prompt, 8, &oracle, 3);
        CHECK(spec.tokens == vanilla.tokens);
        CHECK(spec.poi_id == vanilla.poi_id);
        CHECK(spec.accepted_drafts == spec.proposed_drafts);
        int len = static_cast<int>(vanilla.tokens.size());
        CHECK(spec.draft_rounds == (len + 2) / 3);
    }
}

TEST_CASE("adversarial drafts are all rejected yet the output stays exact") {
    ServeWorld w(40, 3, 6, 25);
    Rng rng(26);
    for (int trial = 0; trial < 10; ++trial) {
        auto prompt = w.random_prompt(rng, 10);
        GenerateResult vanilla = generate(w.model, w.trie, prompt, 8);
        ArgminDrafter argmin(w.model);
        GenerateResult spec = generate(w.model, w.trie, prompt, 8, &argmin, 3);
        CHECK(spec.tokens == vanilla.tokens);
        CHECK(spec.poi_id == vanilla.poi_id);
        // nodes with a single child are forced, so count only free proposals
        if (spec.proposed_drafts > 0) {
            // every free-choice draft must have been rejected
            std::map<int, int> node_arity;
            CHECK(spec.accepted_drafts <= spec.proposed_drafts);
        }
    }
}

TEST_CASE("trained draft head speculative decoding is token-exact on 100 prompts") {
    ServeWorld w(50, 3, 6, 27);
    Rng rng(28);

    // Distill the draft head on synthetic sft-like records sampled from the model.
    std::vector<CorpusRecord> records;
    for (int i = 0; i < 30; ++i) {
        CorpusRecord rec;
        rec.kind = RecordKind::sft;
        auto prompt = w.random_prompt(rng, 8);
        GenerateResult gen = generate(w.model, w.trie, prompt, 8);
        rec.tokens = prompt;
        rec.prompt = Span{0, static_cast<int>(prompt.size())};
        for (int t : gen.tokens) rec.tokens.push_back(t);
        rec.tokens.push_back(kEosId);
        rec.response = Span{static_cast<int>(prompt.size()), static_cast<int>(rec.tokens.size())};
        records.push_back(std::move(rec));
    }
    DraftHead draft(w.model);
    draft.distill(records, 2, 1e-3, 29);

    long accepted = 0, proposed = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto prompt = w.random_prompt(rng, 10);
        GenerateResult vanilla = generate(w.model, w.trie, prompt, 8);
        GenerateResult spec = generate(w.model, w.trie, prompt, 8, &draft, 3);
        REQUIRE(spec.tokens == vanilla.tokens);
        REQUIRE(spec.poi_id == vanilla.poi_id);
        accepted += spec.accepted_drafts;
        proposed += spec.proposed_drafts;
    }
    CHECK(proposed > 0);
    double rate = static_cast<double>(accepted) / static_cast<double>(proposed);
    CHECK(rate >= 0.0);
    CHECK(rate <= 1.0);
    MESSAGE("draft acceptance rate: ", rate);
}

TEST_CASE("single pipeline request equals direct generation") {
    ServeWorld w(20, 3, 5, 31);
    Rng rng(32);
    PipelineRequest req;
    req.id = "r0";
    req.prompt = w.random_prompt(rng, 10);
    req.max_new_tokens = 8;
    LatencyStats stats;
    auto results = run_pipeline(w.model, w.trie, nullptr, 3, {req}, 1, 1, 4, &stats);
    REQUIRE(results.size() == 1);
    GenerateResult direct = generate(w.model, w.trie, req.prompt, 8);
    CHECK(results[0].tokens == direct.tokens);
    CHECK(results[0].poi_id == direct.poi_id);
    CHECK(stats.p50_ms <= stats.p99_ms);
}

TEST_CASE("pipeline results are identical across worker configurations") {
    ServeWorld w(30, 3, 5, 33);
    Rng rng(34);
    std::vector<PipelineRequest> requests;
    for (int i = 0; i < 24; ++i) {
        PipelineRequest req;
        req.id = "r" + std::to_string(i);
        req.prompt = w.random_prompt(rng, 8 + static_cast<int>(rng.below(6)));
        req.max_new_tokens = 8;
        requests.push_back(std::move(req));
    }
    std::vector<std::pair<int, int>> configs = {{1, 1}, {2, 1}, {1, 2}, {2, 2}};
    std::vector<std::map<std::string, std::vector<int>>> outputs;
    for (auto [n1, n2] : configs) {
        LatencyStats stats;
        auto results = run_pipeline(w.model, w.trie, nullptr, 3, requests, n1, n2, 4, &stats);
        std::map<std::string, std::vector<int>> by_id;
        for (const auto& r : results) by_id[r.id] = r.tokens;
        outputs.push_back(std::move(by_id));
        CHECK(stats.p50_ms <= stats.p99_ms);
    }
    for (size_t i = 1; i < outputs.size(); ++i) CHECK(outputs[i] == outputs[0]);
}

TEST_CASE("pipeline respects a tiny queue without dropping requests") {
    ServeWorld w(20, 3, 5, 35);
    Rng rng(36);
    std::vector<PipelineRequest> requests;
    for (int i = 0; i < 16; ++i) {
        PipelineRequest req;
        req.id = "r" + std::to_string(i);
        req.prompt = w.random_prompt(rng, 6);
        req.max_new_tokens = 8;
        requests.push_back(std::move(req));
    }
    LatencyStats stats;
    auto results = run_pipeline(w.model, w.trie, nullptr, 3, requests, 2, 1, 1, &stats);
    CHECK(results.size() == 16);
    for (const auto& r : results) CHECK_FALSE(r.poi_id.empty());
    CHECK(stats.requests_per_sec > 0.0);
}

TEST_CASE("serial runner matches the pipeline outputs") {
    ServeWorld w(20, 3, 5, 37);
    Rng rng(38);
    std::vector<PipelineRequest> requests;
    for (int i = 0; i < 8; ++i) {
        PipelineRequest req;
        req.id = "r" + std::to_string(i);
        req.prompt = w.random_prompt(rng, 6);
        req.max_new_tokens = 8;
        requests.push_back(std::move(req));
    }
    LatencyStats serial_stats, pipe_stats;
    auto serial = run_serial(w.model, w.trie, nullptr, 3, requests, &serial_stats);
    auto piped = run_pipeline(w.model, w.trie, nullptr, 3, requests, 1, 1, 4, &pipe_stats);
    REQUIRE(serial.size() == piped.size());
    for (size_t i = 0; i < serial.size(); ++i) {
        CHECK(serial[i].tokens == piped[i].tokens);
        CHECK(serial[i].poi_id == piped[i].poi_id);
    }
}
