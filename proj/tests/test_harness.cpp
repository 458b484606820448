// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reportrl/corpus.hpp"
#include "reportrl/harness.hpp"
#include "reportrl/util.hpp"

using namespace reportrl;
using namespace reportrl::harness;
namespace fs = std::filesystem;

namespace {

// Shrunk config: full pipeline in a few seconds.
RunConfig small_config(const std::string& out_dir, std::uint64_t seed = 4242) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.out_dir = out_dir;
    cfg.workers = 2;
    cfg.data.n_train = 320;
    cfg.data.n_val = 60;
    cfg.data.n_test = 60;
    cfg.classifier.epochs = 6;
    cfg.sft.epochs = 3;
    cfg.rl.steps = 30;
    cfg.rl.n_rollouts = 4;
    cfg.selection.k_samples = 6;
    cfg.selection.fraction = 0.3;
    return cfg;
}

std::string fresh_dir(const std::string& name) {
    std::string dir = "/tmp/reportrl_harness/" + name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int count_fields(const std::string& line) {
    return static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
}

} // namespace

TEST_CASE("config round-trips through json with defaults intact") {
    RunConfig a;
    RunConfig b = RunConfig::from_json(a.to_json());
    CHECK(b.to_json() == a.to_json());
    CHECK(b.seed == 12345);
    CHECK(b.rl.mode == "ditpo_grad");
    CHECK(b.reward.schedule == "two_phase");
}

TEST_CASE("unknown config keys are rejected by scoped name") {
    auto j = RunConfig{}.to_json();
    j["rl"]["stepz"] = 10;
    CHECK_THROWS_WITH_AS(RunConfig::from_json(j), doctest::Contains("rl.stepz"),
                         std::invalid_argument);
    auto j2 = RunConfig{}.to_json();
    j2["bogus"] = 1;
    CHECK_THROWS_WITH_AS(RunConfig::from_json(j2), doctest::Contains("bogus"),
                         std::invalid_argument);
}

TEST_CASE("invalid mode and schedule are rejected at parse time") {
    auto j = RunConfig{}.to_json();
    j["rl"]["mode"] = "ppo";
    CHECK_THROWS_AS(RunConfig::from_json(j), std::invalid_argument);
    auto j2 = RunConfig{}.to_json();
    j2["reward"]["schedule"] = "cosine";
    CHECK_THROWS_AS(RunConfig::from_json(j2), std::invalid_argument);
}

TEST_CASE("config loads from a file and reports parse errors") {
    const std::string path = "/tmp/reportrl_cfg.json";
    auto j = RunConfig{}.to_json();
    j["seed"] = 99;
    write_text_file(path, j.dump(2));
    CHECK(RunConfig::load(path).seed == 99);
    write_text_file(path, "{oops");
    CHECK_THROWS(RunConfig::load(path));
}

TEST_CASE("dotted overrides hit nested keys and keep value types") {
    auto j = RunConfig{}.to_json();
    j = apply_overrides(j, {"rl.steps=42", "rl.lr=0.5", "rl.use_selection=false",
                            "rl.mode=grpo", "data.catalog_path=/x/y.json", "seed=7"});
    RunConfig cfg = RunConfig::from_json(j);
    CHECK(cfg.rl.steps == 42);
    CHECK(cfg.rl.lr == 0.5);
    CHECK(cfg.rl.use_selection == false);
    CHECK(cfg.rl.mode == "grpo");
    CHECK(cfg.data.catalog_path == "/x/y.json");
    CHECK(cfg.seed == 7);

    CHECK_THROWS_AS(apply_overrides(RunConfig{}.to_json(), {"rl.nope=1"}),
                    std::invalid_argument);
    CHECK_THROWS_AS(apply_overrides(RunConfig{}.to_json(), {"rl.steps"}),
                    std::invalid_argument); // missing '='
}

TEST_CASE("provenance excludes execution-only fields so hashes agree") {
    RunConfig a = small_config("/tmp/a");
    RunConfig b = a;
    b.out_dir = "/somewhere/else";
    b.workers = 16;
    CHECK(a.provenance_json() == b.provenance_json());
    CHECK(a.config_hash() == b.config_hash());
    CHECK(!a.provenance_json().contains("workers"));
    CHECK(!a.provenance_json().contains("out_dir"));
    CHECK(a.to_json().contains("workers")); // still part of the full config

    RunConfig c = a;
    c.rl.alpha = 5.0;
    CHECK(c.config_hash() != a.config_hash());
}

TEST_CASE("reward schedule wiring: switch lands at round(frac * steps)") {
    RunConfig cfg;
    cfg.rl.steps = 300;
    cfg.reward.schedule = "two_phase";
    cfg.reward.gamma = 0.25;
    cfg.reward.phase_switch_frac = 0.6;
    auto rc = cfg.reward_config();
    CHECK(rc.gamma_at(179) == 0.0);
    CHECK(rc.gamma_at(180) == 0.25);

    cfg.reward.schedule = "constant";
    auto rc2 = cfg.reward_config();
    CHECK(rc2.gamma_at(0) == 0.25);
    CHECK(rc2.gamma_at(100000) == 0.25);
}

TEST_CASE("advantage config mirrors the rl section") {
    RunConfig cfg;
    cfg.rl.mode = "ditpo_rule";
    cfg.rl.alpha = 2.5;
    cfg.rl.beta = 0.5;
    cfg.rl.saliency_agg = 2;
    auto ac = cfg.advantage_config();
    CHECK(ac.mode == optim::Mode::DitpoRule);
    CHECK(ac.alpha == 2.5);
    CHECK(ac.beta == 0.5);
    CHECK(ac.saliency_agg == 2);
}

TEST_CASE("copying the reference scores exactly 1.0 on every metric") {
    auto cat = corpus::default_catalog();
    corpus::GeneratorConfig gc;
    gc.prevalence.assign(6, 0.3);
    auto cases = corpus::generate_corpus(cat, gc, 80, 501, 2);
    auto tok = corpus::PolicyTokenizer::from_catalog(cat);

    ReportGenerator copy = [&](const corpus::CaseRecord& rec) {
        return tok.tokenize(rec.text);
    };
    for (int workers : {1, 3}) {
        EvalReport rep = evaluate(tok, cat, cases, copy, workers);
        CHECK(rep.sample_f1 == 1.0);
        CHECK(rep.macro_f1 == 1.0);
        CHECK(rep.precision == 1.0);
        CHECK(rep.recall == 1.0);
        CHECK(rep.bleu2 == 1.0);
        CHECK(rep.bleu4 == 1.0);
        CHECK(rep.n_cases == 80);
    }
}

TEST_CASE("evaluate is worker-count invariant on a real model") {
    auto cat = corpus::default_catalog();
    corpus::GeneratorConfig gc;
    gc.prevalence.assign(6, 0.3);
    auto cases = corpus::generate_corpus(cat, gc, 50, 502, 2);
    auto tok = corpus::PolicyTokenizer::from_catalog(cat);

    policy::PolicyModel model;
    model.tokenizer = tok;
    Rng rng(503);
    model.init(16, static_cast<int>(cases.front().features.size()), rng);

    auto r1 = evaluate(tok, cat, cases, greedy_generator(model, 40), 1);
    auto r4 = evaluate(tok, cat, cases, greedy_generator(model, 40), 4);
    CHECK(r1.to_json(nlohmann::ordered_json::object()) ==
          r4.to_json(nlohmann::ordered_json::object()));
    // untrained policies sit near the all-negative chance level, far from 1
    CHECK(r1.sample_f1 < 0.9);
    CHECK(r1.sample_f1 > 0.0);
}

TEST_CASE("eval report json carries schema, metrics, and hashes") {
    EvalReport rep;
    rep.split = "val";
    rep.n_cases = 3;
    rep.sample_f1 = 0.5;
    rep.config_hash_hex = "00aa";
    rep.checkpoint_hash_hex = "bb11";
    rep.per_pathology.push_back({"edema", 1.0, 0.5, 2.0 / 3.0, 4});
    auto j = rep.to_json(RunConfig{}.provenance_json());
    CHECK(j.at("kind") == "eval_report");
    CHECK(j.at("split") == "val");
    CHECK(j.at("sample_f1") == 0.5);
    CHECK(j.at("per_pathology").size() == 1);
    CHECK(j.at("config_hash") == "00aa");
    CHECK(j.at("checkpoint_hash") == "bb11");
    CHECK(j.contains("config"));
}

TEST_CASE("pipeline runs end to end; artifacts are worker-count invariant") {
    const std::string d1 = fresh_dir("wk1");
    const std::string d2 = fresh_dir("wk2");
    RunConfig c1 = small_config(d1);
    c1.workers = 1;
    RunConfig c2 = small_config(d2);
    c2.workers = 4;
    run_pipeline(c1);
    run_pipeline(c2);
    for (const char* name :
         {"corpus_train.jsonl", "corpus_val.jsonl", "corpus_test.jsonl", "catalog.json",
          "classifier.json", "policy_sft.json", "selection.jsonl", "policy_rl.json",
          "rollouts.jsonl", "eval_val.json", "eval_test.json", "summary.txt"}) {
        CAPTURE(name);
        CHECK(read_text_file(d1 + "/" + name) == read_text_file(d2 + "/" + name));
    }
}

TEST_CASE("rl stage is isolated: rerunning from persisted artifacts reproduces bytes") {
    const std::string d1 = "/tmp/reportrl_harness/wk1"; // reuse previous run
    REQUIRE(fs::exists(d1 + "/policy_rl.json"));
    const std::string d3 = fresh_dir("resume");
    for (const char* name : {"corpus_train.jsonl", "corpus_val.jsonl", "corpus_test.jsonl",
                             "catalog.json", "classifier.json", "policy_sft.json",
                             "selection.jsonl"})
        fs::copy_file(d1 + "/" + name, d3 + "/" + name);
    RunConfig cfg = small_config(d3);
    cfg.workers = 3;
    run_pipeline(cfg, /*resume=*/true);
    CHECK(read_text_file(d3 + "/policy_rl.json") == read_text_file(d1 + "/policy_rl.json"));
    CHECK(read_text_file(d3 + "/eval_test.json") == read_text_file(d1 + "/eval_test.json"));
}

TEST_CASE("grpo and ditpo runs share corpora and sft weights, then diverge") {
    const std::string d1 = "/tmp/reportrl_harness/wk1"; // ditpo_grad
    const std::string d4 = fresh_dir("grpo");
    RunConfig cfg = small_config(d4);
    cfg.rl.mode = "grpo";
    run_pipeline(cfg);
    // same seed: identical corpora bytes? No: embedded config differs by mode.
    // Case content must match exactly.
    auto a = corpus::load_corpus(d1 + "/corpus_train.jsonl");
    auto b = corpus::load_corpus(d4 + "/corpus_train.jsonl");
    CHECK(a.cases == b.cases);
    auto pa = policy::load_policy(d1 + "/policy_sft.json");
    auto pb = policy::load_policy(d4 + "/policy_sft.json");
    CHECK(pa.emb == pb.emb);
    CHECK(pa.w_out == pb.w_out);
    // the RL stage differs
    auto ra = policy::load_policy(d1 + "/policy_rl.json");
    auto rb = policy::load_policy(d4 + "/policy_rl.json");
    CHECK(ra.emb != rb.emb);
}

TEST_CASE("mask analysis: zero fraction changes nothing, random ratio is seed-stable") {
    const std::string d1 = "/tmp/reportrl_harness/wk1";
    REQUIRE(fs::exists(d1 + "/policy_rl.json"));
    auto clf = labeler::load_classifier(d1 + "/classifier.json");
    auto model = policy::load_policy(d1 + "/policy_rl.json");
    auto cat = corpus::PathologyCatalog::from_json(
        nlohmann::json::parse(read_text_file(d1 + "/catalog.json")));
    auto val = corpus::load_corpus(d1 + "/corpus_val.jsonl").cases;

    auto zero = mask_analysis(clf, model, cat, val, {"random", "tfidf", "gradient"},
                              0.0, 40, 4, 1.0, 40, 11, 2);
    for (const auto& r : zero) {
        CHECK(r.modification_ratio == 0.0);
        CHECK(r.post_mask_f1 == 1.0);
        CHECK(r.n_rollouts == 40);
    }

    // random-mask modification ratio is seed-stable: each seed within 0.03 of
    // the sweep mean (8-seed spread measured 0.030 at this sample count)
    std::vector<double> ratios;
    for (std::uint64_t seed : {21, 22, 23, 24})
        ratios.push_back(mask_analysis(clf, model, cat, val, {"random"}, 0.10, 2400,
                                       4, 1.0, 40, seed, 2)[0].modification_ratio);
    double mean = std::accumulate(ratios.begin(), ratios.end(), 0.0) / ratios.size();
    for (double r : ratios) {
        CAPTURE(r);
        CHECK(r > 0.0);
        CHECK(r < 1.0);
        CHECK(std::abs(r - mean) <= 0.03);
    }

    CHECK_THROWS_AS(mask_analysis(clf, model, cat, val, {"sorted"}, 0.1, 10, 2, 1.0,
                                  40, 1, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(mask_analysis(clf, model, cat, val, {"random"}, 1.5, 10, 2, 1.0,
                                  40, 1, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(mask_analysis(clf, model, cat, val, {"random"}, 0.1, 0, 2, 1.0,
                                  40, 1, 1),
                    std::invalid_argument);
}

TEST_CASE("mask analysis csv parses with a fixed field count") {
    std::vector<MaskStrategyResult> rows = {{"random", 0.25, 0.9, 200},
                                            {"gradient", 0.5, 0.7, 200}};
    std::istringstream csv(mask_analysis_csv(rows));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "strategy,n_rollouts,modification_ratio,post_mask_f1");
    int n = 0;
    while (std::getline(csv, line)) {
        CHECK(count_fields(line) == 4);
        ++n;
    }
    CHECK(n == 2);
}

TEST_CASE("reward diversity worked examples") {
    auto stats = reward_diversity({{1.0, 1.0, 1.0, 1.0},
                                   {1.0, 0.0, 0.0, 0.0},
                                   {0.5, 0.5, 0.5, 0.5}});
    CHECK(stats.n_groups == 3);
    CHECK(stats.zero_variance_ratio == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(stats.mean_unique_rewards == doctest::Approx((1 + 2 + 1) / 3.0).epsilon(1e-12));
    // pop_std of {1,0,0,0} = sqrt(3)/4
    CHECK(stats.mean_reward_std ==
          doctest::Approx(std::sqrt(3.0) / 4.0 / 3.0).epsilon(1e-12));
    CHECK_THROWS_AS(reward_diversity({}), std::invalid_argument);
}

TEST_CASE("reward diversity reads back its own rollout log") {
    const std::string d1 = "/tmp/reportrl_harness/wk1";
    auto stats = reward_diversity_from_log(d1 + "/rollouts.jsonl");
    RunConfig cfg = small_config(d1);
    CHECK(stats.n_groups == cfg.rl.steps);
    CHECK(stats.zero_variance_ratio >= 0.0);
    CHECK(stats.zero_variance_ratio <= 1.0);
    CHECK(stats.mean_reward_std >= 0.0);

    const std::string bad = "/tmp/reportrl_harness/bad_log.jsonl";
    write_text_file(bad, "{\"kind\":\"rl_log_header\",\"schema_version\":1}\nnot json\n");
    CHECK_THROWS_WITH_AS(reward_diversity_from_log(bad), doctest::Contains("line 2"),
                         std::runtime_error);
}

TEST_CASE("token dump: all-negative references get unit gradient weights") {
    const std::string d1 = "/tmp/reportrl_harness/wk1";
    auto clf = labeler::load_classifier(d1 + "/classifier.json");
    auto cat = corpus::PathologyCatalog::from_json(
        nlohmann::json::parse(read_text_file(d1 + "/catalog.json")));
    auto val = corpus::load_corpus(d1 + "/corpus_val.jsonl").cases;
    auto tok = corpus::PolicyTokenizer::from_catalog(cat);

    std::vector<std::string> neg_ids, pos_ids;
    for (const auto& rec : val) {
        bool any = std::any_of(rec.labels.begin(), rec.labels.end(),
                               [](int v) { return v == 1; });
        (any ? pos_ids : neg_ids).push_back(rec.case_id);
        if (!neg_ids.empty() && pos_ids.size() >= 2) break;
    }
    REQUIRE(!neg_ids.empty());

    std::string csv = token_dump_csv(clf, cat, tok, val, {neg_ids[0]}, 4.0, 1.0);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "case_id,position,token,tf,idf,rule_weight,saliency,grad_weight");
    int rows = 0;
    while (std::getline(in, line)) {
        CHECK(count_fields(line) == 8);
        auto last = line.rfind(',');
        CHECK(line.substr(last + 1) == "1"); // grad weight exactly 1, %.17g prints "1"
        ++rows;
    }
    CHECK(rows >= 8); // reports are at least 8 tokens

    CHECK_THROWS_AS(token_dump_csv(clf, cat, tok, val, {"no_such_case"}, 4.0, 1.0),
                    std::invalid_argument);
}

TEST_CASE("rl_train validates its inputs") {
    const std::string d1 = "/tmp/reportrl_harness/wk1";
    auto clf = labeler::load_classifier(d1 + "/classifier.json");
    auto model = policy::load_policy(d1 + "/policy_sft.json");
    auto cat = corpus::PathologyCatalog::from_json(
        nlohmann::json::parse(read_text_file(d1 + "/catalog.json")));
    auto val = corpus::load_corpus(d1 + "/corpus_val.jsonl").cases;

    RlOptions opt;
    opt.steps = 1;
    opt.reward_cfg = rewards::RewardConfig::constant(0.0);
    RlOptions bad_pool = opt;
    policy::PolicyModel m1 = model;
    CHECK_THROWS_AS(rl_train(m1, clf, cat, {}, bad_pool, 1), std::invalid_argument);
    RlOptions bad_n = opt;
    bad_n.n_rollouts = 1;
    CHECK_THROWS_AS(rl_train(m1, clf, cat, val, bad_n, 1), std::invalid_argument);
}

TEST_CASE("vocab mismatch between checkpoint and corpus is caught at eval") {
    const std::string d1 = "/tmp/reportrl_harness/wk1";
    const std::string d5 = fresh_dir("vocabmix");
    for (const char* name : {"corpus_test.jsonl", "policy_rl.json", "catalog.json"})
        fs::copy_file(d1 + "/" + name, d5 + "/" + name);
    // rewrite the corpus header catalog with one phrase renamed: eval matches the
    // checkpoint vocab against the corpus it is about to score, not catalog.json
    std::string raw = read_text_file(d5 + "/corpus_test.jsonl");
    const std::size_t nl = raw.find('\n');
    REQUIRE(nl != std::string::npos);
    auto header = nlohmann::json::parse(raw.substr(0, nl));
    REQUIRE(header.at("kind") == "corpus_header");
    header["catalog"]["pathologies"][0]["positive"][0] = "zzz unheard of finding";
    write_text_file(d5 + "/corpus_test.jsonl", header.dump() + raw.substr(nl));

    RunConfig cfg = small_config(d5);
    ArtifactPaths paths{cfg.out_dir};
    CHECK_THROWS_WITH_AS(
        stage_eval(cfg, paths.rl_policy(), "test", paths, /*write_report=*/false),
        doctest::Contains("vocab hash mismatch"), std::runtime_error);
}
