// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end for the report-generation RL pipeline. Every
// subcommand reads/writes artifacts under --out so stages can be run
// separately, resumed, or replayed from another run's files.
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "reportrl/harness.hpp"
#include "reportrl/util.hpp"

namespace {

using reportrl::harness::ArtifactPaths;
using reportrl::harness::RunConfig;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int workers = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file (defaults built in)");
    cmd->add_option("--set", args.overrides,
                    "Override a config value, dotted path (e.g. --set rl.steps=100)");
    cmd->add_option("--out", args.out_dir, "Artifact directory (overrides config out_dir)");
    auto* seed_opt = cmd->add_option("--seed", args.seed, "Master seed (overrides config)");
    cmd->callback([&args, seed_opt] { args.seed_set = seed_opt->count() > 0; });
    cmd->add_option("--workers", args.workers, "Worker threads (overrides config)");
}

RunConfig resolve_config(const CommonArgs& args) {
    nlohmann::ordered_json j = args.config_path.empty()
                                   ? RunConfig{}.to_json()
                                   : nlohmann::ordered_json::parse(
                                         reportrl::read_text_file(args.config_path));
    j = reportrl::harness::apply_overrides(std::move(j), args.overrides);
    RunConfig cfg = RunConfig::from_json(j);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.seed_set) cfg.seed = args.seed;
    if (args.workers > 0) cfg.workers = args.workers;
    return cfg;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ','))
        if (!part.empty()) out.push_back(part);
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Diagnostic-report generation RL pipeline"};
    app.require_subcommand(1);

    CommonArgs args;

    auto* gen = app.add_subcommand("gen-corpus", "Generate train/val/test corpora");
    add_common(gen, args);

    auto* lab = app.add_subcommand("train-labeler", "Train the surrogate report classifier");
    add_common(lab, args);

    auto* sft = app.add_subcommand("sft", "Supervised pretraining of the report generator");
    add_common(sft, args);

    auto* sel = app.add_subcommand("select", "Score diagnostic diversity and rank cases");
    add_common(sel, args);

    auto* rl = app.add_subcommand("rl-train", "Group-relative RL fine-tuning");
    add_common(rl, args);

    auto* ev = app.add_subcommand("eval", "Greedy-decode a checkpoint and report metrics");
    add_common(ev, args);
    std::string eval_split = "test";
    std::string eval_checkpoint;
    ev->add_option("--split", eval_split, "Corpus split (train|val|test)");
    ev->add_option("--checkpoint", eval_checkpoint,
                   "Policy checkpoint (default: the run's RL checkpoint)");

    auto* mask = app.add_subcommand("mask-analysis",
                                    "Mask top-weighted tokens and measure label impact");
    add_common(mask, args);
    std::string mask_split = "val";
    std::string mask_strategies = "random,tfidf,gradient";
    std::string mask_csv;
    double mask_fraction = 0.10;
    int mask_samples = 200;
    int mask_group = 4;
    mask->add_option("--split", mask_split, "Corpus split to draw cases from");
    mask->add_option("--strategies", mask_strategies, "Comma list: random,tfidf,gradient");
    mask->add_option("--fraction", mask_fraction, "Fraction of body tokens to mask");
    mask->add_option("--samples", mask_samples, "Total rollouts to analyze");
    mask->add_option("--rollouts-per-group", mask_group, "Rollouts sharing one case");
    mask->add_option("--out-csv", mask_csv, "Write results as CSV to this path");

    auto* div = app.add_subcommand("reward-diversity",
                                   "Reward-spread statistics from a rollout log");
    add_common(div, args);
    std::string div_log;
    div->add_option("--log", div_log, "Rollout log (default: the run's rollouts.jsonl)");

    auto* dump = app.add_subcommand("token-dump",
                                    "Per-token rule and gradient weights as CSV");
    add_common(dump, args);
    std::string dump_split = "val";
    std::string dump_ids;
    std::string dump_csv;
    int dump_first = 4;
    dump->add_option("--split", dump_split, "Corpus split");
    dump->add_option("--cases", dump_ids, "Comma list of case ids (default: first N)");
    dump->add_option("--first", dump_first, "How many leading cases when --cases is empty");
    dump->add_option("--out-csv", dump_csv, "Write CSV to this path (default: stdout)");

    auto* pipe = app.add_subcommand("pipeline", "Run all stages in order");
    add_common(pipe, args);
    bool resume = false;
    pipe->add_flag("--resume", resume, "Skip stages whose artifacts already exist");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = resolve_config(args);
        ArtifactPaths paths{cfg.out_dir};

        if (gen->parsed()) {
            reportrl::harness::stage_gen_corpus(cfg, paths);
            std::cout << "corpus written to " << cfg.out_dir << "\n";
        } else if (lab->parsed()) {
            reportrl::harness::stage_train_labeler(cfg, paths);
        } else if (sft->parsed()) {
            reportrl::harness::stage_sft(cfg, paths);
        } else if (sel->parsed()) {
            reportrl::harness::stage_select(cfg, paths);
        } else if (rl->parsed()) {
            reportrl::harness::stage_rl(cfg, paths);
        } else if (ev->parsed()) {
            std::string ckpt = eval_checkpoint.empty() ? paths.rl_policy() : eval_checkpoint;
            auto report = reportrl::harness::stage_eval(cfg, ckpt, eval_split, paths);
            std::cout << report.to_json(cfg.provenance_json()).dump(2) << "\n";
        } else if (mask->parsed()) {
            if (mask_samples < 100)
                throw std::invalid_argument("mask-analysis needs --samples >= 100");
            auto loaded = reportrl::corpus::load_corpus(paths.corpus(mask_split));
            auto clf = reportrl::labeler::load_classifier(paths.classifier());
            auto model = reportrl::policy::load_policy(paths.rl_policy());
            auto results = reportrl::harness::mask_analysis(
                clf, model, loaded.catalog, loaded.cases, split_csv(mask_strategies),
                mask_fraction, mask_samples, mask_group, cfg.rl.temperature,
                cfg.generator.max_len, cfg.seed, cfg.workers);
            std::string csv = reportrl::harness::mask_analysis_csv(results);
            if (mask_csv.empty()) std::cout << csv;
            else reportrl::write_text_file(mask_csv, csv);
        } else if (div->parsed()) {
            std::string log = div_log.empty() ? paths.rollout_log() : div_log;
            auto stats = reportrl::harness::reward_diversity_from_log(log);
            std::cout << "groups: " << stats.n_groups << "\n"
                      << "zero-variance ratio: " << stats.zero_variance_ratio << "\n"
                      << "mean unique rewards: " << stats.mean_unique_rewards << "\n"
                      << "mean reward std: " << stats.mean_reward_std << "\n";
        } else if (dump->parsed()) {
            auto loaded = reportrl::corpus::load_corpus(paths.corpus(dump_split));
            auto clf = reportrl::labeler::load_classifier(paths.classifier());
            auto tokenizer = reportrl::corpus::PolicyTokenizer::from_catalog(loaded.catalog);
            std::vector<std::string> ids = split_csv(dump_ids);
            if (ids.empty())
                for (int i = 0; i < dump_first && i < static_cast<int>(loaded.cases.size()); ++i)
                    ids.push_back(loaded.cases[static_cast<std::size_t>(i)].case_id);
            std::string csv = reportrl::harness::token_dump_csv(
                clf, loaded.catalog, tokenizer, loaded.cases, ids, cfg.rl.alpha, cfg.rl.beta);
            if (dump_csv.empty()) std::cout << csv;
            else reportrl::write_text_file(dump_csv, csv);
        } else if (pipe->parsed()) {
            reportrl::harness::run_pipeline(cfg, resume);
            std::cout << "pipeline complete, artifacts in " << cfg.out_dir << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
