// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reportrl/corpus.hpp"
#include "reportrl/labeler.hpp"
#include "reportrl/optim.hpp"
#include "reportrl/policy.hpp"
#include "reportrl/rewards.hpp"
#include "reportrl/sampling.hpp"

namespace reportrl::harness {

// One master seed fans out into named streams; every field has a default
// documented in the README and reproduced by `RunConfig{}`.
struct RunConfig {
    std::uint64_t seed = 12345;
    std::string out_dir = "runs/out";
    int workers = 1;

    struct Data {
        int n_pathologies = 6;
        double prevalence = 0.3;
        double neg_mention_prob = 0.35;
        int max_absence_sentences = 2;
        double noise_sigma = 0.3;
        int noise_dims = 4;
        int n_train = 2000;
        int n_val = 300;
        int n_test = 400;
        std::string catalog_path; // empty = built-in catalog
    } data;

    struct Classifier {
        int emb_dim = 16;
        int hidden_dim = 32;
        int epochs = 12;
        double lr = 0.01;
    } classifier;

    struct Sft {
        int epochs = 6;
        double lr = 0.003;
    } sft;

    struct Generator {
        int hidden = 32;
        int max_len = 56;
    } generator;

    struct Reward {
        std::string schedule = "two_phase"; // "two_phase" | "constant"
        double gamma = 0.25;
        double phase_switch_frac = 0.6;     // two_phase: switch at frac * rl.steps
    } reward;

    struct Rl {
        std::string mode = "ditpo_grad";    // "grpo" | "ditpo_rule" | "ditpo_grad"
        int steps = 300;
        double lr = 0.003;
        double clip_eps = 0.2;
        int n_rollouts = 8;
        double temperature = 1.0;
        double alpha = 4.0;
        double beta = 1.0;
        double std_epsilon = 1e-8;
        double kl_coeff = 0.0;              // optional extension, 0 = off
        int saliency_agg = 0;               // 0 max, 1 sum, 2 mean
        bool use_selection = true;
        bool dump_weights = false;
    } rl;

    struct Selection {
        int k_samples = 10;
        double nucleus_p = 0.9;
        double fraction = 0.2;
        bool with_replacement = false;
    } selection;

    nlohmann::ordered_json to_json() const;
    // to_json() minus execution-only fields (workers, out_dir). Embedded in
    // every artifact, so results stay byte-identical across worker counts
    // and output locations.
    nlohmann::ordered_json provenance_json() const;
    // Strict: unknown keys throw, naming the offending key.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);
    // Hash of provenance_json(); execution-only fields excluded.
    std::uint64_t config_hash() const;

    rewards::RewardConfig reward_config() const;
    optim::AdvantageConfig advantage_config() const;
};

// Applies "dotted.key=value" overrides onto the config JSON.
nlohmann::ordered_json apply_overrides(nlohmann::ordered_json config_json,
                                       const std::vector<std::string>& overrides);

struct ArtifactPaths {
    std::string dir;
    std::string corpus(const std::string& split) const { return dir + "/corpus_" + split + ".jsonl"; }
    std::string catalog() const { return dir + "/catalog.json"; }
    std::string classifier() const { return dir + "/classifier.json"; }
    std::string sft_policy() const { return dir + "/policy_sft.json"; }
    std::string rl_policy() const { return dir + "/policy_rl.json"; }
    std::string selection() const { return dir + "/selection.jsonl"; }
    std::string rollout_log() const { return dir + "/rollouts.jsonl"; }
    std::string weights_log() const { return dir + "/token_weights.jsonl"; }
    std::string eval_report(const std::string& split) const { return dir + "/eval_" + split + ".json"; }
    std::string summary() const { return dir + "/summary.txt"; }
    void ensure_dir() const;
};

struct PathologyMetrics {
    std::string name;
    double precision = 0, recall = 0, f1 = 0;
    int support = 0;
};

struct EvalReport {
    std::string split;
    int n_cases = 0;
    double precision = 0, recall = 0, sample_f1 = 0, macro_f1 = 0;
    double bleu2 = 0, bleu4 = 0;
    std::vector<PathologyMetrics> per_pathology;
    std::string config_hash_hex;
    std::string checkpoint_hash_hex;

    nlohmann::ordered_json to_json(const nlohmann::ordered_json& run_config) const;
};

// Maps a case to generated body tokens; the CLI wires greedy decoding of a
// checkpoint, tests may inject doubles (e.g. a reference copier).
using ReportGenerator = std::function<std::vector<int>(const corpus::CaseRecord&)>;

// Greedy-decoded metrics: keyword-oracle labels of the generated reports
// against keyword-oracle labels of the references. The surrogate
// classifier shapes rewards only; evaluation depends on nothing but
// (checkpoint, corpus), so a reference-copying generator scores exactly
// 1.0. Deterministic and worker-count-invariant.
EvalReport evaluate(const corpus::PolicyTokenizer& tokenizer,
                    const corpus::PathologyCatalog& catalog,
                    const std::vector<corpus::CaseRecord>& cases,
                    const ReportGenerator& generate, int workers);

ReportGenerator greedy_generator(const policy::PolicyModel& model, int max_len);

// ---- pipeline stages; each reads inputs from files and writes artifacts ----

void stage_gen_corpus(const RunConfig& cfg, const ArtifactPaths& paths);
void stage_train_labeler(const RunConfig& cfg, const ArtifactPaths& paths);
void stage_sft(const RunConfig& cfg, const ArtifactPaths& paths);
void stage_select(const RunConfig& cfg, const ArtifactPaths& paths);
void stage_rl(const RunConfig& cfg, const ArtifactPaths& paths);
EvalReport stage_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                      const std::string& split, const ArtifactPaths& paths,
                      bool write_report = true);
// Runs all stages in order; stages whose artifacts already exist are
// re-used when `resume` is set. Writes a human-readable summary.
void run_pipeline(const RunConfig& cfg, bool resume = false);

// ---- in-memory RL core, shared by stage_rl and the experiments ----

struct RlOptions {
    optim::Mode mode = optim::Mode::DitpoGrad;
    int steps = 300;
    double lr = 0.003;
    double clip_eps = 0.2;
    int n_rollouts = 8;
    double temperature = 1.0;
    double alpha = 4.0;
    double beta = 1.0;
    double std_epsilon = 1e-8;
    double kl_coeff = 0.0;
    int saliency_agg = 0;
    int max_len = 56;
    int workers = 1;
    rewards::RewardConfig reward_cfg;
    std::string rollout_log_path;  // empty = no log
    std::string weights_log_path;  // empty = no dump
    nlohmann::json log_header_config; // embedded in log headers
};

struct RlResult {
    int steps_run = 0;
    double mean_reward_first_quarter = 0;
    double mean_reward_last_quarter = 0;
};

// Trains `model` in place on the given case pool with group-relative
// updates. RNG streams derive from (seed, "rl", step, rollout index).
RlResult rl_train(policy::PolicyModel& model,
                  const labeler::DiagnosticClassifier& clf,
                  const corpus::PathologyCatalog& catalog,
                  const std::vector<corpus::CaseRecord>& pool,
                  const RlOptions& opt, std::uint64_t seed);

// ---- analyses ----

struct MaskStrategyResult {
    std::string strategy;
    double modification_ratio = 0;
    double post_mask_f1 = 0;
    int n_rollouts = 0;
};

// Token-masking validation: rank each rollout's tokens by the strategy's
// weight, replace the top `mask_fraction` with the reserved mask token,
// re-classify, and report the label modification ratio and the mean
// post-masking sample F1 against the pre-masking labels.
std::vector<MaskStrategyResult> mask_analysis(
    const labeler::DiagnosticClassifier& clf,
    const policy::PolicyModel& model,
    const corpus::PathologyCatalog& catalog,
    const std::vector<corpus::CaseRecord>& cases,
    const std::vector<std::string>& strategies, // "random" | "tfidf" | "gradient"
    double mask_fraction, int n_samples, int n_rollouts_per_group,
    double temperature, int max_len, std::uint64_t seed, int workers);

std::string mask_analysis_csv(const std::vector<MaskStrategyResult>& results);

struct RewardDiversityStats {
    int n_groups = 0;
    double zero_variance_ratio = 0; // all N totals identical
    double mean_unique_rewards = 0; // unique totals after rounding to 1e-9
    double mean_reward_std = 0;     // population std of totals
};

RewardDiversityStats reward_diversity(const std::vector<std::vector<double>>& group_totals);
// Reads "group" records from a rollout log.
RewardDiversityStats reward_diversity_from_log(const std::string& path);

// One row per reference-report token with rule (TF-IDF over the dumped
// set) and gradient weights. Deterministic.
std::string token_dump_csv(const labeler::DiagnosticClassifier& clf,
                           const corpus::PathologyCatalog& catalog,
                           const corpus::PolicyTokenizer& tokenizer,
                           const std::vector<corpus::CaseRecord>& cases,
                           const std::vector<std::string>& case_ids,
                           double alpha, double beta);

} // namespace reportrl::harness
