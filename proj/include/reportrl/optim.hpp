// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <string>
#include <vector>

#include "reportrl/labeler.hpp"
#include "reportrl/policy.hpp"

namespace reportrl::optim {

enum class Mode { Grpo, DitpoRule, DitpoGrad };

Mode mode_from_string(const std::string& s); // throws on unknown
std::string mode_to_string(Mode m);

struct AdvantageConfig {
    Mode mode = Mode::Grpo;
    double alpha = 4.0;        // TF-IDF reweighting strength
    double beta = 1.0;         // saliency reweighting strength
    double std_epsilon = 1e-8;
    int saliency_agg = 0;      // 0 max, 1 sum, 2 mean (overlap aggregation)
};

// A_i = (r_i - mean) / (pop_std + eps); all zeros when pop_std == 0.
// Throws when fewer than 2 rewards.
std::vector<double> group_advantages(const std::vector<double>& rewards,
                                     double std_epsilon);

struct TfidfEntry {
    double tf = 0.0;
    double idf = 0.0;
    double tfidf = 0.0;
};

// Per document, per token position. tf = count/len(doc), idf = ln(N/df).
using TfidfTable = std::vector<std::vector<TfidfEntry>>;

TfidfTable tfidf_table(const std::vector<std::vector<int>>& docs);

// w = 1 + alpha * tfidf, per token position. Identical token ids within one
// document share one weight by construction.
std::vector<std::vector<double>> tfidf_weights(const std::vector<std::vector<int>>& docs,
                                               double alpha,
                                               TfidfTable* table_out = nullptr);

// w_t = 1 + beta * aligned_saliency_t; target set comes from the keyword
// oracle positives of the reference report. No further normalization.
std::vector<double> gradient_weights(const labeler::DiagnosticClassifier& clf,
                                     const policy::Rollout& rollout,
                                     const std::set<int>& target_set,
                                     double beta, int saliency_agg = 0);

// Populates group.token_weights and group.token_advantages from
// group.advantages per cfg.mode. clf/target_set are required only for
// Mode::DitpoGrad. Throws on missing rewards/advantages or length mismatch.
void assemble_token_advantages(policy::RolloutGroup& group, const AdvantageConfig& cfg,
                               const labeler::DiagnosticClassifier* clf = nullptr,
                               const std::set<int>* target_set = nullptr);

} // namespace reportrl::optim
