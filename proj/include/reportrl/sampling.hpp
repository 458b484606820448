// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reportrl/labeler.hpp"
#include "reportrl/policy.hpp"

namespace reportrl::sampling {

struct SelectionRow {
    std::string case_id;
    double score = 0.0;  // diagnostic diversity D
    int rank = 0;        // 1 = highest score
    double prob = 0.0;   // log-rank sampling probability
};

struct SelectionTable {
    std::vector<SelectionRow> rows; // sorted by rank
    int k_samples = 10;
    double nucleus_p = 0.9;
    std::uint64_t seed = 0;
    std::string checkpoint_hash;
};

// Diagnostic diversity of one case: sample k reports via nucleus(p),
// classify each, D = sum over pathologies of the population std of the
// binary predictions. Label-free by construction: only the feature vector
// and an id ever reach this function.
double diversity_score(const labeler::DiagnosticClassifier& clf,
                       const policy::PolicyModel& model,
                       const std::string& case_id, const Vec& features,
                       int k, double nucleus_p, int max_len, Rng rng);

// Ranks descending by score (ties broken by case_id ascending) and assigns
// P_r = (1/ln(r+1)) / sum_j 1/ln(j+1).
SelectionTable rank_probabilities(std::vector<std::pair<std::string, double>> scores);

// round(fraction * N) ids; without replacement uses sequential renormalized
// draws. Throws unless 0 < fraction <= 1.
std::vector<std::string> draw_subset(const SelectionTable& table, double fraction,
                                     std::uint64_t seed, bool with_replacement = false);

inline constexpr int kSelectionSchemaVersion = 1;

// JSON-lines: header record (k, p, seed, checkpoint hash, config), then one
// row per case.
void save_selection(const std::string& path, const SelectionTable& table,
                    const nlohmann::ordered_json& run_config);
SelectionTable load_selection(const std::string& path);

} // namespace reportrl::sampling
