// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "reportrl/labeler.hpp"

namespace reportrl::rewards {

// (start_step, gamma) pairs, sorted by start_step, first phase at step 0.
struct RewardConfig {
    std::vector<std::pair<long, double>> phases{{0, 0.0}};

    double gamma_at(long step) const;
    void validate() const; // throws on unsorted phases or first start != 0

    static RewardConfig constant(double gamma);
    static RewardConfig two_phase(long switch_step, double gamma);
};

struct RewardBreakdown {
    double f1 = 0.0;
    double bleu2 = 0.0;
    double gamma = 0.0;
    double total = 0.0; // f1 + gamma * bleu2, exactly as computed
};

// F1 over the C binary decisions of one sample; 2TP/(2TP+FP+FN), pinned to
// 1.0 when pred and gt are both all-negative. Throws on length mismatch.
double sample_f1(const std::vector<int>& pred, const std::vector<int>& gt);

// Sentence-level BLEU-n: geometric mean of modified 1..n gram precisions
// with brevity penalty; a zero (or undefined) precision is replaced by
// epsilon. Empty candidate returns 0.
double bleu(const std::vector<int>& candidate, const std::vector<int>& reference,
            int max_n, double epsilon = 1e-9);

inline double bleu2(const std::vector<int>& candidate, const std::vector<int>& reference) {
    return bleu(candidate, reference, 2);
}

RewardBreakdown composite_reward(const labeler::DiagnosticClassifier& clf,
                                 const std::string& report_text,
                                 const std::vector<int>& gt_labels,
                                 const std::vector<int>& candidate_tokens,
                                 const std::vector<int>& reference_tokens,
                                 long step, const RewardConfig& cfg);

} // namespace reportrl::rewards
