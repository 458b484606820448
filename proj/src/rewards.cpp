// SPDX-License-Identifier: Apache-2.0
#include "reportrl/rewards.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace reportrl::rewards {

double RewardConfig::gamma_at(long step) const {
    validate();
    if (step < 0) throw std::invalid_argument("reward schedule queried at negative step");
    double g = phases.front().second;
    for (const auto& [start, gamma] : phases)
        if (step >= start) g = gamma;
    return g;
}

void RewardConfig::validate() const {
    if (phases.empty()) throw std::invalid_argument("reward schedule has no phases");
    if (phases.front().first != 0)
        throw std::invalid_argument("first reward phase must start at step 0");
    for (std::size_t i = 1; i < phases.size(); ++i)
        if (phases[i].first <= phases[i - 1].first)
            throw std::invalid_argument("reward phases must be sorted by start step");
    for (const auto& [start, gamma] : phases)
        if (gamma < 0.0) throw std::invalid_argument("gamma must be nonnegative");
}

RewardConfig RewardConfig::constant(double gamma) {
    RewardConfig cfg;
    cfg.phases = {{0, gamma}};
    return cfg;
}

RewardConfig RewardConfig::two_phase(long switch_step, double gamma) {
    if (switch_step <= 0) return constant(gamma);
    RewardConfig cfg;
    cfg.phases = {{0, 0.0}, {switch_step, gamma}};
    return cfg;
}

double sample_f1(const std::vector<int>& pred, const std::vector<int>& gt) {
    if (pred.size() != gt.size())
        throw std::invalid_argument("sample_f1 length mismatch: " +
                                    std::to_string(pred.size()) + " vs " +
                                    std::to_string(gt.size()));
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t c = 0; c < pred.size(); ++c) {
        if (pred[c] == 1 && gt[c] == 1) ++tp;
        else if (pred[c] == 1 && gt[c] == 0) ++fp;
        else if (pred[c] == 0 && gt[c] == 1) ++fn;
    }
    if (tp == 0 && fp == 0 && fn == 0) return 1.0; // correct all-negative
    return 2.0 * tp / (2.0 * tp + fp + fn);
}

namespace {

// Modified n-gram precision: clipped match count / candidate n-gram count.
// Returns {matched, total}; total == 0 when the candidate is shorter than n.
std::pair<long, long> ngram_matches(const std::vector<int>& candidate,
                                    const std::vector<int>& reference, int n) {
    if (static_cast<int>(candidate.size()) < n) return {0, 0};
    std::map<std::vector<int>, long> ref_counts;
    for (std::size_t i = 0; i + n <= reference.size(); ++i)
        ++ref_counts[std::vector<int>(reference.begin() + i, reference.begin() + i + n)];
    std::map<std::vector<int>, long> cand_counts;
    for (std::size_t i = 0; i + n <= candidate.size(); ++i)
        ++cand_counts[std::vector<int>(candidate.begin() + i, candidate.begin() + i + n)];
    long matched = 0, total = 0;
    for (const auto& [gram, count] : cand_counts) {
        total += count;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched += std::min(count, it->second);
    }
    return {matched, total};
}

} // namespace

double bleu(const std::vector<int>& candidate, const std::vector<int>& reference,
            int max_n, double epsilon) {
    if (max_n < 1) throw std::invalid_argument("bleu order must be >= 1");
    if (candidate.empty()) return 0.0;

    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        auto [matched, total] = ngram_matches(candidate, reference, n);
        double p = (total > 0 && matched > 0)
                       ? static_cast<double>(matched) / static_cast<double>(total)
                       : epsilon;
        log_sum += std::log(p);
    }
    double geo = std::exp(log_sum / max_n);

    const double c = static_cast<double>(candidate.size());
    const double r = static_cast<double>(reference.size());
    double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
    return bp * geo;
}

RewardBreakdown composite_reward(const labeler::DiagnosticClassifier& clf,
                                 const std::string& report_text,
                                 const std::vector<int>& gt_labels,
                                 const std::vector<int>& candidate_tokens,
                                 const std::vector<int>& reference_tokens,
                                 long step, const RewardConfig& cfg) {
    RewardBreakdown out;
    out.gamma = cfg.gamma_at(step);
    out.f1 = sample_f1(labeler::classify(clf, report_text).values, gt_labels);
    out.bleu2 = bleu2(candidate_tokens, reference_tokens);
    out.total = out.f1 + out.gamma * out.bleu2;
    return out;
}

} // namespace reportrl::rewards
