// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "reportrl/rewards.hpp"
#include "reportrl/rng.hpp"

using namespace reportrl;
using namespace reportrl::rewards;

namespace {

// Independent BLEU oracle: literal clipped n-gram precision product,
// written as differently from the implementation as possible.
double bleu_oracle(const std::vector<int>& cand, const std::vector<int>& ref,
                   int max_n, double eps = 1e-9) {
    if (cand.empty()) return 0.0;
    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        std::map<std::vector<int>, int> ref_counts;
        for (int i = 0; i + n <= static_cast<int>(ref.size()); ++i)
            ref_counts[std::vector<int>(ref.begin() + i, ref.begin() + i + n)]++;
        std::map<std::vector<int>, int> cand_counts;
        for (int i = 0; i + n <= static_cast<int>(cand.size()); ++i)
            cand_counts[std::vector<int>(cand.begin() + i, cand.begin() + i + n)]++;
        long matched = 0, total = 0;
        for (const auto& [gram, count] : cand_counts) {
            total += count;
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) matched += std::min(count, it->second);
        }
        double p = (total == 0 || matched == 0) ? eps
                                                : static_cast<double>(matched) / total;
        log_sum += std::log(p);
    }
    double geo = std::exp(log_sum / max_n);
    double bp = cand.size() >= ref.size()
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(ref.size()) / cand.size());
    return bp * geo;
}

// Independent F1 oracle via explicit confusion-matrix enumeration.
double f1_oracle(const std::vector<int>& pred, const std::vector<int>& gt) {
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == 1 && gt[i] == 1) ++tp;
        if (pred[i] == 1 && gt[i] == 0) ++fp;
        if (pred[i] == 0 && gt[i] == 1) ++fn;
    }
    if (tp + fp + fn == 0) return 1.0;
    return 2.0 * tp / (2.0 * tp + fp + fn);
}

} // namespace

TEST_CASE("sample F1 worked example: one hit one miss one false alarm") {
    // pred {1,1,0,0}, gt {1,0,1,0}: TP=1 FP=1 FN=1 -> 2/(2+1+1) = 0.5
    CHECK(sample_f1({1, 1, 0, 0}, {1, 0, 1, 0}) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("sample F1 pins the all-negative pair to one") {
    CHECK(sample_f1({0, 0, 0}, {0, 0, 0}) == 1.0);
}

TEST_CASE("sample F1 rejects mismatched lengths") {
    CHECK_THROWS_AS(sample_f1({1, 0}, {1, 0, 0}), std::invalid_argument);
}

TEST_CASE("sample F1 matches exhaustive enumeration over all pairs at C=4") {
    for (int a = 0; a < 16; ++a) {
        for (int b = 0; b < 16; ++b) {
            std::vector<int> pred(4), gt(4);
            for (int i = 0; i < 4; ++i) {
                pred[static_cast<std::size_t>(i)] = (a >> i) & 1;
                gt[static_cast<std::size_t>(i)] = (b >> i) & 1;
            }
            CHECK(sample_f1(pred, gt) == doctest::Approx(f1_oracle(pred, gt)).epsilon(1e-15));
        }
    }
}

TEST_CASE("sample F1 never decreases when a false prediction is corrected") {
    // flipping any single wrong bit to the right value cannot lower F1
    for (int a = 0; a < 16; ++a) {
        for (int b = 0; b < 16; ++b) {
            std::vector<int> pred(4), gt(4);
            for (int i = 0; i < 4; ++i) {
                pred[static_cast<std::size_t>(i)] = (a >> i) & 1;
                gt[static_cast<std::size_t>(i)] = (b >> i) & 1;
            }
            double base = sample_f1(pred, gt);
            for (int i = 0; i < 4; ++i) {
                if (pred[static_cast<std::size_t>(i)] != gt[static_cast<std::size_t>(i)]) {
                    auto fixed = pred;
                    fixed[static_cast<std::size_t>(i)] = gt[static_cast<std::size_t>(i)];
                    CHECK(sample_f1(fixed, gt) >= base - 1e-12);
                }
            }
        }
    }
}

TEST_CASE("BLEU-2 worked example evaluates to about 0.7071") {
    // "a b b c" vs "a b c d": p1 = 3/4, p2 = 2/3, BP = 1
    std::vector<int> cand{0, 1, 1, 2}, ref{0, 1, 2, 3};
    double expect = std::sqrt(0.75 * (2.0 / 3.0));
    CHECK(bleu(cand, ref, 2) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(bleu(cand, ref, 2) == doctest::Approx(0.7071).epsilon(1e-4));
}

TEST_CASE("BLEU agrees exactly with the brute-force oracle on random pairs") {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        int vocab = 2 + static_cast<int>(rng.uniform_index(6));
        std::vector<int> cand(rng.uniform_index(12)), ref(1 + rng.uniform_index(12));
        for (auto& t : cand) t = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(vocab)));
        for (auto& t : ref) t = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(vocab)));
        for (int n = 1; n <= 4; ++n) {
            double got = bleu(cand, ref, n);
            double want = bleu_oracle(cand, ref, n);
            CHECK(got == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("BLEU edge cases") {
    CHECK(bleu({}, {1, 2, 3}, 2) == 0.0);
    // identical sequences score 1
    CHECK(bleu({1, 2, 3}, {1, 2, 3}, 2) == doctest::Approx(1.0).epsilon(1e-12));
    // single-token candidate has no bigrams: epsilon path
    double v = bleu({1}, {1, 2, 3}, 2);
    CHECK(v > 0.0);
    CHECK(v < 1e-3);
    // brevity penalty: shorter perfect prefix scores below 1
    double short_score = bleu({1, 2}, {1, 2, 3, 4}, 2);
    CHECK(short_score == doctest::Approx(std::exp(1.0 - 2.0)).epsilon(1e-9));
}

TEST_CASE("reward schedule returns the phase in force at each step") {
    RewardConfig cfg = RewardConfig::two_phase(180, 0.25);
    CHECK(cfg.gamma_at(0) == 0.0);
    CHECK(cfg.gamma_at(179) == 0.0);
    CHECK(cfg.gamma_at(180) == 0.25);
    CHECK(cfg.gamma_at(100000) == 0.25);

    RewardConfig flat = RewardConfig::constant(0.5);
    CHECK(flat.gamma_at(0) == 0.5);
    CHECK(flat.gamma_at(999) == 0.5);
}

TEST_CASE("degenerate two-phase switch collapses to a constant schedule") {
    RewardConfig cfg = RewardConfig::two_phase(0, 0.25);
    CHECK(cfg.gamma_at(0) == 0.25);
}

TEST_CASE("reward schedule validation") {
    RewardConfig bad;
    bad.phases = {{5, 0.0}, {10, 0.2}};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument); // first phase not at 0
    bad.phases = {{0, 0.0}, {10, 0.2}, {10, 0.3}};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument); // not strictly sorted
    bad.phases = {{0, -0.1}};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument); // negative gamma
    bad.phases = {};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument); // empty
}

TEST_CASE("gamma_at rejects negative steps") {
    RewardConfig cfg = RewardConfig::constant(0.1);
    CHECK_THROWS_AS(cfg.gamma_at(-1), std::invalid_argument);
}
