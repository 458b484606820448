// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "reportrl/corpus.hpp"
#include "reportrl/math.hpp"

namespace reportrl::labeler {

struct LabelVector {
    std::vector<int> values;                        // C entries in {0,1}
    std::vector<std::array<double, 2>> logits;      // optional (neg, pos) pairs

    bool operator==(const LabelVector& o) const { return values == o.values; }
};

// Deterministic rule-based reference labeler: labels[c] = 1 iff some
// positive phrase of pathology c occurs and no absence phrase for c starts
// at or after the last positive occurrence.
LabelVector keyword_oracle(const corpus::PathologyCatalog& catalog,
                           const std::string& text);

// Positive pathology indices per the oracle (the saliency target set).
std::set<int> oracle_positive_set(const corpus::PathologyCatalog& catalog,
                                  const std::string& text);

// Small differentiable text classifier standing in for a pretrained
// report labeler. Architecture: chunk embedding (d) -> per-token gated
// unit h = (W1 e + b1) * sigmoid(W2 e + b2) (m) -> mean pool -> C
// independent affine heads -> 2 logits each.
//
// The per-token nonlinearity is what makes input-embedding gradients
// token-dependent. The gate matters: with a saturating activation such as
// tanh, the most informative chunks are driven into saturation, their
// derivative vanishes, and gradient saliency lands on boilerplate instead
// (measured, not hypothetical). The multiplicative gate keeps the Jacobian
// proportional to the gate on informative chunks, so saliency concentrates
// on finding phrases once the classifier is trained. The heads stay affine
// after the mean, so saliency dilutes exactly by L/(L+dL) when
// uninformative text is appended.
struct DiagnosticClassifier {
    corpus::ClassifierTokenizer tokenizer;
    int emb_dim = 16;
    int hidden_dim = 32;
    int n_pathologies = 0;

    Vec emb;      // vocab x d
    Vec w1, b1;   // m x d, m  (linear path)
    Vec w2, b2;   // m x d, m  (gate path)
    Vec heads_w;  // C x 2 x m
    Vec heads_b;  // C x 2

    void init(Rng& rng);
    std::vector<ParamView> params();

    // Mean-pooled hidden representation of a chunk-id sequence. Empty
    // input pools to the zero vector, so empty text classifies by bias.
    Vec pooled(const std::vector<int>& chunk_ids) const;
    // 2C logits, laid out [c][neg,pos].
    Vec logits_from_pooled(const Vec& p) const;
};

struct TrainStats {
    std::vector<double> train_loss;     // per epoch
    std::vector<double> holdout_agree;  // exact-label rate per epoch, if holdout given
};

// Cross-entropy against keyword-oracle labels, Adam, single-threaded,
// deterministic given seed. Throws on non-finite loss.
DiagnosticClassifier train_classifier(const corpus::PathologyCatalog& catalog,
                                      const std::vector<corpus::CaseRecord>& train,
                                      const std::vector<corpus::CaseRecord>* holdout,
                                      int emb_dim, int hidden_dim,
                                      int epochs, double lr, std::uint64_t seed,
                                      TrainStats* stats = nullptr);

LabelVector classify(const DiagnosticClassifier& clf, const std::string& text);

// Exact-label agreement between classifier and oracle over a set of cases.
double oracle_agreement(const DiagnosticClassifier& clf,
                        const corpus::PathologyCatalog& catalog,
                        const std::vector<corpus::CaseRecord>& cases);

struct SaliencyMap {
    std::vector<double> classifier_scores;       // s_j >= 0 per classifier token
    std::vector<corpus::TokenSpan> spans;        // matching char spans
    std::vector<Vec> gradients;                  // per-token d-dim gradient (pre-norm)
};

// s_j = ||dS/de_j||_2 where S = sum over target pathologies of the
// positive-class logit. Empty target set or empty text -> all-zero map.
SaliencyMap saliency(const DiagnosticClassifier& clf, const std::string& text,
                     const std::set<int>& target_set);

// Max-overlap alignment of classifier-token scores onto policy-token char
// spans; tokens with no overlapping classifier token (BOS/EOS) get 0.
// `mode`: 0 = max (default), 1 = sum, 2 = mean.
std::vector<double> align_scores(const SaliencyMap& sal,
                                 const std::vector<corpus::TokenSpan>& policy_spans,
                                 int mode = 0);

inline constexpr int kClassifierSchemaVersion = 1;

void save_classifier(const std::string& path, const DiagnosticClassifier& clf,
                     const nlohmann::ordered_json& run_config);
DiagnosticClassifier load_classifier(const std::string& path);

} // namespace reportrl::labeler
