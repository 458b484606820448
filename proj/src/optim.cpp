// SPDX-License-Identifier: Apache-2.0
#include "reportrl/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace reportrl::optim {

Mode mode_from_string(const std::string& s) {
    if (s == "grpo") return Mode::Grpo;
    if (s == "ditpo_rule") return Mode::DitpoRule;
    if (s == "ditpo_grad") return Mode::DitpoGrad;
    throw std::invalid_argument("unknown mode '" + s +
                                "' (expected grpo, ditpo_rule, or ditpo_grad)");
}

std::string mode_to_string(Mode m) {
    switch (m) {
        case Mode::Grpo: return "grpo";
        case Mode::DitpoRule: return "ditpo_rule";
        case Mode::DitpoGrad: return "ditpo_grad";
    }
    throw std::invalid_argument("invalid mode value");
}

std::vector<double> group_advantages(const std::vector<double>& rewards,
                                     double std_epsilon) {
    if (rewards.size() < 2)
        throw std::invalid_argument("group advantages need at least 2 rewards");
    const double m = mean(rewards);
    const double s = pop_std(rewards);
    std::vector<double> out(rewards.size(), 0.0);
    if (s == 0.0) return out; // zero-variance group: no learning signal
    for (std::size_t i = 0; i < rewards.size(); ++i)
        out[i] = (rewards[i] - m) / (s + std_epsilon);
    return out;
}

TfidfTable tfidf_table(const std::vector<std::vector<int>>& docs) {
    if (docs.empty()) throw std::invalid_argument("tfidf needs at least 1 document");
    const double n_docs = static_cast<double>(docs.size());

    std::unordered_map<int, int> df;
    for (const auto& doc : docs) {
        std::unordered_map<int, bool> seen;
        for (int tok : doc)
            if (!seen[tok]) {
                seen[tok] = true;
                ++df[tok];
            }
    }

    TfidfTable table(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto& doc = docs[i];
        table[i].resize(doc.size());
        if (doc.empty()) continue;
        std::unordered_map<int, int> counts;
        for (int tok : doc) ++counts[tok];
        const double len = static_cast<double>(doc.size());
        for (std::size_t t = 0; t < doc.size(); ++t) {
            TfidfEntry& e = table[i][t];
            e.tf = static_cast<double>(counts[doc[t]]) / len;
            e.idf = std::log(n_docs / static_cast<double>(df[doc[t]]));
            e.tfidf = e.tf * e.idf;
        }
    }
    return table;
}

std::vector<std::vector<double>> tfidf_weights(const std::vector<std::vector<int>>& docs,
                                               double alpha, TfidfTable* table_out) {
    TfidfTable table = tfidf_table(docs);
    std::vector<std::vector<double>> weights(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
        weights[i].resize(table[i].size());
        for (std::size_t t = 0; t < table[i].size(); ++t)
            weights[i][t] = 1.0 + alpha * table[i][t].tfidf;
    }
    if (table_out) *table_out = std::move(table);
    return weights;
}

std::vector<double> gradient_weights(const labeler::DiagnosticClassifier& clf,
                                     const policy::Rollout& rollout,
                                     const std::set<int>& target_set,
                                     double beta, int saliency_agg) {
    labeler::SaliencyMap sal = labeler::saliency(clf, rollout.text, target_set);
    std::vector<double> aligned = labeler::align_scores(sal, rollout.spans, saliency_agg);
    std::vector<double> weights(aligned.size());
    for (std::size_t t = 0; t < aligned.size(); ++t)
        weights[t] = 1.0 + beta * aligned[t];
    return weights;
}

void assemble_token_advantages(policy::RolloutGroup& group, const AdvantageConfig& cfg,
                               const labeler::DiagnosticClassifier* clf,
                               const std::set<int>* target_set) {
    const std::size_t n = group.rollouts.size();
    if (group.advantages.size() != n)
        throw std::invalid_argument("group advantages must be computed before token assembly");

    group.token_weights.assign(n, {});
    switch (cfg.mode) {
        case Mode::Grpo:
            for (std::size_t i = 0; i < n; ++i)
                group.token_weights[i].assign(group.rollouts[i].tokens.size(), 1.0);
            break;
        case Mode::DitpoRule: {
            std::vector<std::vector<int>> docs(n);
            for (std::size_t i = 0; i < n; ++i) docs[i] = group.rollouts[i].tokens;
            group.token_weights = tfidf_weights(docs, cfg.alpha);
            break;
        }
        case Mode::DitpoGrad: {
            if (!clf || !target_set)
                throw std::invalid_argument("ditpo_grad needs a classifier and a target set");
            for (std::size_t i = 0; i < n; ++i)
                group.token_weights[i] = gradient_weights(*clf, group.rollouts[i],
                                                          *target_set, cfg.beta,
                                                          cfg.saliency_agg);
            break;
        }
    }

    group.token_advantages.assign(n, {});
    for (std::size_t i = 0; i < n; ++i) {
        const auto& w = group.token_weights[i];
        if (w.size() != group.rollouts[i].tokens.size())
            throw std::invalid_argument("token weight length mismatch at rollout " +
                                        std::to_string(i));
        group.token_advantages[i].resize(w.size());
        for (std::size_t t = 0; t < w.size(); ++t)
            group.token_advantages[i][t] = group.advantages[i] * w[t];
    }
}

} // namespace reportrl::optim
