// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reportrl/corpus.hpp"
#include "reportrl/labeler.hpp"
#include "reportrl/optim.hpp"
#include "reportrl/policy.hpp"
#include "reportrl/rng.hpp"

using namespace reportrl;
using namespace reportrl::optim;

namespace {

// Rollout standing in for a generated report: tokens of a known text.
policy::Rollout rollout_of(const corpus::PolicyTokenizer& tok, const std::string& text) {
    policy::Rollout r;
    r.tokens = tok.tokenize(text);
    r.text = tok.detokenize(r.tokens);
    r.spans = tok.spans(r.tokens);
    r.terminated = true;
    return r;
}

} // namespace

TEST_CASE("two-reward group normalizes to +-1") {
    auto a = group_advantages({1.0, 0.0}, 1e-8);
    REQUIRE(a.size() == 2);
    CHECK(a[0] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(a[1] == doctest::Approx(-1.0).epsilon(1e-7));
    CHECK(a[0] + a[1] == 0.0);
}

TEST_CASE("zero-variance group yields exactly zero advantages") {
    for (auto rewards : {std::vector<double>{0.7, 0.7, 0.7, 0.7},
                         std::vector<double>{0.0, 0.0},
                         std::vector<double>{1.0, 1.0, 1.0}}) {
        for (double adv : group_advantages(rewards, 1e-8)) CHECK(adv == 0.0);
    }
}

TEST_CASE("groups smaller than two rewards are rejected") {
    CHECK_THROWS_AS(group_advantages({}, 1e-8), std::invalid_argument);
    CHECK_THROWS_AS(group_advantages({0.5}, 1e-8), std::invalid_argument);
}

TEST_CASE("random groups normalize to mean 0 and population std 1") {
    Rng rng(2024);
    for (int g = 0; g < 1000; ++g) {
        std::vector<double> rewards(8);
        for (auto& r : rewards) r = rng.uniform();
        const double in_std = pop_std(rewards);
        auto a = group_advantages(rewards, 1e-8);
        CHECK(std::abs(mean(a)) <= 1e-9);
        if (in_std > 1e-6) CHECK(std::abs(pop_std(a) - 1.0) <= 1e-6);
    }
}

TEST_CASE("tfidf worked example: {a b} and {a c}") {
    // shared token: idf = ln(2/2) = 0; unique token: tf=1/2, idf=ln 2
    std::vector<std::vector<int>> docs = {{6, 7}, {6, 8}};
    TfidfTable table;
    auto w = tfidf_weights(docs, 4.0, &table);
    CHECK(table[0][0].tf == 0.5);
    CHECK(table[0][0].idf == 0.0);
    CHECK(table[0][1].tf == 0.5);
    CHECK(table[0][1].idf == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(w[0][0] == 1.0); // ubiquitous token: weight exactly 1
    CHECK(w[0][1] == doctest::Approx(1.0 + 2.0 * std::log(2.0)).epsilon(1e-15));
    CHECK(w[1][1] == w[0][1]); // symmetric role
}

TEST_CASE("repeated tokens inside one document share one weight") {
    std::vector<std::vector<int>> docs = {{6, 6, 7}, {8}};
    TfidfTable table;
    auto w = tfidf_weights(docs, 4.0, &table);
    CHECK(table[0][0].tf == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(w[0][0] == w[0][1]);
    CHECK(w[0][0] > w[0][2]); // tf 2/3 vs 1/3 at equal idf
}

TEST_CASE("alpha=0 collapses tfidf weights to exactly 1") {
    Rng rng(7);
    std::vector<std::vector<int>> docs(5);
    for (auto& d : docs) {
        d.resize(4 + rng.uniform_index(8));
        for (auto& t : d) t = static_cast<int>(rng.uniform_index(12));
    }
    for (const auto& row : tfidf_weights(docs, 0.0))
        for (double v : row) CHECK(v == 1.0);
}

TEST_CASE("tfidf weights never drop below 1 and tolerate empty docs") {
    Rng rng(8);
    std::vector<std::vector<int>> docs(6);
    for (std::size_t i = 1; i < docs.size(); ++i) { // docs[0] stays empty
        docs[i].resize(1 + rng.uniform_index(10));
        for (auto& t : docs[i]) t = static_cast<int>(rng.uniform_index(9));
    }
    auto w = tfidf_weights(docs, 4.0);
    CHECK(w[0].empty());
    for (const auto& row : w)
        for (double v : row) CHECK(v >= 1.0);
    CHECK_THROWS_AS(tfidf_weights({}, 4.0), std::invalid_argument);
}

TEST_CASE("single-document tfidf is all ones: every token is ubiquitous") {
    auto w = tfidf_weights({{6, 7, 8, 6}}, 4.0);
    for (double v : w[0]) CHECK(v == 1.0);
}

TEST_CASE("gradient weights: beta=0 and empty target sets give exactly 1") {
    auto cat = corpus::default_catalog();
    corpus::GeneratorConfig gc;
    gc.prevalence.assign(6, 0.3);
    auto cases = corpus::generate_corpus(cat, gc, 40, 91, 1);

    std::vector<std::string> texts;
    for (const auto& rec : cases) texts.push_back(rec.text);
    labeler::DiagnosticClassifier clf;
    clf.tokenizer = corpus::ClassifierTokenizer::build(texts);
    clf.emb_dim = 8;
    clf.hidden_dim = 12;
    clf.n_pathologies = 6;
    Rng crng(92);
    clf.init(crng);

    auto tok = corpus::PolicyTokenizer::from_catalog(cat);
    for (int i = 0; i < 5; ++i) {
        auto r = rollout_of(tok, cases[static_cast<std::size_t>(i)].text);
        for (double v : gradient_weights(clf, r, {0, 2}, 0.0)) CHECK(v == 1.0);
        for (double v : gradient_weights(clf, r, {}, 1.0)) CHECK(v == 1.0);
        for (double v : gradient_weights(clf, r, {0, 1, 5}, 1.0)) CHECK(v >= 1.0);
        // aggregation modes all stay at or above 1
        for (int agg : {0, 1, 2})
            for (double v : gradient_weights(clf, r, {1}, 2.0, agg)) CHECK(v >= 1.0);
        CHECK_THROWS_AS(gradient_weights(clf, r, {1}, 1.0, 3), std::invalid_argument);
    }
}

TEST_CASE("assemble: grpo broadcasts the scalar advantage bitwise") {
    auto cat = corpus::default_catalog();
    auto tok = corpus::PolicyTokenizer::from_catalog(cat);
    policy::RolloutGroup g;
    g.rollouts = {rollout_of(tok, "lungs are clear ."),
                  rollout_of(tok, "no acute process identified ."),
                  rollout_of(tok, "lungs are clear .")};
    g.advantages = {0.83, -1.2, 0.0};

    assemble_token_advantages(g, AdvantageConfig{Mode::Grpo});
    REQUIRE(g.token_weights.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        REQUIRE(g.token_weights[i].size() == g.rollouts[i].tokens.size());
        for (std::size_t t = 0; t < g.token_weights[i].size(); ++t) {
            CHECK(g.token_weights[i][t] == 1.0);
            CHECK(g.token_advantages[i][t] == g.advantages[i]);
        }
    }
}

TEST_CASE("assemble: rule mode multiplies by group tfidf weights") {
    auto cat = corpus::default_catalog();
    auto tok = corpus::PolicyTokenizer::from_catalog(cat);
    policy::RolloutGroup g;
    g.rollouts = {rollout_of(tok, "mild interstitial edema evident ."),
                  rollout_of(tok, "lungs are clear ."),
                  rollout_of(tok, "lungs are clear .")};
    g.advantages = {1.1, -0.4, -0.7};

    AdvantageConfig cfg;
    cfg.mode = Mode::DitpoRule;
    cfg.alpha = 4.0;
    assemble_token_advantages(g, cfg);

    std::vector<std::vector<int>> docs;
    for (const auto& r : g.rollouts) docs.push_back(r.tokens);
    auto expect = tfidf_weights(docs, 4.0);
    CHECK(g.token_weights == expect);
    for (std::size_t i = 0; i < g.rollouts.size(); ++i)
        for (std::size_t t = 0; t < g.token_weights[i].size(); ++t) {
            CHECK(g.token_advantages[i][t] == g.advantages[i] * g.token_weights[i][t]);
            // weights >= 1 preserve the advantage sign and never shrink it
            if (g.advantages[i] > 0.0) CHECK(g.token_advantages[i][t] >= g.advantages[i]);
            if (g.advantages[i] < 0.0) CHECK(g.token_advantages[i][t] <= g.advantages[i]);
        }
}

TEST_CASE("assemble: alpha=0 and beta=0 reduce both ditpo modes to grpo bitwise") {
    auto cat = corpus::default_catalog();
    auto tok = corpus::PolicyTokenizer::from_catalog(cat);
    labeler::DiagnosticClassifier clf;
    clf.tokenizer = corpus::ClassifierTokenizer::build(
        {"mild interstitial edema evident .", "no focal consolidation .",
         "heart size is normal ."});
    clf.emb_dim = 8;
    clf.hidden_dim = 12;
    clf.n_pathologies = 6;
    Rng crng(93);
    clf.init(crng);
    std::set<int> targets = {0, 3};

    policy::RolloutGroup base;
    base.rollouts = {rollout_of(tok, "mild interstitial edema evident ."),
                     rollout_of(tok, "no focal consolidation ."),
                     rollout_of(tok, "heart size is normal .")};
    base.advantages = {0.9, -0.2, -0.7};

    policy::RolloutGroup g1 = base, g2 = base, g3 = base;
    assemble_token_advantages(g1, AdvantageConfig{Mode::Grpo});
    AdvantageConfig rule{Mode::DitpoRule};
    rule.alpha = 0.0;
    assemble_token_advantages(g2, rule);
    AdvantageConfig grad{Mode::DitpoGrad};
    grad.beta = 0.0;
    assemble_token_advantages(g3, grad, &clf, &targets);

    CHECK(g1.token_weights == g2.token_weights);
    CHECK(g1.token_advantages == g2.token_advantages);
    CHECK(g1.token_weights == g3.token_weights);
    CHECK(g1.token_advantages == g3.token_advantages);
}

TEST_CASE("assemble rejects missing ingredients") {
    auto cat = corpus::default_catalog();
    auto tok = corpus::PolicyTokenizer::from_catalog(cat);
    policy::RolloutGroup g;
    g.rollouts = {rollout_of(tok, "lungs are clear ."), rollout_of(tok, "lungs are clear .")};
    CHECK_THROWS_AS(assemble_token_advantages(g, AdvantageConfig{Mode::Grpo}),
                    std::invalid_argument); // advantages not computed
    g.advantages = {1.0, -1.0};
    CHECK_THROWS_AS(assemble_token_advantages(g, AdvantageConfig{Mode::DitpoGrad}),
                    std::invalid_argument); // classifier missing
}

TEST_CASE("mode names round-trip and unknown names are rejected") {
    for (auto m : {Mode::Grpo, Mode::DitpoRule, Mode::DitpoGrad})
        CHECK(mode_from_string(mode_to_string(m)) == m);
    CHECK_THROWS_WITH_AS(mode_from_string("ppo"), doctest::Contains("ppo"),
                         std::invalid_argument);
}

TEST_CASE("trained-classifier saliency concentrates on finding phrases") {
    auto cat = corpus::default_catalog();
    corpus::GeneratorConfig gc;
    gc.prevalence.assign(6, 0.3);
    auto train = corpus::generate_corpus(cat, gc, 900, 401, 4);
    auto probe = corpus::generate_corpus(cat, gc, 400, 402, 4);

    auto clf = labeler::train_classifier(cat, train, nullptr, 16, 32, 8, 0.01, 403);
    auto tok = corpus::PolicyTokenizer::from_catalog(cat);

    double finding_sum = 0.0, other_sum = 0.0;
    long finding_n = 0, other_n = 0;
    int cases_seen = 0;
    for (const auto& rec : probe) {
        auto targets = labeler::oracle_positive_set(cat, rec.text);
        if (targets.empty()) continue;
        ++cases_seen;
        auto r = rollout_of(tok, rec.text);
        auto w = gradient_weights(clf, r, targets, 1.0);

        // char ranges covered by any positive pathology's asserted phrase
        std::vector<std::pair<std::size_t, std::size_t>> ranges;
        for (int c : targets)
            for (const auto& phrase : cat.pathologies[static_cast<std::size_t>(c)].positive) {
                auto pos = rec.text.find(phrase);
                while (pos != std::string::npos) {
                    ranges.emplace_back(pos, pos + phrase.size());
                    pos = rec.text.find(phrase, pos + 1);
                }
            }
        for (std::size_t t = 0; t < w.size(); ++t) {
            const auto& sp = r.spans[t];
            bool inside = false;
            for (auto [b, e] : ranges)
                if (static_cast<std::size_t>(sp.begin) < e &&
                    static_cast<std::size_t>(sp.end) > b) {
                    inside = true;
                    break;
                }
            if (inside) {
                finding_sum += w[t];
                ++finding_n;
            } else {
                other_sum += w[t];
                ++other_n;
            }
        }
        if (cases_seen >= 200) break;
    }
    REQUIRE(cases_seen >= 200);
    REQUIRE(finding_n > 0);
    REQUIRE(other_n > 0);
    CHECK(finding_sum / static_cast<double>(finding_n) >
          other_sum / static_cast<double>(other_n));
}
