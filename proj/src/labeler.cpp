// SPDX-License-Identifier: Apache-2.0
#include "reportrl/labeler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "reportrl/util.hpp"

namespace reportrl::labeler {

namespace {

// Last occurrence start of any phrase in `phrases`, or npos.
std::size_t last_occurrence(const std::vector<std::string>& phrases,
                            const std::string& text) {
    std::size_t best = std::string::npos;
    for (const auto& phrase : phrases) {
        std::size_t at = text.rfind(phrase);
        if (at == std::string::npos) continue;
        if (best == std::string::npos || at > best) best = at;
    }
    return best;
}

// Per-token activations of the gated unit: a = W1 e + b1, g = sigmoid(W2 e + b2),
// h = a * g. Backward and saliency both need a and g, not just h.
struct TokenAct {
    Vec a, g, h;
};

TokenAct token_act(const DiagnosticClassifier& clf, int id) {
    const int d = clf.emb_dim, m = clf.hidden_dim;
    TokenAct act;
    act.a.resize(static_cast<std::size_t>(m));
    act.g.resize(static_cast<std::size_t>(m));
    act.h.resize(static_cast<std::size_t>(m));
    const double* e = clf.emb.data() + static_cast<std::size_t>(id) * d;
    for (int r = 0; r < m; ++r) {
        double s1 = clf.b1[static_cast<std::size_t>(r)];
        double s2 = clf.b2[static_cast<std::size_t>(r)];
        const double* wa = clf.w1.data() + static_cast<std::size_t>(r) * d;
        const double* wg = clf.w2.data() + static_cast<std::size_t>(r) * d;
        for (int k = 0; k < d; ++k) {
            s1 += wa[k] * e[k];
            s2 += wg[k] * e[k];
        }
        const double gate = 1.0 / (1.0 + std::exp(-s2));
        act.a[static_cast<std::size_t>(r)] = s1;
        act.g[static_cast<std::size_t>(r)] = gate;
        act.h[static_cast<std::size_t>(r)] = s1 * gate;
    }
    return act;
}

} // namespace

LabelVector keyword_oracle(const corpus::PathologyCatalog& catalog,
                           const std::string& text) {
    LabelVector out;
    out.values.reserve(catalog.pathologies.size());
    for (const auto& p : catalog.pathologies) {
        std::size_t pos = last_occurrence(p.positive, text);
        std::size_t neg = last_occurrence(p.negative, text);
        bool label = pos != std::string::npos &&
                     (neg == std::string::npos || neg < pos);
        out.values.push_back(label ? 1 : 0);
    }
    return out;
}

std::set<int> oracle_positive_set(const corpus::PathologyCatalog& catalog,
                                  const std::string& text) {
    std::set<int> out;
    LabelVector lv = keyword_oracle(catalog, text);
    for (std::size_t c = 0; c < lv.values.size(); ++c)
        if (lv.values[c] == 1) out.insert(static_cast<int>(c));
    return out;
}

void DiagnosticClassifier::init(Rng& rng) {
    const int V = tokenizer.vocab_size();
    const int d = emb_dim, m = hidden_dim, C = n_pathologies;
    if (V < 1 || d < 1 || m < 1 || C < 1)
        throw std::invalid_argument("classifier dimensions must be positive");
    emb.assign(static_cast<std::size_t>(V) * d, 0.0);
    w1.assign(static_cast<std::size_t>(m) * d, 0.0);
    b1.assign(static_cast<std::size_t>(m), 0.0);
    w2.assign(static_cast<std::size_t>(m) * d, 0.0);
    b2.assign(static_cast<std::size_t>(m), 0.0);
    heads_w.assign(static_cast<std::size_t>(C) * 2 * m, 0.0);
    heads_b.assign(static_cast<std::size_t>(C) * 2, 0.0);
    for (auto& v : emb) v = 0.1 * rng.normal();
    for (auto& v : w1) v = rng.normal() / std::sqrt(static_cast<double>(d));
    for (auto& v : w2) v = rng.normal() / std::sqrt(static_cast<double>(d));
    for (auto& v : heads_w) v = rng.normal() / std::sqrt(static_cast<double>(m));
    // Unknown chunks (only produced by masked text) pool as zero signal.
    std::fill(emb.begin(), emb.begin() + d, 0.0);
}

std::vector<ParamView> DiagnosticClassifier::params() {
    return {{"emb", &emb}, {"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2},
            {"heads_w", &heads_w}, {"heads_b", &heads_b}};
}

Vec DiagnosticClassifier::pooled(const std::vector<int>& chunk_ids) const {
    Vec p(static_cast<std::size_t>(hidden_dim), 0.0);
    if (chunk_ids.empty()) return p;
    for (int id : chunk_ids) {
        TokenAct act = token_act(*this, id);
        for (std::size_t r = 0; r < p.size(); ++r) p[r] += act.h[r];
    }
    const double inv = 1.0 / static_cast<double>(chunk_ids.size());
    for (auto& v : p) v *= inv;
    return p;
}

Vec DiagnosticClassifier::logits_from_pooled(const Vec& p) const {
    const int m = hidden_dim, C = n_pathologies;
    Vec logits(static_cast<std::size_t>(C) * 2);
    for (int c = 0; c < C; ++c)
        for (int k = 0; k < 2; ++k) {
            const double* w = heads_w.data() + (static_cast<std::size_t>(c) * 2 + k) * m;
            double acc = heads_b[static_cast<std::size_t>(c) * 2 + k];
            for (int r = 0; r < m; ++r) acc += w[r] * p[static_cast<std::size_t>(r)];
            logits[static_cast<std::size_t>(c) * 2 + k] = acc;
        }
    return logits;
}

LabelVector classify(const DiagnosticClassifier& clf, const std::string& text) {
    auto toks = clf.tokenizer.tokenize(text);
    Vec logits = clf.logits_from_pooled(clf.pooled(toks.ids));
    LabelVector out;
    const int C = clf.n_pathologies;
    out.values.resize(static_cast<std::size_t>(C));
    out.logits.resize(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) {
        double neg = logits[static_cast<std::size_t>(c) * 2];
        double pos = logits[static_cast<std::size_t>(c) * 2 + 1];
        out.logits[static_cast<std::size_t>(c)] = {neg, pos};
        out.values[static_cast<std::size_t>(c)] = pos > neg ? 1 : 0;
    }
    return out;
}

DiagnosticClassifier train_classifier(const corpus::PathologyCatalog& catalog,
                                      const std::vector<corpus::CaseRecord>& train,
                                      const std::vector<corpus::CaseRecord>* holdout,
                                      int emb_dim, int hidden_dim,
                                      int epochs, double lr, std::uint64_t seed,
                                      TrainStats* stats) {
    if (train.empty()) throw std::invalid_argument("classifier training set is empty");
    std::vector<std::string> texts;
    texts.reserve(train.size());
    for (const auto& rec : train) texts.push_back(rec.text);

    DiagnosticClassifier clf;
    clf.tokenizer = corpus::ClassifierTokenizer::build(texts);
    clf.emb_dim = emb_dim;
    clf.hidden_dim = hidden_dim;
    clf.n_pathologies = catalog.n_pathologies();
    Rng master(seed);
    Rng init_rng = master.derive("classifier-init");
    clf.init(init_rng);

    const int C = clf.n_pathologies;
    std::vector<std::vector<int>> ids(train.size());
    std::vector<std::vector<int>> targets(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        ids[i] = clf.tokenizer.tokenize(train[i].text).ids;
        targets[i] = keyword_oracle(catalog, train[i].text).values;
    }

    Adam opt(lr);
    auto params = clf.params();
    const int d = emb_dim, m = hidden_dim;
    Vec g_emb(clf.emb.size()), g_w1(clf.w1.size()), g_b1(clf.b1.size());
    Vec g_w2(clf.w2.size()), g_b2(clf.b2.size());
    Vec g_hw(clf.heads_w.size()), g_hb(clf.heads_b.size());
    std::vector<ParamView> grads = {{"emb", &g_emb}, {"w1", &g_w1}, {"b1", &g_b1},
                                    {"w2", &g_w2}, {"b2", &g_b2},
                                    {"heads_w", &g_hw}, {"heads_b", &g_hb}};

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng erng = master.derive("classifier-epoch").derive(static_cast<std::uint64_t>(epoch));
        for (std::size_t k = order.size(); k > 1; --k)
            std::swap(order[k - 1], order[erng.uniform_index(k)]);

        double loss_sum = 0.0;
        for (std::size_t oi = 0; oi < order.size(); ++oi) {
            const std::size_t i = order[oi];
            const auto& toks = ids[i];
            const std::size_t L = toks.size();
            for (auto& g : grads) std::fill(g.v->begin(), g.v->end(), 0.0);

            std::vector<TokenAct> acts(L);
            Vec p(static_cast<std::size_t>(m), 0.0);
            for (std::size_t j = 0; j < L; ++j) {
                acts[j] = token_act(clf, toks[j]);
                for (int r = 0; r < m; ++r) p[static_cast<std::size_t>(r)] += acts[j].h[static_cast<std::size_t>(r)];
            }
            if (L > 0)
                for (auto& v : p) v /= static_cast<double>(L);
            Vec logits = clf.logits_from_pooled(p);

            double loss = 0.0;
            Vec dp(static_cast<std::size_t>(m), 0.0);
            for (int c = 0; c < C; ++c) {
                double ln = logits[static_cast<std::size_t>(c) * 2];
                double lp = logits[static_cast<std::size_t>(c) * 2 + 1];
                double zmax = std::max(ln, lp);
                double lse = zmax + std::log(std::exp(ln - zmax) + std::exp(lp - zmax));
                int y = targets[i][static_cast<std::size_t>(c)];
                loss += lse - (y == 1 ? lp : ln);
                double probs[2] = {std::exp(ln - lse), std::exp(lp - lse)};
                for (int kk = 0; kk < 2; ++kk) {
                    double dlogit = probs[kk] - (kk == y ? 1.0 : 0.0);
                    std::size_t base = (static_cast<std::size_t>(c) * 2 + kk) * m;
                    for (int r = 0; r < m; ++r) {
                        g_hw[base + r] += dlogit * p[static_cast<std::size_t>(r)];
                        dp[static_cast<std::size_t>(r)] += dlogit * clf.heads_w[base + r];
                    }
                    g_hb[static_cast<std::size_t>(c) * 2 + kk] += dlogit;
                }
            }
            loss_sum += loss;
            if (!std::isfinite(loss))
                throw std::runtime_error("classifier training diverged (non-finite loss) at epoch " +
                                         std::to_string(epoch) + ", case " + train[i].case_id);

            if (L > 0) {
                const double invL = 1.0 / static_cast<double>(L);
                for (std::size_t j = 0; j < L; ++j) {
                    // dh_j = dp/L; through the gate: da = dh*g, dz2 = dh*a*g*(1-g)
                    const double* e = clf.emb.data() + static_cast<std::size_t>(toks[j]) * d;
                    double* ge = g_emb.data() + static_cast<std::size_t>(toks[j]) * d;
                    const TokenAct& act = acts[j];
                    for (int r = 0; r < m; ++r) {
                        const double dh = dp[static_cast<std::size_t>(r)] * invL;
                        const double gr = act.g[static_cast<std::size_t>(r)];
                        const double da = dh * gr;
                        const double dz2 = dh * act.a[static_cast<std::size_t>(r)] * gr * (1.0 - gr);
                        if (da == 0.0 && dz2 == 0.0) continue;
                        double* gwa = g_w1.data() + static_cast<std::size_t>(r) * d;
                        double* gwg = g_w2.data() + static_cast<std::size_t>(r) * d;
                        const double* wa = clf.w1.data() + static_cast<std::size_t>(r) * d;
                        const double* wg = clf.w2.data() + static_cast<std::size_t>(r) * d;
                        for (int kk = 0; kk < d; ++kk) {
                            gwa[kk] += da * e[kk];
                            gwg[kk] += dz2 * e[kk];
                            ge[kk] += da * wa[kk] + dz2 * wg[kk];
                        }
                        g_b1[static_cast<std::size_t>(r)] += da;
                        g_b2[static_cast<std::size_t>(r)] += dz2;
                    }
                }
            }
            opt.step(params, grads);
        }
        if (stats) {
            stats->train_loss.push_back(loss_sum / static_cast<double>(train.size()));
            if (holdout) stats->holdout_agree.push_back(oracle_agreement(clf, catalog, *holdout));
        }
    }
    return clf;
}

double oracle_agreement(const DiagnosticClassifier& clf,
                        const corpus::PathologyCatalog& catalog,
                        const std::vector<corpus::CaseRecord>& cases) {
    if (cases.empty()) return 1.0;
    int hits = 0;
    for (const auto& rec : cases) {
        if (classify(clf, rec.text).values == keyword_oracle(catalog, rec.text).values)
            ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(cases.size());
}

SaliencyMap saliency(const DiagnosticClassifier& clf, const std::string& text,
                     const std::set<int>& target_set) {
    for (int c : target_set)
        if (c < 0 || c >= clf.n_pathologies)
            throw std::invalid_argument("saliency target index out of range");

    auto toks = clf.tokenizer.tokenize(text);
    const std::size_t L = toks.ids.size();
    SaliencyMap out;
    out.spans = toks.spans;
    out.classifier_scores.assign(L, 0.0);
    out.gradients.assign(L, Vec(static_cast<std::size_t>(clf.emb_dim), 0.0));
    if (L == 0 || target_set.empty()) return out;

    const int d = clf.emb_dim, m = clf.hidden_dim;
    // u = sum over targets of the positive-class head row.
    Vec u(static_cast<std::size_t>(m), 0.0);
    for (int c : target_set) {
        const double* w = clf.heads_w.data() + (static_cast<std::size_t>(c) * 2 + 1) * m;
        for (int r = 0; r < m; ++r) u[static_cast<std::size_t>(r)] += w[r];
    }
    const double invL = 1.0 / static_cast<double>(L);
    for (std::size_t j = 0; j < L; ++j) {
        TokenAct act = token_act(clf, toks.ids[j]);
        Vec& grad = out.gradients[j];
        // dS/de_j = (1/L) [W1^T (u*g) + W2^T (u*a*g*(1-g))]
        for (int r = 0; r < m; ++r) {
            const double ur = u[static_cast<std::size_t>(r)];
            if (ur == 0.0) continue;
            const double gr = act.g[static_cast<std::size_t>(r)];
            const double ca = invL * ur * gr;
            const double cg = invL * ur * act.a[static_cast<std::size_t>(r)] * gr * (1.0 - gr);
            const double* wa = clf.w1.data() + static_cast<std::size_t>(r) * d;
            const double* wg = clf.w2.data() + static_cast<std::size_t>(r) * d;
            for (int k = 0; k < d; ++k)
                grad[static_cast<std::size_t>(k)] += ca * wa[k] + cg * wg[k];
        }
        double norm2 = 0.0;
        for (double v : grad) norm2 += v * v;
        out.classifier_scores[j] = std::sqrt(norm2);
    }
    return out;
}

std::vector<double> align_scores(const SaliencyMap& sal,
                                 const std::vector<corpus::TokenSpan>& policy_spans,
                                 int mode) {
    if (mode < 0 || mode > 2) throw std::invalid_argument("alignment mode must be 0, 1, or 2");
    std::vector<double> out(policy_spans.size(), 0.0);
    for (std::size_t t = 0; t < policy_spans.size(); ++t) {
        const auto& ps = policy_spans[t];
        double best = 0.0, sum = 0.0;
        int count = 0;
        for (std::size_t j = 0; j < sal.spans.size(); ++j) {
            const auto& cs = sal.spans[j];
            if (cs.begin < ps.end && ps.begin < cs.end) {
                best = std::max(best, sal.classifier_scores[j]);
                sum += sal.classifier_scores[j];
                ++count;
            }
        }
        if (count == 0) continue;
        out[t] = mode == 0 ? best : (mode == 1 ? sum : sum / count);
    }
    return out;
}

void save_classifier(const std::string& path, const DiagnosticClassifier& clf,
                     const nlohmann::ordered_json& run_config) {
    nlohmann::ordered_json j;
    j["schema_version"] = kClassifierSchemaVersion;
    j["kind"] = "classifier";
    j["config"] = run_config;
    j["tokenizer"]["width"] = clf.tokenizer.width();
    j["tokenizer"]["vocab"] = clf.tokenizer.vocab();
    j["emb_dim"] = clf.emb_dim;
    j["hidden_dim"] = clf.hidden_dim;
    j["n_pathologies"] = clf.n_pathologies;
    j["params"]["emb"] = clf.emb;
    j["params"]["w1"] = clf.w1;
    j["params"]["b1"] = clf.b1;
    j["params"]["w2"] = clf.w2;
    j["params"]["b2"] = clf.b2;
    j["params"]["heads_w"] = clf.heads_w;
    j["params"]["heads_b"] = clf.heads_b;
    write_text_file(path, j.dump());
}

DiagnosticClassifier load_classifier(const std::string& path) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(path));
    const int version = j.at("schema_version").get<int>();
    if (version != kClassifierSchemaVersion)
        throw std::runtime_error("classifier schema version mismatch: expected " +
                                 std::to_string(kClassifierSchemaVersion) + ", found " +
                                 std::to_string(version));
    DiagnosticClassifier clf;
    clf.tokenizer = corpus::ClassifierTokenizer::from_vocab(
        j.at("tokenizer").at("vocab").get<std::vector<std::string>>(),
        j.at("tokenizer").at("width").get<int>());
    clf.emb_dim = j.at("emb_dim").get<int>();
    clf.hidden_dim = j.at("hidden_dim").get<int>();
    clf.n_pathologies = j.at("n_pathologies").get<int>();
    clf.emb = j.at("params").at("emb").get<Vec>();
    clf.w1 = j.at("params").at("w1").get<Vec>();
    clf.b1 = j.at("params").at("b1").get<Vec>();
    clf.w2 = j.at("params").at("w2").get<Vec>();
    clf.b2 = j.at("params").at("b2").get<Vec>();
    clf.heads_w = j.at("params").at("heads_w").get<Vec>();
    clf.heads_b = j.at("params").at("heads_b").get<Vec>();
    return clf;
}

} // namespace reportrl::labeler
