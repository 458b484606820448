// SPDX-License-Identifier: Apache-2.0
#include "reportrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "reportrl/util.hpp"

namespace reportrl::policy {

namespace {

// One cell step: consumes h_prev and the embedding of `input`, fills z, c,
// h. Buffers must be sized `hidden`.
void cell_step(const PolicyModel& m, const Vec& h_prev, int input,
               Vec& z, Vec& c, Vec& h) {
    const int H = m.hidden;
    const double* x = m.emb.data() + static_cast<std::size_t>(input) * H;
    Vec az(static_cast<std::size_t>(H)), ac(static_cast<std::size_t>(H));
    matvec(m.w_zx.data(), H, H, x, az.data());
    matvec(m.w_cx.data(), H, H, x, ac.data());
    Vec tmp(static_cast<std::size_t>(H));
    matvec(m.w_zh.data(), H, H, h_prev.data(), tmp.data());
    for (int r = 0; r < H; ++r) az[static_cast<std::size_t>(r)] += tmp[static_cast<std::size_t>(r)] + m.b_z[static_cast<std::size_t>(r)];
    matvec(m.w_ch.data(), H, H, h_prev.data(), tmp.data());
    for (int r = 0; r < H; ++r) ac[static_cast<std::size_t>(r)] += tmp[static_cast<std::size_t>(r)] + m.b_c[static_cast<std::size_t>(r)];
    for (int r = 0; r < H; ++r) {
        double zr = sigmoid(az[static_cast<std::size_t>(r)]);
        double cr = std::tanh(ac[static_cast<std::size_t>(r)]);
        z[static_cast<std::size_t>(r)] = zr;
        c[static_cast<std::size_t>(r)] = cr;
        h[static_cast<std::size_t>(r)] = (1.0 - zr) * h_prev[static_cast<std::size_t>(r)] + zr * cr;
    }
}

Vec head_logits(const PolicyModel& m, const Vec& h) {
    const int V = m.vocab_size(), H = m.hidden;
    Vec logits(static_cast<std::size_t>(V));
    matvec(m.w_out.data(), V, H, h.data(), logits.data());
    for (int v = 0; v < V; ++v) logits[static_cast<std::size_t>(v)] += m.b_out[static_cast<std::size_t>(v)];
    return logits;
}

Vec initial_hidden(const PolicyModel& m, const Vec& features) {
    if (static_cast<int>(features.size()) != m.feat_dim)
        throw std::invalid_argument("feature dimension mismatch: expected " +
                                    std::to_string(m.feat_dim) + ", got " +
                                    std::to_string(features.size()));
    const int H = m.hidden;
    Vec h(static_cast<std::size_t>(H));
    matvec(m.w_feat.data(), H, m.feat_dim, features.data(), h.data());
    for (int r = 0; r < H; ++r) h[static_cast<std::size_t>(r)] += m.b_feat[static_cast<std::size_t>(r)];
    return h;
}

// Log-softmax of logits/tau, written into `out`.
void log_softmax(const Vec& logits, double tau, Vec& out) {
    const int V = static_cast<int>(logits.size());
    out.resize(logits.size());
    for (int v = 0; v < V; ++v) out[static_cast<std::size_t>(v)] = logits[static_cast<std::size_t>(v)] / tau;
    double lse = logsumexp(out.data(), V);
    for (auto& x : out) x -= lse;
}

} // namespace

void PolicyModel::init(int hidden_dim, int feature_dim, Rng& rng) {
    if (tokenizer.vocab_size() <= 0)
        throw std::invalid_argument("policy tokenizer must be set before init");
    hidden = hidden_dim;
    feat_dim = feature_dim;
    const int V = vocab_size(), H = hidden, F = feat_dim;
    auto fill_normal = [&rng](Vec& v, std::size_t n, double scale) {
        v.assign(n, 0.0);
        for (auto& x : v) x = scale * rng.normal();
    };
    const double sh = 1.0 / std::sqrt(static_cast<double>(H));
    fill_normal(emb, static_cast<std::size_t>(V) * H, 0.1);
    fill_normal(w_feat, static_cast<std::size_t>(H) * F, 1.0 / std::sqrt(static_cast<double>(F)));
    b_feat.assign(static_cast<std::size_t>(H), 0.0);
    fill_normal(w_zx, static_cast<std::size_t>(H) * H, sh);
    fill_normal(w_zh, static_cast<std::size_t>(H) * H, sh);
    b_z.assign(static_cast<std::size_t>(H), 0.0);
    fill_normal(w_cx, static_cast<std::size_t>(H) * H, sh);
    fill_normal(w_ch, static_cast<std::size_t>(H) * H, sh);
    b_c.assign(static_cast<std::size_t>(H), 0.0);
    fill_normal(w_out, static_cast<std::size_t>(V) * H, sh);
    b_out.assign(static_cast<std::size_t>(V), 0.0);
}

std::vector<ParamView> PolicyModel::params() {
    return {{"emb", &emb},   {"w_feat", &w_feat}, {"b_feat", &b_feat},
            {"w_zx", &w_zx}, {"w_zh", &w_zh},     {"b_z", &b_z},
            {"w_cx", &w_cx}, {"w_ch", &w_ch},     {"b_c", &b_c},
            {"w_out", &w_out}, {"b_out", &b_out}};
}

PolicyGrads PolicyGrads::zeros_like(const PolicyModel& m) {
    PolicyGrads g;
    g.emb.assign(m.emb.size(), 0.0);
    g.w_feat.assign(m.w_feat.size(), 0.0);
    g.b_feat.assign(m.b_feat.size(), 0.0);
    g.w_zx.assign(m.w_zx.size(), 0.0);
    g.w_zh.assign(m.w_zh.size(), 0.0);
    g.b_z.assign(m.b_z.size(), 0.0);
    g.w_cx.assign(m.w_cx.size(), 0.0);
    g.w_ch.assign(m.w_ch.size(), 0.0);
    g.b_c.assign(m.b_c.size(), 0.0);
    g.w_out.assign(m.w_out.size(), 0.0);
    g.b_out.assign(m.b_out.size(), 0.0);
    return g;
}

std::vector<ParamView> PolicyGrads::params() {
    return {{"emb", &emb},   {"w_feat", &w_feat}, {"b_feat", &b_feat},
            {"w_zx", &w_zx}, {"w_zh", &w_zh},     {"b_z", &b_z},
            {"w_cx", &w_cx}, {"w_ch", &w_ch},     {"b_c", &b_c},
            {"w_out", &w_out}, {"b_out", &b_out}};
}

void PolicyGrads::accumulate(const PolicyGrads& other) {
    auto mine = params();
    auto theirs = const_cast<PolicyGrads&>(other).params();
    for (std::size_t k = 0; k < mine.size(); ++k)
        add_acc(mine[k].v->data(), theirs[k].v->data(), static_cast<int>(mine[k].v->size()));
}

void PolicyGrads::scale(double s) {
    for (auto& view : params())
        for (auto& x : *view.v) x *= s;
}

Rollout sample(const PolicyModel& model, const Vec& features,
               const SampleStrategy& strategy, int max_len, Rng& rng) {
    if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
    const int V = model.vocab_size(), H = model.hidden;
    const double tau = strategy.kind == SampleStrategy::Kind::Temperature ? strategy.value : 1.0;
    if (tau <= 0.0) throw std::invalid_argument("temperature must be positive");

    Rollout out;
    Vec h = initial_hidden(model, features);
    Vec z(static_cast<std::size_t>(H)), c(static_cast<std::size_t>(H)), h_next(static_cast<std::size_t>(H));
    Vec logp;
    int input = corpus::PolicyTokenizer::kBos;
    for (int t = 0; t < max_len; ++t) {
        cell_step(model, h, input, z, c, h_next);
        h = h_next;
        Vec logits = head_logits(model, h);
        log_softmax(logits, tau, logp);

        // Shared path for all strategies: probabilities sorted descending
        // (ties by token id), one cumulative walk over the kept prefix.
        std::vector<int> order(static_cast<std::size_t>(V));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return logp[static_cast<std::size_t>(a)] > logp[static_cast<std::size_t>(b)];
        });

        int chosen;
        double chosen_logp;
        if (strategy.kind == SampleStrategy::Kind::Greedy) {
            chosen = order[0];
            chosen_logp = logp[static_cast<std::size_t>(chosen)];
        } else {
            double keep_mass = 1.0;
            std::size_t keep = order.size();
            if (strategy.kind == SampleStrategy::Kind::Nucleus) {
                if (strategy.value <= 0.0 || strategy.value > 1.0)
                    throw std::invalid_argument("nucleus mass must lie in (0,1]");
                // p == 1.0 keeps full support with exact mass 1, so it is
                // identical to temperature(1.0) draw-for-draw.
                if (strategy.value < 1.0) {
                    double cum = 0.0;
                    for (std::size_t k = 0; k < order.size(); ++k) {
                        cum += std::exp(logp[static_cast<std::size_t>(order[k])]);
                        if (cum >= strategy.value) {
                            keep = k + 1;
                            keep_mass = cum;
                            break;
                        }
                    }
                    if (keep == order.size()) keep_mass = cum > 0.0 ? cum : 1.0;
                }
            }
            double u = rng.uniform() * keep_mass;
            double cum = 0.0;
            chosen = order[keep - 1];
            for (std::size_t k = 0; k < keep; ++k) {
                cum += std::exp(logp[static_cast<std::size_t>(order[k])]);
                if (u < cum) {
                    chosen = order[k];
                    break;
                }
            }
            chosen_logp = logp[static_cast<std::size_t>(chosen)];
            if (strategy.kind == SampleStrategy::Kind::Nucleus)
                chosen_logp -= std::log(keep_mass);
        }

        out.tokens.push_back(chosen);
        out.log_probs.push_back(chosen_logp);
        if (chosen == corpus::PolicyTokenizer::kEos) {
            out.terminated = true;
            break;
        }
        input = chosen;
    }
    out.text = model.tokenizer.detokenize(out.tokens);
    out.spans = model.tokenizer.spans(out.tokens);
    return out;
}

std::vector<double> log_prob(const PolicyModel& model, const Vec& features,
                             const std::vector<int>& tokens, double temperature) {
    ForwardTrace trace = forward_teacher(model, features, tokens, temperature);
    return trace.log_probs;
}

ForwardTrace forward_teacher(const PolicyModel& model, const Vec& features,
                             const std::vector<int>& tokens, double temperature) {
    if (temperature <= 0.0) throw std::invalid_argument("temperature must be positive");
    const int H = model.hidden;
    ForwardTrace trace;
    trace.features = features;
    trace.targets = tokens;
    trace.temperature = temperature;
    trace.h_init = initial_hidden(model, features);
    trace.inputs.reserve(tokens.size());
    int input = corpus::PolicyTokenizer::kBos;
    Vec h = trace.h_init;
    Vec logp;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        trace.inputs.push_back(input);
        Vec z(static_cast<std::size_t>(H)), c(static_cast<std::size_t>(H)), h_next(static_cast<std::size_t>(H));
        cell_step(model, h, input, z, c, h_next);
        h = h_next;
        Vec logits = head_logits(model, h);
        log_softmax(logits, temperature, logp);
        int target = tokens[t];
        if (target < 0 || target >= model.vocab_size())
            throw std::invalid_argument("token id out of vocab range");
        trace.z.push_back(std::move(z));
        trace.cand.push_back(std::move(c));
        trace.h.push_back(h);
        trace.logits.push_back(std::move(logits));
        trace.log_probs.push_back(logp[static_cast<std::size_t>(target)]);
        input = target;
    }
    return trace;
}

void backward(const PolicyModel& model, const ForwardTrace& trace,
              const std::vector<double>& dlogp, PolicyGrads& grads) {
    const std::size_t T = trace.targets.size();
    if (dlogp.size() != T) throw std::invalid_argument("dlogp length mismatch");
    if (T == 0) return;
    const int V = model.vocab_size(), H = model.hidden;
    const double tau = trace.temperature;

    Vec dh(static_cast<std::size_t>(H), 0.0);
    Vec probs(static_cast<std::size_t>(V));
    for (std::size_t t = T; t-- > 0;) {
        // Head: dlogits = dlogp_t * (onehot(target) - softmax(logits/tau)) / tau
        const Vec& logits = trace.logits[t];
        double mx = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (int v = 0; v < V; ++v) {
            probs[static_cast<std::size_t>(v)] = std::exp(logits[static_cast<std::size_t>(v)] / tau - mx / tau);
            sum += probs[static_cast<std::size_t>(v)];
        }
        for (auto& p : probs) p /= sum;

        const double coeff = dlogp[t] / tau;
        if (coeff != 0.0) {
            const Vec& h_t = trace.h[t];
            for (int v = 0; v < V; ++v) {
                double dl = -coeff * probs[static_cast<std::size_t>(v)];
                if (v == trace.targets[t]) dl += coeff;
                if (dl == 0.0) continue;
                grads.b_out[static_cast<std::size_t>(v)] += dl;
                double* gw = grads.w_out.data() + static_cast<std::size_t>(v) * H;
                const double* wr = model.w_out.data() + static_cast<std::size_t>(v) * H;
                for (int r = 0; r < H; ++r) {
                    gw[r] += dl * h_t[static_cast<std::size_t>(r)];
                    dh[static_cast<std::size_t>(r)] += dl * wr[r];
                }
            }
        }

        // Cell: h_t = (1-z)*h_prev + z*c
        const Vec& h_prev = t == 0 ? trace.h_init : trace.h[t - 1];
        const Vec& z = trace.z[t];
        const Vec& c = trace.cand[t];
        Vec da(static_cast<std::size_t>(H)), dg(static_cast<std::size_t>(H));
        Vec dh_prev(static_cast<std::size_t>(H));
        for (int r = 0; r < H; ++r) {
            double dhr = dh[static_cast<std::size_t>(r)];
            double zr = z[static_cast<std::size_t>(r)], cr = c[static_cast<std::size_t>(r)];
            double dz = dhr * (cr - h_prev[static_cast<std::size_t>(r)]);
            double dc = dhr * zr;
            da[static_cast<std::size_t>(r)] = dz * zr * (1.0 - zr);
            dg[static_cast<std::size_t>(r)] = dc * (1.0 - cr * cr);
            dh_prev[static_cast<std::size_t>(r)] = dhr * (1.0 - zr);
        }
        const int input = trace.inputs[t];
        const double* x = model.emb.data() + static_cast<std::size_t>(input) * H;
        double* gx = grads.emb.data() + static_cast<std::size_t>(input) * H;
        outer_acc(grads.w_zx.data(), H, H, da.data(), x);
        outer_acc(grads.w_zh.data(), H, H, da.data(), h_prev.data());
        add_acc(grads.b_z.data(), da.data(), H);
        outer_acc(grads.w_cx.data(), H, H, dg.data(), x);
        outer_acc(grads.w_ch.data(), H, H, dg.data(), h_prev.data());
        add_acc(grads.b_c.data(), dg.data(), H);
        matvec_t_acc(model.w_zx.data(), H, H, da.data(), gx);
        matvec_t_acc(model.w_cx.data(), H, H, dg.data(), gx);
        matvec_t_acc(model.w_zh.data(), H, H, da.data(), dh_prev.data());
        matvec_t_acc(model.w_ch.data(), H, H, dg.data(), dh_prev.data());
        dh = std::move(dh_prev);
    }
    // dh now holds dL/dh_init.
    outer_acc(grads.w_feat.data(), H, model.feat_dim, dh.data(), trace.features.data());
    add_acc(grads.b_feat.data(), dh.data(), H);
}

double surrogate_loss_and_grad(const PolicyModel& model, const RolloutGroup& group,
                               double clip_eps, double temperature,
                               double kl_coeff, PolicyGrads& grads) {
    if (group.token_advantages.size() != group.rollouts.size())
        throw std::invalid_argument("token_advantages must be populated per rollout");
    std::size_t total_len = 0;
    for (const auto& r : group.rollouts) total_len += r.tokens.size();
    if (total_len == 0) return 0.0;
    const double inv_total = 1.0 / static_cast<double>(total_len);

    double loss = 0.0;
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
        const auto& rollout = group.rollouts[i];
        const auto& adv = group.token_advantages[i];
        if (adv.size() != rollout.tokens.size())
            throw std::invalid_argument("token_advantages ragged-length mismatch at rollout " +
                                        std::to_string(i));
        if (rollout.tokens.empty()) continue;

        ForwardTrace trace = forward_teacher(model, group.features, rollout.tokens, temperature);
        std::vector<double> dlogp(rollout.tokens.size(), 0.0);
        for (std::size_t t = 0; t < rollout.tokens.size(); ++t) {
            const double old_lp = rollout.log_probs[t];
            const double new_lp = trace.log_probs[t];
            const double rho = std::exp(new_lp - old_lp);
            const double a = adv[t];
            const double unclipped = rho * a;
            const double clipped = std::clamp(rho, 1.0 - clip_eps, 1.0 + clip_eps) * a;
            const double term = std::min(unclipped, clipped);
            if (!std::isfinite(term))
                throw std::runtime_error("non-finite surrogate term at rollout " +
                                         std::to_string(i) + ", token " + std::to_string(t));
            loss -= term * inv_total;
            if (unclipped <= clipped) dlogp[t] = -unclipped * inv_total;
            if (kl_coeff != 0.0) {
                const double diff = old_lp - new_lp;
                const double k3 = std::exp(diff) - 1.0 + new_lp - old_lp;
                loss += kl_coeff * k3 * inv_total;
                dlogp[t] += kl_coeff * (1.0 - std::exp(diff)) * inv_total;
            }
        }
        backward(model, trace, dlogp, grads);
    }
    if (!std::isfinite(loss)) throw std::runtime_error("non-finite surrogate loss");
    return loss;
}

void sft_pretrain(PolicyModel& model, const std::vector<corpus::CaseRecord>& train,
                  const std::vector<corpus::CaseRecord>* holdout,
                  int epochs, double lr, std::uint64_t seed, SftStats* stats) {
    if (train.empty()) throw std::invalid_argument("sft training set is empty");
    std::vector<std::vector<int>> targets(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        targets[i] = model.tokenizer.tokenize(train[i].text);
        targets[i].push_back(corpus::PolicyTokenizer::kEos);
    }
    std::vector<std::vector<int>> holdout_targets;
    if (holdout) {
        holdout_targets.resize(holdout->size());
        for (std::size_t i = 0; i < holdout->size(); ++i) {
            holdout_targets[i] = model.tokenizer.tokenize((*holdout)[i].text);
            holdout_targets[i].push_back(corpus::PolicyTokenizer::kEos);
        }
    }

    Rng master(seed);
    Adam opt(lr);
    auto params = model.params();
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng erng = master.derive("sft-epoch").derive(static_cast<std::uint64_t>(epoch));
        for (std::size_t k = order.size(); k > 1; --k)
            std::swap(order[k - 1], order[erng.uniform_index(k)]);

        double loss_sum = 0.0;
        for (std::size_t oi = 0; oi < order.size(); ++oi) {
            const std::size_t i = order[oi];
            const auto& toks = targets[i];
            ForwardTrace trace = forward_teacher(model, train[i].features, toks);
            double nll = 0.0;
            for (double lp : trace.log_probs) nll -= lp;
            const double inv = 1.0 / static_cast<double>(toks.size());
            loss_sum += nll * inv;
            if (!std::isfinite(nll))
                throw std::runtime_error("sft diverged (non-finite loss) at epoch " +
                                         std::to_string(epoch) + ", case " + train[i].case_id);
            PolicyGrads grads = PolicyGrads::zeros_like(model);
            std::vector<double> dlogp(toks.size(), -inv);
            backward(model, trace, dlogp, grads);
            opt.step(params, grads.params());
        }
        if (stats) {
            stats->train_loss.push_back(loss_sum / static_cast<double>(train.size()));
            if (holdout) {
                double nll_sum = 0.0;
                std::size_t n_tokens = 0;
                for (std::size_t i = 0; i < holdout->size(); ++i) {
                    auto lps = log_prob(model, (*holdout)[i].features, holdout_targets[i]);
                    for (double lp : lps) nll_sum -= lp;
                    n_tokens += lps.size();
                }
                stats->holdout_ppl.push_back(std::exp(nll_sum / static_cast<double>(n_tokens)));
            }
        }
    }
}

void save_policy(const std::string& path, const PolicyModel& model,
                 const nlohmann::ordered_json& run_config) {
    nlohmann::ordered_json j;
    j["schema_version"] = kPolicySchemaVersion;
    j["kind"] = "policy";
    j["config"] = run_config;
    j["vocab"] = model.tokenizer.vocab();
    j["vocab_hash"] = hash_hex(model.tokenizer.vocab_hash());
    j["hidden"] = model.hidden;
    j["feat_dim"] = model.feat_dim;
    nlohmann::ordered_json p;
    auto views = const_cast<PolicyModel&>(model).params();
    for (const auto& view : views) p[view.name] = *view.v;
    j["params"] = p;
    write_text_file(path, j.dump());
}

PolicyModel load_policy(const std::string& path) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(path));
    const int version = j.at("schema_version").get<int>();
    if (version != kPolicySchemaVersion)
        throw std::runtime_error("policy schema version mismatch: expected " +
                                 std::to_string(kPolicySchemaVersion) + ", found " +
                                 std::to_string(version));
    PolicyModel m;
    m.tokenizer = corpus::PolicyTokenizer::from_vocab(
        j.at("vocab").get<std::vector<std::string>>());
    const std::string recorded = j.at("vocab_hash").get<std::string>();
    if (recorded != hash_hex(m.tokenizer.vocab_hash()))
        throw std::runtime_error("policy vocab hash mismatch: recorded " + recorded +
                                 ", recomputed " + hash_hex(m.tokenizer.vocab_hash()));
    m.hidden = j.at("hidden").get<int>();
    m.feat_dim = j.at("feat_dim").get<int>();
    auto views = m.params();
    for (auto& view : views) *view.v = j.at("params").at(view.name).get<Vec>();
    return m;
}

} // namespace reportrl::policy
