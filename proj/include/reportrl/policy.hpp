// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reportrl/corpus.hpp"
#include "reportrl/math.hpp"
#include "reportrl/rewards.hpp"
#include "reportrl/rng.hpp"

namespace reportrl::policy {

// Conditional autoregressive generator: a feature projection seeds the
// hidden state of a single gated recurrent cell (update gate + candidate),
// token embeddings feed the cell, an affine head emits logits.
//
//   h_{-1} = W_f f + b_f
//   z_t  = sigmoid(W_zx x_t + W_zh h_{t-1} + b_z)
//   c_t  = tanh   (W_cx x_t + W_ch h_{t-1} + b_c)
//   h_t  = (1 - z_t) * h_{t-1} + z_t * c_t
//   logits_t = W_out h_t + b_out
//
// All gradients are computed analytically (BPTT); finite differences check
// them in the tests.
struct PolicyModel {
    corpus::PolicyTokenizer tokenizer;
    int hidden = 32;
    int feat_dim = 0;

    Vec emb;            // V x h
    Vec w_feat, b_feat; // h x F, h
    Vec w_zx, w_zh, b_z; // h x h, h x h, h
    Vec w_cx, w_ch, b_c;
    Vec w_out, b_out;   // V x h, V

    void init(int hidden_dim, int feature_dim, Rng& rng);
    std::vector<ParamView> params();
    int vocab_size() const { return tokenizer.vocab_size(); }
};

// Gradient accumulator with the same shapes and parameter order.
struct PolicyGrads {
    Vec emb, w_feat, b_feat, w_zx, w_zh, b_z, w_cx, w_ch, b_c, w_out, b_out;

    static PolicyGrads zeros_like(const PolicyModel& m);
    std::vector<ParamView> params();
    void accumulate(const PolicyGrads& other);
    void scale(double s);
};

struct SampleStrategy {
    enum class Kind { Greedy, Temperature, Nucleus };
    Kind kind = Kind::Greedy;
    double value = 1.0; // temperature t, or nucleus mass p

    static SampleStrategy greedy() { return {Kind::Greedy, 1.0}; }
    static SampleStrategy temperature(double t) { return {Kind::Temperature, t}; }
    static SampleStrategy nucleus(double p) { return {Kind::Nucleus, p}; }
};

struct Rollout {
    std::vector<int> tokens;        // body tokens, plus EOS when terminated
    std::vector<double> log_probs;  // recorded under the sampling-time distribution
    std::string text;               // detokenize(tokens)
    std::vector<corpus::TokenSpan> spans; // per token, over text
    bool terminated = false;
};

struct RolloutGroup {
    std::string case_id;
    Vec features;
    std::vector<Rollout> rollouts;
    std::vector<rewards::RewardBreakdown> rewards;
    std::vector<double> advantages;
    std::vector<std::vector<double>> token_weights;
    std::vector<std::vector<double>> token_advantages;
};

// Terminates at EOS or max_len. Nucleus sampling renormalizes over the
// smallest probability prefix reaching mass p (ties in the descending sort
// broken by token id); temperature(t) is the p=1 special case on the same
// code path, so nucleus(1.0) and temperature(1.0) coincide draw-for-draw.
Rollout sample(const PolicyModel& model, const Vec& features,
               const SampleStrategy& strategy, int max_len, Rng& rng);

// Teacher-forced per-token log-probabilities at the given temperature.
std::vector<double> log_prob(const PolicyModel& model, const Vec& features,
                             const std::vector<int>& tokens, double temperature = 1.0);

// Cached activations of one teacher-forced pass, consumed by backward().
struct ForwardTrace {
    Vec features;
    std::vector<int> inputs;   // input token per step (BOS, then tokens[:-1])
    std::vector<int> targets;  // tokens
    Vec h_init;
    std::vector<Vec> z, cand, h, logits;
    std::vector<double> log_probs;
    double temperature = 1.0;
};

ForwardTrace forward_teacher(const PolicyModel& model, const Vec& features,
                             const std::vector<int>& tokens, double temperature = 1.0);

// Accumulates parameter gradients for a loss whose per-step dependence on
// the trace is dL/dlogp_t = dlogp[t].
void backward(const PolicyModel& model, const ForwardTrace& trace,
              const std::vector<double>& dlogp, PolicyGrads& grads);

// PPO-style clipped surrogate over token-level advantages:
//   L = -(1/sum_len) * sum_i sum_t min(rho A, clip(rho, 1-eps, 1+eps) A)
// with rho = exp(logp_new - logp_old). Optional KL penalty (k3 estimator)
// added per token when kl_coeff > 0. Throws on non-finite intermediates,
// naming the (rollout, token) position. Requires populated token_advantages.
double surrogate_loss_and_grad(const PolicyModel& model, const RolloutGroup& group,
                               double clip_eps, double temperature,
                               double kl_coeff, PolicyGrads& grads);

struct SftStats {
    std::vector<double> train_loss;  // per epoch
    std::vector<double> holdout_ppl; // per epoch, if holdout given
};

// Teacher-forced cross-entropy on reference reports, Adam, in place.
void sft_pretrain(PolicyModel& model, const std::vector<corpus::CaseRecord>& train,
                  const std::vector<corpus::CaseRecord>* holdout,
                  int epochs, double lr, std::uint64_t seed, SftStats* stats = nullptr);

inline constexpr int kPolicySchemaVersion = 1;

void save_policy(const std::string& path, const PolicyModel& model,
                 const nlohmann::ordered_json& run_config);
PolicyModel load_policy(const std::string& path);

} // namespace reportrl::policy
