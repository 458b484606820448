// scratch: rl stability sweep over (lr, steps) for the learning gate (not a deliverable)
#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reportrl/corpus.hpp"
#include "reportrl/harness.hpp"
#include "reportrl/labeler.hpp"
#include "reportrl/optim.hpp"
#include "reportrl/policy.hpp"
#include "reportrl/rewards.hpp"
#include "reportrl/sampling.hpp"
#include "reportrl/util.hpp"

using namespace reportrl;

namespace {

struct Fx {
    corpus::PathologyCatalog cat;
    std::vector<corpus::CaseRecord> train, val;
    labeler::DiagnosticClassifier clf;
    policy::PolicyModel sft;
    sampling::SelectionTable table;
};

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

} // namespace

int main(int argc, char** argv) {
    const std::string base = "/tmp/reportrl_accept/base";
    const double lr = argc > 1 ? std::stod(argv[1]) : 0.003;
    const int steps = argc > 2 ? std::stoi(argv[2]) : 300;
    Fx fx;
    {
        auto t = corpus::load_corpus(base + "/corpus_train.jsonl");
        fx.cat = t.catalog;
        fx.train = std::move(t.cases);
        fx.val = corpus::load_corpus(base + "/corpus_val.jsonl").cases;
        fx.clf = labeler::load_classifier(base + "/classifier.json");
        fx.sft = policy::load_policy(base + "/policy_sft.json");
        fx.table = sampling::load_selection(base + "/selection.jsonl");
    }
    std::map<std::string, const corpus::CaseRecord*> by_id;
    for (const auto& rec : fx.train) by_id[rec.case_id] = &rec;

    auto run = [&](optim::Mode mode, std::uint64_t seed) {
        policy::PolicyModel model = fx.sft;
        std::uint64_t draw_seed = Rng(seed).derive("rl-subset").next_u64();
        auto ids = sampling::draw_subset(fx.table, 0.2, draw_seed);
        std::vector<corpus::CaseRecord> pool;
        for (const auto& id : ids) pool.push_back(*by_id.at(id));
        harness::RlOptions o;
        o.mode = mode;
        o.steps = steps;
        o.lr = lr;
        o.n_rollouts = 8;
        o.max_len = 56;
        o.workers = 8;
        o.reward_cfg = rewards::RewardConfig::two_phase(std::lround(0.6 * steps), 0.25);
        auto res = harness::rl_train(model, fx.clf, fx.cat, pool, o, seed);
        auto rep = harness::evaluate(model.tokenizer, fx.cat, fx.val,
                                     harness::greedy_generator(model, 56), 8);
        std::fprintf(stderr, "  [%s seed %llu] reward %.4f -> %.4f, oracle val f1 %.4f\n",
                     optim::mode_to_string(mode).c_str(), (unsigned long long)seed,
                     res.mean_reward_first_quarter, res.mean_reward_last_quarter,
                     rep.sample_f1);
        return rep;
    };

    std::printf("lr %.4f steps %d\n", lr, steps);
    for (auto mode : {optim::Mode::Grpo, optim::Mode::DitpoRule, optim::Mode::DitpoGrad}) {
        std::vector<double> f1s, bleus;
        std::printf("%-10s :", optim::mode_to_string(mode).c_str());
        for (std::uint64_t seed : {101, 102, 103, 104, 105}) {
            auto rep = run(mode, seed);
            f1s.push_back(rep.sample_f1);
            bleus.push_back(rep.bleu2);
            std::printf(" %.4f", rep.sample_f1);
            std::fflush(stdout);
        }
        std::printf("  | median f1 %.4f min %.4f median bleu2 %.4f\n", median(f1s),
                    *std::min_element(f1s.begin(), f1s.end()), median(bleus));
    }
    return 0;
}
