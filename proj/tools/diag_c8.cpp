// scratch: does the diversity score predict reward spread? (not a deliverable)
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "reportrl/corpus.hpp"
#include "reportrl/harness.hpp"
#include "reportrl/labeler.hpp"
#include "reportrl/policy.hpp"
#include "reportrl/rewards.hpp"
#include "reportrl/sampling.hpp"
#include "reportrl/util.hpp"

using namespace reportrl;

int main(int argc, char** argv) {
    const std::string base = "/tmp/reportrl_accept/base";
    const double temp = argc > 1 ? std::stod(argv[1]) : 1.0;
    const int n_roll = argc > 2 ? std::stoi(argv[2]) : 8;
    auto loaded = corpus::load_corpus(base + "/corpus_train.jsonl");
    auto clf = labeler::load_classifier(base + "/classifier.json");
    auto sft = policy::load_policy(base + "/policy_sft.json");
    auto table = sampling::load_selection(base + "/selection.jsonl");
    const auto& cat = loaded.catalog;
    const auto& train = loaded.cases;

    std::map<std::string, double> score_by_id;
    std::map<std::string, int> rank_by_id;
    for (const auto& row : table.rows) {
        score_by_id[row.case_id] = row.score;
        rank_by_id[row.case_id] = row.rank;
    }

    const rewards::RewardConfig rcfg = rewards::RewardConfig::constant(0.0);
    std::vector<double> D(train.size()), RSTD(train.size()), RMEAN(train.size());
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> threads;
    for (int w = 0; w < 8; ++w)
        threads.emplace_back([&] {
            for (std::size_t c; (c = next.fetch_add(1)) < train.size();) {
                const auto& rec = train[c];
                const std::vector<int> gt = labeler::keyword_oracle(cat, rec.text).values;
                const std::vector<int> ref = sft.tokenizer.tokenize(rec.text);
                Rng crng = Rng(4242).derive("diag").derive(c);
                std::vector<double> totals(static_cast<std::size_t>(n_roll));
                for (std::size_t i = 0; i < totals.size(); ++i) {
                    Rng rng = crng.derive(i);
                    auto r = policy::sample(sft, rec.features,
                                            policy::SampleStrategy::temperature(temp), 56, rng);
                    std::vector<int> body;
                    for (int t : r.tokens)
                        if (!sft.tokenizer.is_special(t)) body.push_back(t);
                    totals[i] =
                        rewards::composite_reward(clf, r.text, gt, body, ref, 0, rcfg).total;
                }
                D[c] = score_by_id.at(rec.case_id);
                RSTD[c] = pop_std(totals);
                RMEAN[c] = mean(totals);
            }
        });
    for (auto& t : threads) t.join();

    auto corr = [](const std::vector<double>& a, const std::vector<double>& b) {
        double ma = mean(a), mb = mean(b), num = 0, da = 0, db = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            num += (a[i] - ma) * (b[i] - mb);
            da += (a[i] - ma) * (a[i] - ma);
            db += (b[i] - mb) * (b[i] - mb);
        }
        return num / std::sqrt(da * db);
    };
    std::printf("temp %.2f n_roll %d\n", temp, n_roll);
    std::printf("corr(D, reward_std)  = %+.4f\n", corr(D, RSTD));
    std::printf("corr(D, reward_mean) = %+.4f\n", corr(D, RMEAN));

    // quartiles of reward_std / zero-variance by diversity rank
    std::vector<std::size_t> idx(train.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return rank_by_id.at(train[a].case_id) < rank_by_id.at(train[b].case_id);
    });
    const std::size_t q = train.size() / 4;
    for (int k = 0; k < 4; ++k) {
        double s = 0, zv = 0, dm = 0;
        for (std::size_t i = static_cast<std::size_t>(k) * q; i < (k + 1) * q; ++i) {
            s += RSTD[idx[i]];
            zv += RSTD[idx[i]] == 0.0 ? 1.0 : 0.0;
            dm += D[idx[i]];
        }
        std::printf("rank quartile %d (best=0): mean D %.4f, mean reward_std %.4f, "
                    "zero-var %.4f\n",
                    k, dm / q, s / q, zv / q);
    }
    return 0;
}
