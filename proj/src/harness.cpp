// SPDX-License-Identifier: Apache-2.0
#include "reportrl/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "reportrl/parallel.hpp"
#include "reportrl/util.hpp"

namespace reportrl::harness {

namespace {

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const std::string& scope) {
    if (!j.is_object()) throw std::invalid_argument("config section '" + scope + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) { ok = true; break; }
        if (!ok) throw std::invalid_argument("unknown config key '" + scope + "." + key + "'");
    }
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

} // namespace

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["workers"] = workers;
    auto& d = j["data"];
    d["n_pathologies"] = data.n_pathologies;
    d["prevalence"] = data.prevalence;
    d["neg_mention_prob"] = data.neg_mention_prob;
    d["max_absence_sentences"] = data.max_absence_sentences;
    d["noise_sigma"] = data.noise_sigma;
    d["noise_dims"] = data.noise_dims;
    d["n_train"] = data.n_train;
    d["n_val"] = data.n_val;
    d["n_test"] = data.n_test;
    d["catalog_path"] = data.catalog_path;
    auto& c = j["classifier"];
    c["emb_dim"] = classifier.emb_dim;
    c["hidden_dim"] = classifier.hidden_dim;
    c["epochs"] = classifier.epochs;
    c["lr"] = classifier.lr;
    auto& s = j["sft"];
    s["epochs"] = sft.epochs;
    s["lr"] = sft.lr;
    auto& g = j["generator"];
    g["hidden"] = generator.hidden;
    g["max_len"] = generator.max_len;
    auto& rw = j["reward"];
    rw["schedule"] = reward.schedule;
    rw["gamma"] = reward.gamma;
    rw["phase_switch_frac"] = reward.phase_switch_frac;
    auto& r = j["rl"];
    r["mode"] = rl.mode;
    r["steps"] = rl.steps;
    r["lr"] = rl.lr;
    r["clip_eps"] = rl.clip_eps;
    r["n_rollouts"] = rl.n_rollouts;
    r["temperature"] = rl.temperature;
    r["alpha"] = rl.alpha;
    r["beta"] = rl.beta;
    r["std_epsilon"] = rl.std_epsilon;
    r["kl_coeff"] = rl.kl_coeff;
    r["saliency_agg"] = rl.saliency_agg;
    r["use_selection"] = rl.use_selection;
    r["dump_weights"] = rl.dump_weights;
    auto& sel = j["selection"];
    sel["k_samples"] = selection.k_samples;
    sel["nucleus_p"] = selection.nucleus_p;
    sel["fraction"] = selection.fraction;
    sel["with_replacement"] = selection.with_replacement;
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig cfg;
    check_keys(j, {"seed", "out_dir", "workers", "data", "classifier", "sft",
                   "generator", "reward", "rl", "selection"}, "config");
    get_if(j, "seed", cfg.seed);
    get_if(j, "out_dir", cfg.out_dir);
    get_if(j, "workers", cfg.workers);
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, {"n_pathologies", "prevalence", "neg_mention_prob",
                       "max_absence_sentences", "noise_sigma", "noise_dims",
                       "n_train", "n_val", "n_test", "catalog_path"}, "data");
        get_if(d, "n_pathologies", cfg.data.n_pathologies);
        get_if(d, "prevalence", cfg.data.prevalence);
        get_if(d, "neg_mention_prob", cfg.data.neg_mention_prob);
        get_if(d, "max_absence_sentences", cfg.data.max_absence_sentences);
        get_if(d, "noise_sigma", cfg.data.noise_sigma);
        get_if(d, "noise_dims", cfg.data.noise_dims);
        get_if(d, "n_train", cfg.data.n_train);
        get_if(d, "n_val", cfg.data.n_val);
        get_if(d, "n_test", cfg.data.n_test);
        get_if(d, "catalog_path", cfg.data.catalog_path);
    }
    if (j.contains("classifier")) {
        const auto& c = j.at("classifier");
        check_keys(c, {"emb_dim", "hidden_dim", "epochs", "lr"}, "classifier");
        get_if(c, "emb_dim", cfg.classifier.emb_dim);
        get_if(c, "hidden_dim", cfg.classifier.hidden_dim);
        get_if(c, "epochs", cfg.classifier.epochs);
        get_if(c, "lr", cfg.classifier.lr);
    }
    if (j.contains("sft")) {
        const auto& s = j.at("sft");
        check_keys(s, {"epochs", "lr"}, "sft");
        get_if(s, "epochs", cfg.sft.epochs);
        get_if(s, "lr", cfg.sft.lr);
    }
    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        check_keys(g, {"hidden", "max_len"}, "generator");
        get_if(g, "hidden", cfg.generator.hidden);
        get_if(g, "max_len", cfg.generator.max_len);
    }
    if (j.contains("reward")) {
        const auto& rw = j.at("reward");
        check_keys(rw, {"schedule", "gamma", "phase_switch_frac"}, "reward");
        get_if(rw, "schedule", cfg.reward.schedule);
        get_if(rw, "gamma", cfg.reward.gamma);
        get_if(rw, "phase_switch_frac", cfg.reward.phase_switch_frac);
    }
    if (j.contains("rl")) {
        const auto& r = j.at("rl");
        check_keys(r, {"mode", "steps", "lr", "clip_eps", "n_rollouts", "temperature",
                       "alpha", "beta", "std_epsilon", "kl_coeff", "saliency_agg",
                       "use_selection", "dump_weights"}, "rl");
        get_if(r, "mode", cfg.rl.mode);
        get_if(r, "steps", cfg.rl.steps);
        get_if(r, "lr", cfg.rl.lr);
        get_if(r, "clip_eps", cfg.rl.clip_eps);
        get_if(r, "n_rollouts", cfg.rl.n_rollouts);
        get_if(r, "temperature", cfg.rl.temperature);
        get_if(r, "alpha", cfg.rl.alpha);
        get_if(r, "beta", cfg.rl.beta);
        get_if(r, "std_epsilon", cfg.rl.std_epsilon);
        get_if(r, "kl_coeff", cfg.rl.kl_coeff);
        get_if(r, "saliency_agg", cfg.rl.saliency_agg);
        get_if(r, "use_selection", cfg.rl.use_selection);
        get_if(r, "dump_weights", cfg.rl.dump_weights);
    }
    if (j.contains("selection")) {
        const auto& sel = j.at("selection");
        check_keys(sel, {"k_samples", "nucleus_p", "fraction", "with_replacement"}, "selection");
        get_if(sel, "k_samples", cfg.selection.k_samples);
        get_if(sel, "nucleus_p", cfg.selection.nucleus_p);
        get_if(sel, "fraction", cfg.selection.fraction);
        get_if(sel, "with_replacement", cfg.selection.with_replacement);
    }
    // Validate enum-ish fields early so a bad config fails before any stage.
    optim::mode_from_string(cfg.rl.mode);
    cfg.reward_config().validate();
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    return from_json(nlohmann::json::parse(read_text_file(path)));
}

nlohmann::ordered_json RunConfig::provenance_json() const {
    nlohmann::ordered_json j = to_json();
    j.erase("workers");
    j.erase("out_dir");
    return j;
}

std::uint64_t RunConfig::config_hash() const { return fnv1a64(provenance_json().dump()); }

rewards::RewardConfig RunConfig::reward_config() const {
    if (reward.schedule == "constant") return rewards::RewardConfig::constant(reward.gamma);
    if (reward.schedule == "two_phase") {
        long switch_step = std::lround(reward.phase_switch_frac * static_cast<double>(rl.steps));
        return rewards::RewardConfig::two_phase(switch_step, reward.gamma);
    }
    throw std::invalid_argument("unknown reward schedule '" + reward.schedule +
                                "' (expected constant or two_phase)");
}

optim::AdvantageConfig RunConfig::advantage_config() const {
    optim::AdvantageConfig cfg;
    cfg.mode = optim::mode_from_string(rl.mode);
    cfg.alpha = rl.alpha;
    cfg.beta = rl.beta;
    cfg.std_epsilon = rl.std_epsilon;
    cfg.saliency_agg = rl.saliency_agg;
    return cfg;
}

nlohmann::ordered_json apply_overrides(nlohmann::ordered_json config_json,
                                       const std::vector<std::string>& overrides) {
    for (const auto& ov : overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos || eq == 0)
            throw std::invalid_argument("override must look like key.path=value: " + ov);
        std::string path = ov.substr(0, eq);
        std::string value = ov.substr(eq + 1);

        nlohmann::ordered_json* node = &config_json;
        std::size_t start = 0;
        for (;;) {
            std::size_t dot = path.find('.', start);
            std::string part = path.substr(start, dot == std::string::npos ? std::string::npos
                                                                           : dot - start);
            if (part.empty()) throw std::invalid_argument("bad override path: " + path);
            // Overrides replace existing keys; they never invent new ones.
            if (!node->contains(part))
                throw std::invalid_argument("unknown config key in override: " + path);
            if (dot == std::string::npos) {
                nlohmann::ordered_json parsed = nlohmann::ordered_json::parse(value, nullptr, false);
                if (parsed.is_discarded() || (*node)[part].is_string())
                    (*node)[part] = value;
                else
                    (*node)[part] = parsed;
                break;
            }
            node = &((*node)[part]);
            if (!node->is_object())
                throw std::invalid_argument("override path does not name a config section: " + path);
            start = dot + 1;
        }
    }
    return config_json;
}

void ArtifactPaths::ensure_dir() const { std::filesystem::create_directories(dir); }

nlohmann::ordered_json EvalReport::to_json(const nlohmann::ordered_json& run_config) const {
    nlohmann::ordered_json j;
    j["kind"] = "eval_report";
    j["split"] = split;
    j["n_cases"] = n_cases;
    j["precision"] = precision;
    j["recall"] = recall;
    j["sample_f1"] = sample_f1;
    j["macro_f1"] = macro_f1;
    j["bleu2"] = bleu2;
    j["bleu4"] = bleu4;
    j["per_pathology"] = nlohmann::ordered_json::array();
    for (const auto& p : per_pathology) {
        nlohmann::ordered_json pj;
        pj["name"] = p.name;
        pj["precision"] = p.precision;
        pj["recall"] = p.recall;
        pj["f1"] = p.f1;
        pj["support"] = p.support;
        j["per_pathology"].push_back(std::move(pj));
    }
    j["config_hash"] = config_hash_hex;
    j["checkpoint_hash"] = checkpoint_hash_hex;
    j["config"] = run_config;
    return j;
}

EvalReport evaluate(const corpus::PolicyTokenizer& tokenizer,
                    const corpus::PathologyCatalog& catalog,
                    const std::vector<corpus::CaseRecord>& cases,
                    const ReportGenerator& generate, int workers) {
    if (cases.empty()) throw std::invalid_argument("evaluate needs at least 1 case");
    const int C = catalog.n_pathologies();

    struct CaseResult {
        std::vector<int> pred, gt;
        double bleu2 = 0, bleu4 = 0, f1 = 0;
    };
    std::vector<CaseResult> results(cases.size());
    parallel_for(cases.size(), workers, [&](std::size_t i) {
        const auto& rec = cases[i];
        std::vector<int> tokens = generate(rec);
        std::vector<int> body;
        body.reserve(tokens.size());
        for (int t : tokens)
            if (!tokenizer.is_special(t)) body.push_back(t);
        const std::string text = tokenizer.detokenize(tokens);
        CaseResult& r = results[i];
        r.pred = labeler::keyword_oracle(catalog, text).values;
        r.gt = labeler::keyword_oracle(catalog, rec.text).values;
        std::vector<int> ref = tokenizer.tokenize(rec.text);
        r.bleu2 = rewards::bleu(body, ref, 2);
        r.bleu4 = rewards::bleu(body, ref, 4);
        r.f1 = rewards::sample_f1(r.pred, r.gt);
    });

    EvalReport report;
    report.n_cases = static_cast<int>(cases.size());
    std::vector<long> tp(static_cast<std::size_t>(C), 0), fp(static_cast<std::size_t>(C), 0),
        fn(static_cast<std::size_t>(C), 0), support(static_cast<std::size_t>(C), 0);
    double f1_sum = 0, b2_sum = 0, b4_sum = 0;
    for (const auto& r : results) {
        f1_sum += r.f1;
        b2_sum += r.bleu2;
        b4_sum += r.bleu4;
        for (int c = 0; c < C; ++c) {
            const std::size_t ci = static_cast<std::size_t>(c);
            if (r.gt[ci] == 1) ++support[ci];
            if (r.pred[ci] == 1 && r.gt[ci] == 1) ++tp[ci];
            else if (r.pred[ci] == 1 && r.gt[ci] == 0) ++fp[ci];
            else if (r.pred[ci] == 0 && r.gt[ci] == 1) ++fn[ci];
        }
    }
    const double n = static_cast<double>(cases.size());
    report.sample_f1 = f1_sum / n;
    report.bleu2 = b2_sum / n;
    report.bleu4 = b4_sum / n;

    // Degenerate denominators pin to 1.0: no decisions of that kind existed
    // to get wrong (same convention as the sample-wise F1).
    auto safe_ratio = [](long num, long den) {
        return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    long tp_all = 0, fp_all = 0, fn_all = 0;
    double macro_sum = 0;
    for (int c = 0; c < C; ++c) {
        const std::size_t ci = static_cast<std::size_t>(c);
        tp_all += tp[ci];
        fp_all += fp[ci];
        fn_all += fn[ci];
        PathologyMetrics pm;
        pm.name = catalog.pathologies[ci].name;
        pm.precision = safe_ratio(tp[ci], tp[ci] + fp[ci]);
        pm.recall = safe_ratio(tp[ci], tp[ci] + fn[ci]);
        pm.f1 = (2 * tp[ci] + fp[ci] + fn[ci]) == 0
                    ? 1.0
                    : 2.0 * tp[ci] / static_cast<double>(2 * tp[ci] + fp[ci] + fn[ci]);
        pm.support = static_cast<int>(support[ci]);
        macro_sum += pm.f1;
        report.per_pathology.push_back(std::move(pm));
    }
    report.precision = safe_ratio(tp_all, tp_all + fp_all);
    report.recall = safe_ratio(tp_all, tp_all + fn_all);
    report.macro_f1 = macro_sum / static_cast<double>(C);
    return report;
}

ReportGenerator greedy_generator(const policy::PolicyModel& model, int max_len) {
    return [model, max_len](const corpus::CaseRecord& rec) {
        Rng rng(0); // greedy decoding draws nothing
        policy::Rollout r = policy::sample(model, rec.features,
                                           policy::SampleStrategy::greedy(), max_len, rng);
        return r.tokens;
    };
}

// ---- stages ----

namespace {

corpus::PathologyCatalog catalog_for(const RunConfig& cfg) {
    if (!cfg.data.catalog_path.empty())
        return corpus::PathologyCatalog::from_json(
            nlohmann::json::parse(read_text_file(cfg.data.catalog_path)));
    return corpus::default_catalog();
}

corpus::LoadedCorpus load_split(const ArtifactPaths& paths, const std::string& split) {
    corpus::LoadedCorpus loaded = corpus::load_corpus(paths.corpus(split));
    if (!loaded.has_header)
        throw std::runtime_error("corpus file lacks header: " + paths.corpus(split));
    return loaded;
}

// Vocab compatibility gate between a checkpoint and the corpus catalog.
void require_vocab_match(const corpus::PolicyTokenizer& from_checkpoint,
                         const corpus::PathologyCatalog& catalog) {
    auto rebuilt = corpus::PolicyTokenizer::from_catalog(catalog);
    if (rebuilt.vocab_hash() != from_checkpoint.vocab_hash())
        throw std::runtime_error(
            "vocab hash mismatch: checkpoint " + hash_hex(from_checkpoint.vocab_hash()) +
            " vs corpus catalog " + hash_hex(rebuilt.vocab_hash()));
}

} // namespace

void stage_gen_corpus(const RunConfig& cfg, const ArtifactPaths& paths) {
    paths.ensure_dir();
    corpus::PathologyCatalog catalog = catalog_for(cfg);
    if (catalog.n_pathologies() != cfg.data.n_pathologies)
        throw std::invalid_argument("config n_pathologies (" +
                                    std::to_string(cfg.data.n_pathologies) +
                                    ") does not match catalog (" +
                                    std::to_string(catalog.n_pathologies()) + ")");
    corpus::GeneratorConfig gc;
    gc.prevalence.assign(static_cast<std::size_t>(catalog.n_pathologies()), cfg.data.prevalence);
    gc.neg_mention_prob = cfg.data.neg_mention_prob;
    gc.max_absence_sentences = cfg.data.max_absence_sentences;
    gc.noise.sigma = cfg.data.noise_sigma;
    gc.noise.noise_dims = cfg.data.noise_dims;

    const nlohmann::ordered_json cj = cfg.provenance_json();
    const std::array<std::pair<const char*, int>, 3> splits = {{
        {"train", cfg.data.n_train}, {"val", cfg.data.n_val}, {"test", cfg.data.n_test}}};
    for (const auto& [name, count] : splits) {
        std::uint64_t split_seed = Rng::derive_seed(cfg.seed, std::string("corpus-") + name);
        auto cases = corpus::generate_corpus(catalog, gc, count, split_seed, cfg.workers);
        corpus::save_corpus(paths.corpus(name), cases, cj, catalog);
    }
    write_text_file(paths.catalog(), catalog.to_json().dump(2) + "\n");
}

void stage_train_labeler(const RunConfig& cfg, const ArtifactPaths& paths) {
    auto train = load_split(paths, "train");
    auto val = load_split(paths, "val");
    labeler::TrainStats stats;
    labeler::DiagnosticClassifier clf = labeler::train_classifier(
        train.catalog, train.cases, &val.cases, cfg.classifier.emb_dim,
        cfg.classifier.hidden_dim, cfg.classifier.epochs, cfg.classifier.lr,
        cfg.seed, &stats);
    labeler::save_classifier(paths.classifier(), clf, cfg.provenance_json());
    double agree = labeler::oracle_agreement(clf, train.catalog, val.cases);
    std::cout << "[labeler] holdout exact-label agreement: " << fmt_metric(agree) << "\n";
}

void stage_sft(const RunConfig& cfg, const ArtifactPaths& paths) {
    auto train = load_split(paths, "train");
    auto val = load_split(paths, "val");
    policy::PolicyModel model;
    model.tokenizer = corpus::PolicyTokenizer::from_catalog(train.catalog);
    Rng init_rng = Rng(cfg.seed).derive("policy-init");
    model.init(cfg.generator.hidden,
               static_cast<int>(train.cases.front().features.size()), init_rng);
    policy::SftStats stats;
    policy::sft_pretrain(model, train.cases, &val.cases, cfg.sft.epochs, cfg.sft.lr,
                         cfg.seed, &stats);
    policy::save_policy(paths.sft_policy(), model, cfg.provenance_json());
    if (!stats.holdout_ppl.empty())
        std::cout << "[sft] final holdout perplexity: " << fmt_metric(stats.holdout_ppl.back())
                  << "\n";
}

void stage_select(const RunConfig& cfg, const ArtifactPaths& paths) {
    auto train = load_split(paths, "train");
    labeler::DiagnosticClassifier clf = labeler::load_classifier(paths.classifier());
    policy::PolicyModel model = policy::load_policy(paths.sft_policy());
    require_vocab_match(model.tokenizer, train.catalog);

    Rng master(cfg.seed);
    std::vector<double> scores(train.cases.size());
    parallel_for(train.cases.size(), cfg.workers, [&](std::size_t i) {
        Rng rng = master.derive("select-score").derive(static_cast<std::uint64_t>(i));
        scores[i] = sampling::diversity_score(clf, model, train.cases[i].case_id,
                                              train.cases[i].features,
                                              cfg.selection.k_samples,
                                              cfg.selection.nucleus_p,
                                              cfg.generator.max_len, rng);
    });
    std::vector<std::pair<std::string, double>> pairs(train.cases.size());
    for (std::size_t i = 0; i < train.cases.size(); ++i)
        pairs[i] = {train.cases[i].case_id, scores[i]};
    sampling::SelectionTable table = sampling::rank_probabilities(std::move(pairs));
    table.k_samples = cfg.selection.k_samples;
    table.nucleus_p = cfg.selection.nucleus_p;
    table.seed = cfg.seed;
    table.checkpoint_hash = hash_hex(file_content_hash(paths.sft_policy()));
    sampling::save_selection(paths.selection(), table, cfg.provenance_json());
    std::cout << "[select] scored " << table.rows.size() << " cases, top score "
              << fmt_metric(table.rows.front().score) << "\n";
}

RlResult rl_train(policy::PolicyModel& model,
                  const labeler::DiagnosticClassifier& clf,
                  const corpus::PathologyCatalog& catalog,
                  const std::vector<corpus::CaseRecord>& pool,
                  const RlOptions& opt, std::uint64_t seed) {
    if (pool.empty()) throw std::invalid_argument("rl pool is empty");
    if (opt.n_rollouts < 2) throw std::invalid_argument("rl needs at least 2 rollouts per group");
    opt.reward_cfg.validate();

    optim::AdvantageConfig adv_cfg;
    adv_cfg.mode = opt.mode;
    adv_cfg.alpha = opt.alpha;
    adv_cfg.beta = opt.beta;
    adv_cfg.std_epsilon = opt.std_epsilon;
    adv_cfg.saliency_agg = opt.saliency_agg;

    std::ofstream log;
    if (!opt.rollout_log_path.empty()) {
        auto parent = std::filesystem::path(opt.rollout_log_path).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        log.open(opt.rollout_log_path, std::ios::binary | std::ios::trunc);
        if (!log) throw std::runtime_error("cannot open rollout log: " + opt.rollout_log_path);
        nlohmann::ordered_json header;
        header["schema_version"] = 1;
        header["kind"] = "rl_log_header";
        header["mode"] = optim::mode_to_string(opt.mode);
        header["n_rollouts"] = opt.n_rollouts;
        header["temperature"] = opt.temperature;
        header["config"] = opt.log_header_config;
        log << header.dump() << "\n";
    }
    std::ofstream wlog;
    if (!opt.weights_log_path.empty()) {
        auto parent = std::filesystem::path(opt.weights_log_path).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        wlog.open(opt.weights_log_path, std::ios::binary | std::ios::trunc);
        if (!wlog) throw std::runtime_error("cannot open weights log: " + opt.weights_log_path);
    }

    Rng master(seed);
    Adam adam(opt.lr);
    auto params = model.params();

    // Shuffled cycling over the pool; reshuffle per sweep.
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    std::uint64_t sweep = 0;

    const std::size_t n = static_cast<std::size_t>(opt.n_rollouts);
    RlResult result;
    double first_sum = 0, last_sum = 0;
    long first_n = 0, last_n = 0;
    const int quarter = std::max(1, opt.steps / 4);

    for (int step = 0; step < opt.steps; ++step) {
        if (cursor >= order.size()) {
            Rng srng = master.derive("rl-order").derive(sweep++);
            for (std::size_t k = order.size(); k > 1; --k)
                std::swap(order[k - 1], order[srng.uniform_index(k)]);
            cursor = 0;
        }
        const corpus::CaseRecord& rec = pool[order[cursor++]];

        policy::RolloutGroup group;
        group.case_id = rec.case_id;
        group.features = rec.features;
        group.rollouts.resize(n);
        group.rewards.resize(n);

        const std::vector<int> gt = labeler::keyword_oracle(catalog, rec.text).values;
        const std::vector<int> ref_tokens = model.tokenizer.tokenize(rec.text);
        Rng step_rng = master.derive("rl-rollout").derive(static_cast<std::uint64_t>(step));
        parallel_for(n, opt.workers, [&](std::size_t i) {
            Rng rng = step_rng.derive(static_cast<std::uint64_t>(i));
            group.rollouts[i] = policy::sample(model, rec.features,
                                               policy::SampleStrategy::temperature(opt.temperature),
                                               opt.max_len, rng);
            std::vector<int> body;
            for (int t : group.rollouts[i].tokens)
                if (!model.tokenizer.is_special(t)) body.push_back(t);
            group.rewards[i] = rewards::composite_reward(clf, group.rollouts[i].text, gt,
                                                         body, ref_tokens, step,
                                                         opt.reward_cfg);
        });

        std::vector<double> totals(n);
        for (std::size_t i = 0; i < n; ++i) totals[i] = group.rewards[i].total;
        group.advantages = optim::group_advantages(totals, opt.std_epsilon);

        std::set<int> target_set = labeler::oracle_positive_set(catalog, rec.text);
        optim::assemble_token_advantages(group, adv_cfg, &clf, &target_set);

        policy::PolicyGrads grads = policy::PolicyGrads::zeros_like(model);
        policy::surrogate_loss_and_grad(model, group, opt.clip_eps, opt.temperature,
                                        opt.kl_coeff, grads);
        adam.step(params, grads.params());

        const double mean_total = mean(totals);
        if (step < quarter) { first_sum += mean_total; ++first_n; }
        if (step >= opt.steps - quarter) { last_sum += mean_total; ++last_n; }

        if (log.is_open()) {
            nlohmann::ordered_json rec_j;
            rec_j["kind"] = "group";
            rec_j["step"] = step;
            rec_j["case_id"] = rec.case_id;
            rec_j["gamma"] = group.rewards.front().gamma;
            auto arr = nlohmann::ordered_json::array();
            for (std::size_t i = 0; i < n; ++i) {
                nlohmann::ordered_json rj;
                rj["rollout_idx"] = static_cast<int>(i);
                rj["f1"] = group.rewards[i].f1;
                rj["bleu2"] = group.rewards[i].bleu2;
                rj["gamma"] = group.rewards[i].gamma;
                rj["total"] = group.rewards[i].total;
                arr.push_back(std::move(rj));
            }
            rec_j["rewards"] = std::move(arr);
            rec_j["advantages"] = group.advantages;
            rec_j["zero_variance"] = pop_std(totals) == 0.0;
            log << rec_j.dump() << "\n";
        }
        if (wlog.is_open()) {
            optim::TfidfTable table;
            if (opt.mode == optim::Mode::DitpoRule) {
                std::vector<std::vector<int>> docs(n);
                for (std::size_t i = 0; i < n; ++i) docs[i] = group.rollouts[i].tokens;
                table = optim::tfidf_table(docs);
            }
            for (std::size_t i = 0; i < n; ++i) {
                nlohmann::ordered_json wj;
                wj["kind"] = "weights";
                wj["step"] = step;
                wj["case_id"] = rec.case_id;
                wj["rollout_idx"] = static_cast<int>(i);
                std::vector<double> sal(group.rollouts[i].tokens.size(), 0.0);
                if (opt.mode == optim::Mode::DitpoGrad) {
                    auto map = labeler::saliency(clf, group.rollouts[i].text, target_set);
                    sal = labeler::align_scores(map, group.rollouts[i].spans, opt.saliency_agg);
                }
                auto tok_arr = nlohmann::ordered_json::array();
                for (std::size_t t = 0; t < group.rollouts[i].tokens.size(); ++t) {
                    nlohmann::ordered_json tj;
                    tj["text"] = model.tokenizer.token_text(group.rollouts[i].tokens[t]);
                    tj["tf"] = table.empty() ? 0.0 : table[i][t].tf;
                    tj["idf"] = table.empty() ? 0.0 : table[i][t].idf;
                    tj["saliency"] = sal[t];
                    tj["weight"] = group.token_weights[i][t];
                    tj["advantage"] = group.token_advantages[i][t];
                    tok_arr.push_back(std::move(tj));
                }
                wj["tokens"] = std::move(tok_arr);
                wlog << wj.dump() << "\n";
            }
        }
        ++result.steps_run;
    }
    result.mean_reward_first_quarter = first_n > 0 ? first_sum / first_n : 0.0;
    result.mean_reward_last_quarter = last_n > 0 ? last_sum / last_n : 0.0;
    return result;
}

void stage_rl(const RunConfig& cfg, const ArtifactPaths& paths) {
    auto train = load_split(paths, "train");
    labeler::DiagnosticClassifier clf = labeler::load_classifier(paths.classifier());
    policy::PolicyModel model = policy::load_policy(paths.sft_policy());
    require_vocab_match(model.tokenizer, train.catalog);

    std::vector<corpus::CaseRecord> pool;
    if (cfg.rl.use_selection) {
        sampling::SelectionTable table = sampling::load_selection(paths.selection());
        std::uint64_t draw_seed = Rng(cfg.seed).derive("rl-subset").next_u64();
        std::vector<std::string> ids = sampling::draw_subset(table, cfg.selection.fraction,
                                                             draw_seed,
                                                             cfg.selection.with_replacement);
        std::map<std::string, const corpus::CaseRecord*> by_id;
        for (const auto& rec : train.cases) by_id[rec.case_id] = &rec;
        for (const auto& id : ids) {
            auto it = by_id.find(id);
            if (it == by_id.end())
                throw std::runtime_error("selection references unknown case_id " + id);
            pool.push_back(*it->second);
        }
    } else {
        pool = train.cases;
    }

    RlOptions opt;
    opt.mode = optim::mode_from_string(cfg.rl.mode);
    opt.steps = cfg.rl.steps;
    opt.lr = cfg.rl.lr;
    opt.clip_eps = cfg.rl.clip_eps;
    opt.n_rollouts = cfg.rl.n_rollouts;
    opt.temperature = cfg.rl.temperature;
    opt.alpha = cfg.rl.alpha;
    opt.beta = cfg.rl.beta;
    opt.std_epsilon = cfg.rl.std_epsilon;
    opt.kl_coeff = cfg.rl.kl_coeff;
    opt.saliency_agg = cfg.rl.saliency_agg;
    opt.max_len = cfg.generator.max_len;
    opt.workers = cfg.workers;
    opt.reward_cfg = cfg.reward_config();
    opt.rollout_log_path = paths.rollout_log();
    if (cfg.rl.dump_weights) opt.weights_log_path = paths.weights_log();
    opt.log_header_config = cfg.provenance_json();

    RlResult result = rl_train(model, clf, train.catalog, pool, opt, cfg.seed);
    policy::save_policy(paths.rl_policy(), model, cfg.provenance_json());
    std::cout << "[rl] pool " << pool.size() << " cases, mean reward "
              << fmt_metric(result.mean_reward_first_quarter) << " (first quarter) -> "
              << fmt_metric(result.mean_reward_last_quarter) << " (last quarter)\n";
}

EvalReport stage_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                      const std::string& split, const ArtifactPaths& paths,
                      bool write_report) {
    auto loaded = load_split(paths, split);
    policy::PolicyModel model = policy::load_policy(checkpoint_path);
    require_vocab_match(model.tokenizer, loaded.catalog);

    EvalReport report = evaluate(model.tokenizer, loaded.catalog, loaded.cases,
                                 greedy_generator(model, cfg.generator.max_len), cfg.workers);
    report.split = split;
    report.config_hash_hex = hash_hex(cfg.config_hash());
    report.checkpoint_hash_hex = hash_hex(file_content_hash(checkpoint_path));
    if (write_report)
        write_text_file(paths.eval_report(split), report.to_json(cfg.provenance_json()).dump() + "\n");
    return report;
}

void run_pipeline(const RunConfig& cfg, bool resume) {
    ArtifactPaths paths{cfg.out_dir};
    paths.ensure_dir();
    std::ostringstream summary;
    summary << "pipeline run\n"
            << "config hash: " << hash_hex(cfg.config_hash()) << "\n"
            << "seed: " << cfg.seed << "\n\n";

    auto run_stage = [&](const char* name, bool skip, const std::function<void()>& fn) {
        if (skip) {
            std::cout << "[pipeline] " << name << ": artifacts present, skipped\n";
            summary << name << ": reused existing artifacts\n";
            return;
        }
        try {
            fn();
        } catch (const std::exception& e) {
            throw std::runtime_error("stage '" + std::string(name) + "' failed (artifacts in " +
                                     cfg.out_dir + "): " + e.what());
        }
    };

    run_stage("gen-corpus",
              resume && file_exists(paths.corpus("train")) && file_exists(paths.corpus("val")) &&
                  file_exists(paths.corpus("test")),
              [&] { stage_gen_corpus(cfg, paths); });
    run_stage("train-labeler", resume && file_exists(paths.classifier()),
              [&] { stage_train_labeler(cfg, paths); });
    run_stage("sft", resume && file_exists(paths.sft_policy()),
              [&] { stage_sft(cfg, paths); });
    if (cfg.rl.use_selection)
        run_stage("select", resume && file_exists(paths.selection()),
                  [&] { stage_select(cfg, paths); });
    run_stage("rl-train", resume && file_exists(paths.rl_policy()),
              [&] { stage_rl(cfg, paths); });

    EvalReport sft_val = stage_eval(cfg, paths.sft_policy(), "val", paths, false);
    summary << "sft val: sample_f1 " << fmt_metric(sft_val.sample_f1) << ", bleu2 "
            << fmt_metric(sft_val.bleu2) << "\n";
    for (const std::string split : {"val", "test"}) {
        EvalReport rep = stage_eval(cfg, paths.rl_policy(), split, paths, true);
        summary << "rl " << split << ": sample_f1 " << fmt_metric(rep.sample_f1)
                << ", macro_f1 " << fmt_metric(rep.macro_f1) << ", bleu2 "
                << fmt_metric(rep.bleu2) << ", bleu4 " << fmt_metric(rep.bleu4) << "\n";
        std::cout << "[eval " << split << "] sample_f1 " << fmt_metric(rep.sample_f1)
                  << ", bleu2 " << fmt_metric(rep.bleu2) << "\n";
    }
    write_text_file(paths.summary(), summary.str());
}

// ---- analyses ----

std::vector<MaskStrategyResult> mask_analysis(
    const labeler::DiagnosticClassifier& clf,
    const policy::PolicyModel& model,
    const corpus::PathologyCatalog& catalog,
    const std::vector<corpus::CaseRecord>& cases,
    const std::vector<std::string>& strategies,
    double mask_fraction, int n_samples, int n_rollouts_per_group,
    double temperature, int max_len, std::uint64_t seed, int workers) {
    if (cases.empty()) throw std::invalid_argument("mask analysis needs cases");
    if (mask_fraction < 0.0 || mask_fraction > 1.0)
        throw std::invalid_argument("mask fraction must lie in [0,1]");
    if (n_samples < 1 || n_rollouts_per_group < 1)
        throw std::invalid_argument("sample counts must be positive");
    enum Kind { kRandom, kTfidf, kGradient };
    std::vector<Kind> kinds;
    for (const auto& s : strategies) {
        if (s == "random") kinds.push_back(kRandom);
        else if (s == "tfidf") kinds.push_back(kTfidf);
        else if (s == "gradient") kinds.push_back(kGradient);
        else throw std::invalid_argument("unknown masking strategy '" + s +
                                         "' (expected random, tfidf, or gradient)");
    }

    const std::size_t n_groups =
        (static_cast<std::size_t>(n_samples) + n_rollouts_per_group - 1) /
        static_cast<std::size_t>(n_rollouts_per_group);
    struct GroupStats {
        std::vector<long> modified;
        std::vector<double> f1_sum;
        long count = 0;
    };
    std::vector<GroupStats> slots(n_groups);

    Rng master(seed);
    parallel_for(n_groups, workers, [&](std::size_t g) {
        GroupStats& gs = slots[g];
        gs.modified.assign(kinds.size(), 0);
        gs.f1_sum.assign(kinds.size(), 0.0);
        Rng rng = master.derive("mask-group").derive(static_cast<std::uint64_t>(g));
        Rng rng_rand = master.derive("mask-random").derive(static_cast<std::uint64_t>(g));
        const corpus::CaseRecord& rec = cases[rng.uniform_index(cases.size())];
        const std::set<int> target_set = labeler::oracle_positive_set(catalog, rec.text);

        std::vector<policy::Rollout> rollouts(static_cast<std::size_t>(n_rollouts_per_group));
        for (auto& r : rollouts)
            r = policy::sample(model, rec.features,
                               policy::SampleStrategy::temperature(temperature), max_len, rng);

        std::vector<std::vector<int>> docs(rollouts.size());
        for (std::size_t i = 0; i < rollouts.size(); ++i) docs[i] = rollouts[i].tokens;
        std::vector<std::vector<double>> tfidf_w = optim::tfidf_weights(docs, 1.0);

        for (std::size_t i = 0; i < rollouts.size(); ++i) {
            const auto& rollout = rollouts[i];
            const std::vector<int> pre = labeler::classify(clf, rollout.text).values;

            std::vector<std::size_t> maskable;
            for (std::size_t t = 0; t < rollout.tokens.size(); ++t)
                if (!model.tokenizer.is_special(rollout.tokens[t])) maskable.push_back(t);
            const std::size_t n_mask = static_cast<std::size_t>(
                std::llround(mask_fraction * static_cast<double>(maskable.size())));

            std::vector<double> random_w(rollout.tokens.size());
            for (auto& w : random_w) w = rng_rand.uniform();
            std::vector<double> grad_w;
            for (std::size_t ki = 0; ki < kinds.size(); ++ki)
                if (kinds[ki] == kGradient && grad_w.empty())
                    grad_w = optim::gradient_weights(clf, rollout, target_set, 1.0);

            for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
                const std::vector<double>& w = kinds[ki] == kRandom ? random_w
                                               : kinds[ki] == kTfidf ? tfidf_w[i]
                                                                     : grad_w;
                std::vector<std::size_t> ranked = maskable;
                std::stable_sort(ranked.begin(), ranked.end(),
                                 [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
                std::vector<int> masked = rollout.tokens;
                for (std::size_t r = 0; r < n_mask && r < ranked.size(); ++r)
                    masked[ranked[r]] = corpus::PolicyTokenizer::kMask;
                const std::string masked_text = model.tokenizer.detokenize(masked);
                const std::vector<int> post = labeler::classify(clf, masked_text).values;
                if (post != pre) ++gs.modified[ki];
                gs.f1_sum[ki] += rewards::sample_f1(post, pre);
            }
            ++gs.count;
        }
    });

    std::vector<MaskStrategyResult> out(kinds.size());
    for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
        long mod = 0, count = 0;
        double f1 = 0;
        for (const auto& gs : slots) {
            mod += gs.modified[ki];
            f1 += gs.f1_sum[ki];
            count += gs.count;
        }
        out[ki].strategy = strategies[ki];
        out[ki].n_rollouts = static_cast<int>(count);
        out[ki].modification_ratio = count > 0 ? static_cast<double>(mod) / count : 0.0;
        out[ki].post_mask_f1 = count > 0 ? f1 / count : 0.0;
    }
    return out;
}

std::string mask_analysis_csv(const std::vector<MaskStrategyResult>& results) {
    std::string out = "strategy,n_rollouts,modification_ratio,post_mask_f1\n";
    for (const auto& r : results) {
        out += r.strategy;
        out += ',';
        out += std::to_string(r.n_rollouts);
        out += ',';
        out += fmt_double(r.modification_ratio);
        out += ',';
        out += fmt_double(r.post_mask_f1);
        out += '\n';
    }
    return out;
}

RewardDiversityStats reward_diversity(const std::vector<std::vector<double>>& group_totals) {
    if (group_totals.empty())
        throw std::invalid_argument("reward diversity needs at least 1 group");
    RewardDiversityStats stats;
    long zero_var = 0;
    double unique_sum = 0, std_sum = 0;
    for (const auto& totals : group_totals) {
        if (totals.empty()) continue;
        std::vector<long long> rounded(totals.size());
        for (std::size_t i = 0; i < totals.size(); ++i)
            rounded[i] = std::llround(totals[i] * 1e9);
        std::vector<long long> uniq = rounded;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        if (uniq.size() == 1) ++zero_var;
        unique_sum += static_cast<double>(uniq.size());
        std_sum += pop_std(totals);
        ++stats.n_groups;
    }
    if (stats.n_groups > 0) {
        stats.zero_variance_ratio = static_cast<double>(zero_var) / stats.n_groups;
        stats.mean_unique_rewards = unique_sum / stats.n_groups;
        stats.mean_reward_std = std_sum / stats.n_groups;
    }
    return stats;
}

RewardDiversityStats reward_diversity_from_log(const std::string& path) {
    const std::string content = read_text_file(path);
    std::vector<std::vector<double>> groups;
    std::size_t pos = 0, line_no = 0;
    while (pos < content.size()) {
        std::size_t nl = content.find('\n', pos);
        std::string line = content.substr(pos, nl == std::string::npos ? std::string::npos
                                                                       : nl - pos);
        pos = nl == std::string::npos ? content.size() : nl + 1;
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("rollout log parse error at line " +
                                     std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("kind") || j["kind"] != "group") continue;
        std::vector<double> totals;
        for (const auto& r : j.at("rewards")) totals.push_back(r.at("total").get<double>());
        groups.push_back(std::move(totals));
    }
    return reward_diversity(groups);
}

std::string token_dump_csv(const labeler::DiagnosticClassifier& clf,
                           const corpus::PathologyCatalog& catalog,
                           const corpus::PolicyTokenizer& tokenizer,
                           const std::vector<corpus::CaseRecord>& cases,
                           const std::vector<std::string>& case_ids,
                           double alpha, double beta) {
    if (case_ids.empty()) throw std::invalid_argument("token dump needs at least 1 case id");
    std::map<std::string, const corpus::CaseRecord*> by_id;
    for (const auto& rec : cases) by_id[rec.case_id] = &rec;

    std::vector<const corpus::CaseRecord*> selected;
    for (const auto& id : case_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw std::invalid_argument("unknown case_id '" + id + "'");
        selected.push_back(it->second);
    }

    // The dumped set itself is the TF-IDF document collection.
    std::vector<std::vector<int>> docs(selected.size());
    for (std::size_t i = 0; i < selected.size(); ++i)
        docs[i] = tokenizer.tokenize(selected[i]->text);
    optim::TfidfTable table;
    std::vector<std::vector<double>> rule_w = optim::tfidf_weights(docs, alpha, &table);

    std::string out = "case_id,position,token,tf,idf,rule_weight,saliency,grad_weight\n";
    for (std::size_t i = 0; i < selected.size(); ++i) {
        const auto& rec = *selected[i];
        const std::set<int> targets = labeler::oracle_positive_set(catalog, rec.text);
        policy::Rollout ref;
        ref.tokens = docs[i];
        ref.text = tokenizer.detokenize(docs[i]);
        ref.spans = tokenizer.spans(docs[i]);
        labeler::SaliencyMap sal = labeler::saliency(clf, ref.text, targets);
        std::vector<double> aligned = labeler::align_scores(sal, ref.spans, 0);
        for (std::size_t t = 0; t < docs[i].size(); ++t) {
            out += rec.case_id;
            out += ',';
            out += std::to_string(t);
            out += ',';
            out += tokenizer.token_text(docs[i][t]);
            out += ',';
            out += fmt_double(table[i][t].tf);
            out += ',';
            out += fmt_double(table[i][t].idf);
            out += ',';
            out += fmt_double(rule_w[i][t]);
            out += ',';
            out += fmt_double(aligned[t]);
            out += ',';
            out += fmt_double(1.0 + beta * aligned[t]);
            out += '\n';
        }
    }
    return out;
}

} // namespace reportrl::harness
