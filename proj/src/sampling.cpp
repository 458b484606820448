// SPDX-License-Identifier: Apache-2.0
#include "reportrl/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "reportrl/util.hpp"

namespace reportrl::sampling {

double diversity_score(const labeler::DiagnosticClassifier& clf,
                       const policy::PolicyModel& model,
                       const std::string& case_id, const Vec& features,
                       int k, double nucleus_p, int max_len, Rng rng) {
    (void)case_id; // identification only; scoring never sees labels or references
    if (k < 2) throw std::invalid_argument("diversity needs at least 2 samples");
    const int C = clf.n_pathologies;
    std::vector<Vec> preds(static_cast<std::size_t>(C));
    for (auto& p : preds) p.reserve(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
        policy::Rollout r = policy::sample(model, features,
                                           policy::SampleStrategy::nucleus(nucleus_p),
                                           max_len, rng);
        labeler::LabelVector lv = labeler::classify(clf, r.text);
        for (int c = 0; c < C; ++c)
            preds[static_cast<std::size_t>(c)].push_back(
                static_cast<double>(lv.values[static_cast<std::size_t>(c)]));
    }
    double d = 0.0;
    for (int c = 0; c < C; ++c) d += pop_std(preds[static_cast<std::size_t>(c)]);
    return d;
}

SelectionTable rank_probabilities(std::vector<std::pair<std::string, double>> scores) {
    if (scores.empty()) throw std::invalid_argument("rank_probabilities needs >= 1 case");
    {
        std::set<std::string> ids;
        for (const auto& [id, score] : scores)
            if (!ids.insert(id).second)
                throw std::invalid_argument("duplicate case_id '" + id + "'");
    }
    std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    double z = 0.0;
    for (std::size_t r = 1; r <= scores.size(); ++r)
        z += 1.0 / std::log(static_cast<double>(r) + 1.0);

    SelectionTable table;
    table.rows.reserve(scores.size());
    for (std::size_t r = 1; r <= scores.size(); ++r) {
        SelectionRow row;
        row.case_id = scores[r - 1].first;
        row.score = scores[r - 1].second;
        row.rank = static_cast<int>(r);
        row.prob = (1.0 / std::log(static_cast<double>(r) + 1.0)) / z;
        table.rows.push_back(std::move(row));
    }
    return table;
}

std::vector<std::string> draw_subset(const SelectionTable& table, double fraction,
                                     std::uint64_t seed, bool with_replacement) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw std::invalid_argument("subset fraction must lie in (0, 1]");
    if (table.rows.empty()) throw std::invalid_argument("selection table is empty");
    const std::size_t n = table.rows.size();
    const std::size_t n_draw = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(n)));

    Rng rng(seed);
    std::vector<std::string> out;
    out.reserve(n_draw);
    if (with_replacement) {
        for (std::size_t d = 0; d < n_draw; ++d) {
            double u = rng.uniform();
            double cum = 0.0;
            std::size_t pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                cum += table.rows[i].prob;
                if (u < cum) {
                    pick = i;
                    break;
                }
            }
            out.push_back(table.rows[pick].case_id);
        }
        return out;
    }

    std::vector<std::size_t> alive(n);
    for (std::size_t i = 0; i < n; ++i) alive[i] = i;
    double mass = 0.0;
    for (const auto& row : table.rows) mass += row.prob;
    for (std::size_t d = 0; d < n_draw && !alive.empty(); ++d) {
        double u = rng.uniform() * mass;
        double cum = 0.0;
        std::size_t pick = alive.size() - 1;
        for (std::size_t i = 0; i < alive.size(); ++i) {
            cum += table.rows[alive[i]].prob;
            if (u < cum) {
                pick = i;
                break;
            }
        }
        out.push_back(table.rows[alive[pick]].case_id);
        mass -= table.rows[alive[pick]].prob;
        alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    return out;
}

void save_selection(const std::string& path, const SelectionTable& table,
                    const nlohmann::ordered_json& run_config) {
    std::string out;
    nlohmann::ordered_json header;
    header["schema_version"] = kSelectionSchemaVersion;
    header["kind"] = "selection_header";
    header["k_samples"] = table.k_samples;
    header["nucleus_p"] = table.nucleus_p;
    header["seed"] = table.seed;
    header["checkpoint_hash"] = table.checkpoint_hash;
    header["config"] = run_config;
    out += header.dump();
    out += '\n';
    for (const auto& row : table.rows) {
        nlohmann::ordered_json j;
        j["case_id"] = row.case_id;
        j["score"] = row.score;
        j["rank"] = row.rank;
        j["prob"] = row.prob;
        out += j.dump();
        out += '\n';
    }
    write_text_file(path, out);
}

SelectionTable load_selection(const std::string& path) {
    const std::string content = read_text_file(path);
    SelectionTable table;
    bool saw_header = false;
    std::size_t line_no = 0, pos = 0;
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
            throw std::runtime_error("selection parse error at line " +
                                     std::to_string(line_no) + ": " + e.what());
        }
        if (j.contains("kind") && j["kind"] == "selection_header") {
            const int version = j.at("schema_version").get<int>();
            if (version != kSelectionSchemaVersion)
                throw std::runtime_error("selection schema version mismatch: expected " +
                                         std::to_string(kSelectionSchemaVersion) +
                                         ", found " + std::to_string(version));
            table.k_samples = j.at("k_samples").get<int>();
            table.nucleus_p = j.at("nucleus_p").get<double>();
            table.seed = j.at("seed").get<std::uint64_t>();
            table.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
            saw_header = true;
            continue;
        }
        SelectionRow row;
        row.case_id = j.at("case_id").get<std::string>();
        row.score = j.at("score").get<double>();
        row.rank = j.at("rank").get<int>();
        row.prob = j.at("prob").get<double>();
        table.rows.push_back(std::move(row));
    }
    if (!saw_header)
        throw std::runtime_error("selection file has no header record: " + path);
    return table;
}

} // namespace reportrl::sampling
