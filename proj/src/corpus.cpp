// SPDX-License-Identifier: Apache-2.0
#include "reportrl/corpus.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "reportrl/parallel.hpp"
#include "reportrl/util.hpp"

namespace reportrl::corpus {

namespace {

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) out.push_back(w);
    return out;
}

int sentence_tokens(const std::vector<std::string>& words) {
    return static_cast<int>(words.size()) + 1; // trailing "." token
}

} // namespace

void PathologyCatalog::validate() const {
    if (pathologies.size() < 2)
        throw std::invalid_argument("catalog needs at least 2 pathologies");
    if (templates.size() < 4)
        throw std::invalid_argument("catalog needs at least 4 boilerplate templates");
    for (const auto& p : pathologies) {
        if (p.name.empty()) throw std::invalid_argument("pathology with empty name");
        if (p.positive.size() < 2 || p.negative.size() < 2)
            throw std::invalid_argument("pathology '" + p.name +
                                        "' needs at least 2 positive and 2 negative phrases");
        for (const auto& other : {&p.positive, &p.negative})
            for (const auto& phrase : *other)
                if (phrase.empty())
                    throw std::invalid_argument("empty phrase in pathology '" + p.name + "'");
    }
    for (const auto& p : pathologies)
        for (const auto* side : {&p.positive, &p.negative})
            for (const auto& phrase : *side)
                for (const auto& t : templates)
                    if (t.find(phrase) != std::string::npos)
                        throw std::invalid_argument("finding phrase '" + phrase +
                                                    "' occurs inside template '" + t + "'");
    // Substring overlap across pathologies, and across polarities within one
    // pathology, would make last-occurrence label extraction ambiguous.
    auto all_phrases = [](const Pathology& p) {
        std::vector<std::string> v = p.positive;
        v.insert(v.end(), p.negative.begin(), p.negative.end());
        return v;
    };
    for (std::size_t i = 0; i < pathologies.size(); ++i) {
        for (std::size_t j = 0; j < pathologies.size(); ++j) {
            if (i == j) continue;
            for (const auto& a : all_phrases(pathologies[i]))
                for (const auto& b : all_phrases(pathologies[j]))
                    if (a.find(b) != std::string::npos)
                        throw std::invalid_argument(
                            "phrase '" + b + "' (" + pathologies[j].name +
                            ") is a substring of phrase '" + a + "' (" +
                            pathologies[i].name + ")");
        }
        const auto& p = pathologies[i];
        for (const auto& pos : p.positive)
            for (const auto& neg : p.negative)
                if (pos.find(neg) != std::string::npos || neg.find(pos) != std::string::npos)
                    throw std::invalid_argument("pathology '" + p.name +
                                                "' has overlapping positive/negative phrases");
    }
}

nlohmann::ordered_json PathologyCatalog::to_json() const {
    nlohmann::ordered_json j;
    j["pathologies"] = nlohmann::ordered_json::array();
    for (const auto& p : pathologies) {
        nlohmann::ordered_json pj;
        pj["name"] = p.name;
        pj["positive"] = p.positive;
        pj["negative"] = p.negative;
        j["pathologies"].push_back(std::move(pj));
    }
    j["templates"] = templates;
    return j;
}

PathologyCatalog PathologyCatalog::from_json(const nlohmann::json& j) {
    PathologyCatalog c;
    for (const auto& pj : j.at("pathologies")) {
        Pathology p;
        p.name = pj.at("name").get<std::string>();
        p.positive = pj.at("positive").get<std::vector<std::string>>();
        p.negative = pj.at("negative").get<std::vector<std::string>>();
        c.pathologies.push_back(std::move(p));
    }
    c.templates = j.at("templates").get<std::vector<std::string>>();
    return c;
}

PathologyCatalog default_catalog() {
    PathologyCatalog c;
    c.pathologies = {
        {"edema",
         {"interstitial edema evident", "worsening edema bilaterally"},
         {"no edema appreciated", "edema has cleared"}},
        {"effusion",
         {"pleural effusion layering", "small effusion persists"},
         {"no effusion identified", "effusion fully drained"}},
        {"pneumonia",
         {"focal pneumonia consolidation", "pneumonia in right lobe"},
         {"no pneumonia evident", "pneumonia has resolved"}},
        {"nodule",
         {"spiculated nodule noted", "new nodule four millimeters"},
         {"no nodule detected", "nodule no longer visualized"}},
        {"fracture",
         {"acute rib fracture seen", "displaced clavicle fracture"},
         {"no fracture identified", "old fracture unchanged"}},
        {"cardiomegaly",
         {"cardiomegaly is present", "moderate cardiomegaly noted"},
         {"no cardiomegaly seen", "cardiomegaly has regressed"}},
    };
    c.templates = {
        "lungs adequately inflated",
        "mediastinal contours appear stable",
        "osseous structures are intact",
        "support lines standard position",
        "comparison made to prior",
    };
    c.validate();
    return c;
}

std::vector<CaseRecord> generate_corpus(const PathologyCatalog& catalog,
                                        const GeneratorConfig& config,
                                        int n_cases, std::uint64_t seed,
                                        int workers) {
    catalog.validate();
    if (n_cases < 1) throw std::invalid_argument("n_cases must be >= 1");
    const int C = catalog.n_pathologies();
    if (static_cast<int>(config.prevalence.size()) != C)
        throw std::invalid_argument("prevalence size must equal pathology count");
    for (double p : config.prevalence)
        if (p < 0.0 || p > 1.0)
            throw std::invalid_argument("prevalence must lie in [0,1]");
    if (config.noise.noise_dims < 0)
        throw std::invalid_argument("noise_dims must be >= 0");

    constexpr int kMinTokens = 8;
    constexpr int kMaxTokens = 40;

    Rng master(seed);
    std::vector<CaseRecord> out(static_cast<std::size_t>(n_cases));
    parallel_for(static_cast<std::size_t>(n_cases), workers, [&](std::size_t i) {
        Rng rng = master.derive("corpus-case").derive(static_cast<std::uint64_t>(i));
        CaseRecord rec;
        {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "case_%06zu", i);
            rec.case_id = buf;
        }
        rec.labels.resize(C);
        for (int c = 0; c < C; ++c) rec.labels[c] = rng.bernoulli(config.prevalence[c]) ? 1 : 0;
        rec.features.reserve(static_cast<std::size_t>(C + config.noise.noise_dims));
        for (int c = 0; c < C; ++c) {
            double base = rec.labels[c] == 1 ? 1.0 : -1.0;
            rec.features.push_back(base + config.noise.sigma * rng.normal());
        }
        for (int d = 0; d < config.noise.noise_dims; ++d) rec.features.push_back(rng.normal());

        // Mandatory content first (one template, every positive finding),
        // then budget-capped extras. Order is shuffled at the end; absence
        // phrases are only emitted for true negatives, so any ordering stays
        // consistent with last-occurrence label extraction.
        std::vector<std::vector<std::string>> sentences;
        int total = 0;
        auto push = [&](const std::string& phrase) {
            sentences.push_back(split_words(phrase));
            total += sentence_tokens(sentences.back());
        };
        push(catalog.templates[rng.uniform_index(catalog.templates.size())]);
        for (int c = 0; c < C; ++c)
            if (rec.labels[c] == 1) {
                const auto& opts = catalog.pathologies[c].positive;
                push(opts[rng.uniform_index(opts.size())]);
            }
        int absence = 0;
        for (int c = 0; c < C; ++c) {
            if (rec.labels[c] == 1 || absence >= config.max_absence_sentences) continue;
            if (!rng.bernoulli(config.neg_mention_prob)) continue;
            const auto& opts = catalog.pathologies[c].negative;
            auto words = split_words(opts[rng.uniform_index(opts.size())]);
            if (total + sentence_tokens(words) > kMaxTokens) continue;
            sentences.push_back(std::move(words));
            total += sentence_tokens(sentences.back());
            ++absence;
        }
        if (rng.bernoulli(0.5)) {
            auto words = split_words(catalog.templates[rng.uniform_index(catalog.templates.size())]);
            if (total + sentence_tokens(words) <= kMaxTokens) {
                sentences.push_back(std::move(words));
                total += sentence_tokens(sentences.back());
            }
        }
        while (total < kMinTokens) {
            push(catalog.templates[rng.uniform_index(catalog.templates.size())]);
        }
        for (std::size_t k = sentences.size(); k > 1; --k) {
            std::size_t j = rng.uniform_index(k);
            std::swap(sentences[k - 1], sentences[j]);
        }

        std::string text;
        for (const auto& s : sentences) {
            for (const auto& w : s) {
                if (!text.empty()) text += ' ';
                text += w;
            }
            text += " .";
        }
        rec.text = std::move(text);
        out[i] = std::move(rec);
    });
    return out;
}

// ---- PolicyTokenizer ----

void PolicyTokenizer::build_index() {
    word_to_id_.clear();
    for (int id = kFirstWord; id < static_cast<int>(vocab_.size()); ++id)
        word_to_id_[vocab_[id]] = id;
    word_to_id_[kMaskSurface] = kMask;
}

PolicyTokenizer PolicyTokenizer::from_catalog(const PathologyCatalog& catalog) {
    std::set<std::string> words;
    auto add_phrase = [&](const std::string& phrase) {
        for (auto& w : split_words(phrase)) words.insert(w);
    };
    for (const auto& p : catalog.pathologies) {
        for (const auto& s : p.positive) add_phrase(s);
        for (const auto& s : p.negative) add_phrase(s);
    }
    for (const auto& t : catalog.templates) add_phrase(t);
    words.insert(".");

    std::vector<std::string> vocab = {"<pad>", "<bos>", "<eos>", "<unk>", kMaskSurface};
    vocab.insert(vocab.end(), words.begin(), words.end());
    return from_vocab(std::move(vocab));
}

PolicyTokenizer PolicyTokenizer::from_vocab(std::vector<std::string> vocab) {
    if (static_cast<int>(vocab.size()) <= kFirstWord)
        throw std::invalid_argument("policy vocab too small");
    if (vocab[kMask] != kMaskSurface)
        throw std::invalid_argument("policy vocab slot 4 must be the mask surface");
    PolicyTokenizer t;
    t.vocab_ = std::move(vocab);
    t.build_index();
    return t;
}

std::vector<int> PolicyTokenizer::tokenize(const std::string& text) const {
    std::vector<int> out;
    for (const auto& w : split_words(text)) {
        auto it = word_to_id_.find(w);
        out.push_back(it == word_to_id_.end() ? kUnk : it->second);
    }
    return out;
}

std::string PolicyTokenizer::detokenize(const std::vector<int>& tokens) const {
    std::string out;
    for (int id : tokens) {
        if (id == kPad || id == kBos || id == kEos || id == kUnk) continue;
        if (!out.empty()) out += ' ';
        out += vocab_.at(static_cast<std::size_t>(id));
    }
    return out;
}

std::vector<TokenSpan> PolicyTokenizer::spans(const std::vector<int>& tokens) const {
    // Mirror detokenize: surfacing token k covers its word plus the following
    // separator space (none for the last surfacing token).
    int last_surfacing = -1;
    for (std::size_t k = 0; k < tokens.size(); ++k) {
        int id = tokens[k];
        if (!(id == kPad || id == kBos || id == kEos || id == kUnk))
            last_surfacing = static_cast<int>(k);
    }
    std::vector<TokenSpan> out(tokens.size());
    int pos = 0;
    for (std::size_t k = 0; k < tokens.size(); ++k) {
        int id = tokens[k];
        if (id == kPad || id == kBos || id == kEos || id == kUnk) {
            out[k] = {pos, pos};
            continue;
        }
        int len = static_cast<int>(vocab_.at(static_cast<std::size_t>(id)).size());
        int end = pos + len + (static_cast<int>(k) == last_surfacing ? 0 : 1);
        out[k] = {pos, end};
        pos = end;
    }
    return out;
}

std::uint64_t PolicyTokenizer::vocab_hash() const {
    std::string joined;
    for (const auto& w : vocab_) {
        joined += w;
        joined += '\n';
    }
    return fnv1a64(joined);
}

// ---- ClassifierTokenizer ----

void ClassifierTokenizer::build_index() {
    chunk_to_id_.clear();
    for (int id = 1; id < static_cast<int>(vocab_.size()); ++id)
        chunk_to_id_[vocab_[id]] = id;
}

ClassifierTokenizer ClassifierTokenizer::build(const std::vector<std::string>& texts,
                                               int width) {
    if (width < 1) throw std::invalid_argument("chunk width must be >= 1");
    std::set<std::string> chunks;
    auto add_text = [&](const std::string& text) {
        for (std::size_t i = 0; i < text.size(); i += static_cast<std::size_t>(width))
            chunks.insert(text.substr(i, static_cast<std::size_t>(width)));
    };
    for (const auto& t : texts) add_text(t);
    add_text(PolicyTokenizer::kMaskSurface);

    std::vector<std::string> vocab = {"<unk>"};
    vocab.insert(vocab.end(), chunks.begin(), chunks.end());
    return from_vocab(std::move(vocab), width);
}

ClassifierTokenizer ClassifierTokenizer::from_vocab(std::vector<std::string> vocab, int width) {
    if (vocab.empty()) throw std::invalid_argument("classifier vocab empty");
    if (width < 1) throw std::invalid_argument("chunk width must be >= 1");
    ClassifierTokenizer t;
    t.width_ = width;
    t.vocab_ = std::move(vocab);
    t.build_index();
    return t;
}

ClassifierTokenizer::Tokenized ClassifierTokenizer::tokenize(const std::string& text) const {
    Tokenized out;
    for (std::size_t i = 0; i < text.size(); i += static_cast<std::size_t>(width_)) {
        std::string chunk = text.substr(i, static_cast<std::size_t>(width_));
        auto it = chunk_to_id_.find(chunk);
        out.ids.push_back(it == chunk_to_id_.end() ? kUnk : it->second);
        out.spans.push_back({static_cast<int>(i),
                             static_cast<int>(std::min(i + static_cast<std::size_t>(width_),
                                                       text.size()))});
    }
    return out;
}

std::uint64_t ClassifierTokenizer::vocab_hash() const {
    std::string joined;
    for (const auto& w : vocab_) {
        joined += w;
        joined += '\n';
    }
    return fnv1a64(joined);
}

// ---- persistence ----

void save_corpus(const std::string& path, const std::vector<CaseRecord>& cases,
                 const nlohmann::ordered_json& header_config,
                 const PathologyCatalog& catalog) {
    std::string out;
    nlohmann::ordered_json header;
    header["schema_version"] = kCorpusSchemaVersion;
    header["kind"] = "corpus_header";
    header["config"] = header_config;
    header["catalog"] = catalog.to_json();
    out += header.dump();
    out += '\n';
    for (const auto& rec : cases) {
        nlohmann::ordered_json j;
        j["case_id"] = rec.case_id;
        j["features"] = rec.features;
        j["text"] = rec.text;
        j["labels"] = rec.labels;
        j["schema_version"] = kCorpusSchemaVersion;
        out += j.dump();
        out += '\n';
    }
    write_text_file(path, out);
}

LoadedCorpus load_corpus(const std::string& path) {
    const std::string content = read_text_file(path);
    LoadedCorpus out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
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
            throw std::runtime_error("corpus parse error at line " + std::to_string(line_no) +
                                     ": " + e.what());
        }
        try {
            const int version = j.at("schema_version").get<int>();
            if (version != kCorpusSchemaVersion)
                throw std::runtime_error("corpus schema version mismatch: expected " +
                                         std::to_string(kCorpusSchemaVersion) + ", found " +
                                         std::to_string(version));
            if (j.contains("kind") && j["kind"] == "corpus_header") {
                out.catalog = PathologyCatalog::from_json(j.at("catalog"));
                out.has_header = true;
                continue;
            }
            CaseRecord rec;
            rec.case_id = j.at("case_id").get<std::string>();
            rec.features = j.at("features").get<Vec>();
            rec.text = j.at("text").get<std::string>();
            rec.labels = j.at("labels").get<std::vector<int>>();
            for (int v : rec.labels)
                if (v != 0 && v != 1)
                    throw std::runtime_error("label outside {0,1}");
            out.cases.push_back(std::move(rec));
        } catch (const std::runtime_error&) {
            throw;
        } catch (const std::exception& e) {
            throw std::runtime_error("corpus parse error at line " + std::to_string(line_no) +
                                     ": " + e.what());
        }
    }
    return out;
}

} // namespace reportrl::corpus
