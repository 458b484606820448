// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "reportrl/math.hpp"
#include "reportrl/rng.hpp"

#include <nlohmann/json_fwd.hpp>

namespace reportrl::corpus {

// One pathology with its finding phrases. Positive phrases assert the
// finding, negative phrases assert its absence; the keyword oracle and the
// report generator both key off these exact strings.
struct Pathology {
    std::string name;
    std::vector<std::string> positive; // >= 2 entries in a valid catalog
    std::vector<std::string> negative; // >= 2 entries in a valid catalog
};

struct PathologyCatalog {
    std::vector<Pathology> pathologies;
    std::vector<std::string> templates; // boilerplate sentences, no findings

    int n_pathologies() const { return static_cast<int>(pathologies.size()); }

    // Throws std::invalid_argument on structural violations: fewer than 2
    // pathologies, missing phrases, a finding phrase occurring inside a
    // boilerplate template, or one phrase being a substring of another
    // phrase from a different pathology.
    void validate() const;

    nlohmann::ordered_json to_json() const;
    static PathologyCatalog from_json(const nlohmann::json& j);
};

// The built-in 6-pathology micro-domain.
PathologyCatalog default_catalog();

struct CaseRecord {
    std::string case_id;
    Vec features;                 // C signal coords in {-1,+1}+noise, then noise_dims pure noise
    std::string text;             // reference report, single-space separated words
    std::vector<int> labels;      // C entries in {0,1}

    bool operator==(const CaseRecord& other) const = default;
};

struct NoiseParams {
    double sigma = 0.3; // additive noise on the +-1 signal coordinates
    int noise_dims = 4; // pure-noise feature coordinates
};

struct GeneratorConfig {
    std::vector<double> prevalence;  // per pathology, values in [0,1]
    double neg_mention_prob = 0.35;  // chance a true-negative gets an absence sentence
    int max_absence_sentences = 2;
    NoiseParams noise;
};

// Deterministic given (catalog, config, n_cases, seed); per-case RNG streams
// are derived from (seed, case index) so generation may be sharded.
std::vector<CaseRecord> generate_corpus(const PathologyCatalog& catalog,
                                        const GeneratorConfig& config,
                                        int n_cases, std::uint64_t seed,
                                        int workers = 1);

// Character span [begin, end) into the detokenized text.
struct TokenSpan {
    int begin = 0;
    int end = 0;
    bool operator==(const TokenSpan&) const = default;
};

// Closed word-level vocabulary derived from a catalog. Token ids:
// PAD, BOS, EOS, UNK, MASK, then sorted unique words (periods included as
// the word "."). Corpus text never produces UNK; MASK is reserved for the
// masking analysis and is never produced by the report generator.
class PolicyTokenizer {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kMask = 4;
    static constexpr const char* kMaskSurface = "___";

    static PolicyTokenizer from_catalog(const PathologyCatalog& catalog);
    static PolicyTokenizer from_vocab(std::vector<std::string> vocab);

    std::vector<int> tokenize(const std::string& text) const;
    // Joins surfacing tokens (words and the mask surface) with single
    // spaces; PAD/BOS/EOS/UNK are skipped.
    std::string detokenize(const std::vector<int>& tokens) const;
    // Spans over detokenize(tokens): each surfacing token covers its word
    // plus the following separator space, so spans partition
    // [0, len(text)). Skipped tokens get empty spans.
    std::vector<TokenSpan> spans(const std::vector<int>& tokens) const;

    int vocab_size() const { return static_cast<int>(vocab_.size()); }
    const std::vector<std::string>& vocab() const { return vocab_; }
    const std::string& token_text(int id) const { return vocab_.at(id); }
    bool is_special(int id) const { return id < kFirstWord; }
    std::uint64_t vocab_hash() const;

  private:
    static constexpr int kFirstWord = 5;
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> word_to_id_;
    void build_index();
};

// Fixed-width character-chunk tokenizer standing in for a subword scheme.
// Chunk boundaries fall every `width` characters of the raw text (spaces
// included), so the same word chunks differently depending on its offset;
// this guarantees boundary mismatch against the word-level policy tokens.
class ClassifierTokenizer {
  public:
    static constexpr int kUnk = 0;

    // Vocabulary = UNK + all chunks observed in `texts` + chunks of the
    // mask surface form, sorted.
    static ClassifierTokenizer build(const std::vector<std::string>& texts,
                                     int width = 3);
    static ClassifierTokenizer from_vocab(std::vector<std::string> vocab, int width);

    struct Tokenized {
        std::vector<int> ids;
        std::vector<TokenSpan> spans;
    };
    Tokenized tokenize(const std::string& text) const;

    int width() const { return width_; }
    int vocab_size() const { return static_cast<int>(vocab_.size()); }
    const std::vector<std::string>& vocab() const { return vocab_; }
    std::uint64_t vocab_hash() const;

  private:
    int width_ = 3;
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> chunk_to_id_;
    void build_index();
};

inline constexpr int kCorpusSchemaVersion = 1;

// JSON-lines: one optional header line (schema_version, kind=corpus_header,
// config, catalog), then one case per line with fields
// {case_id, features, text, labels, schema_version}.
void save_corpus(const std::string& path, const std::vector<CaseRecord>& cases,
                 const nlohmann::ordered_json& header_config,
                 const PathologyCatalog& catalog);

struct LoadedCorpus {
    std::vector<CaseRecord> cases;
    PathologyCatalog catalog;   // from the header; default-empty if absent
    bool has_header = false;
};

// Throws std::runtime_error naming the line number on malformed input and
// a schema-version error naming expected/found versions on a mismatch.
LoadedCorpus load_corpus(const std::string& path);

} // namespace reportrl::corpus
