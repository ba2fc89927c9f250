#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "angiodit/dataset/synth.hpp"

namespace angiodit::dataset {

// Closed prompt vocabulary. Id 0 is padding.
class Vocabulary {
public:
    static const Vocabulary& standard();

    std::int64_t size() const { return static_cast<std::int64_t>(words_.size()); }
    const std::string& word(std::int64_t id) const;
    // -1 when the word is not in the vocabulary.
    std::int64_t id(const std::string& word) const;

    // Lowercases, splits on anything but letters, digits and '-', and keeps
    // vocabulary words in order.
    std::vector<std::int64_t> tokenize(const std::string& text) const;

private:
    explicit Vocabulary(std::vector<std::string> words);
    std::vector<std::string> words_;
};

struct Report {
    std::string text;
    std::vector<std::int64_t> token_ids;
};

// Deterministic templated report: comma-joined lesion terms, the laterality
// header, then one numbered sentence per lesion.
Report case_to_report(const SyntheticCase& c);

// Token ids for a lesion set: lesion terms in canonical order, then laterality, "eye", "ffa".
std::vector<std::int64_t> lesion_tokens(const std::vector<Lesion>& lesions, Laterality laterality);

struct ParsedReport {
    Laterality laterality = Laterality::Right;
    std::vector<Lesion> lesions;
};

// Inverse of case_to_report. Throws ConfigError on text without a header.
ParsedReport parse_report(const std::string& text);

// Lesions named in a token sequence.
std::vector<Lesion> lesions_in_tokens(const std::vector<std::int64_t>& ids);

}  // namespace angiodit::dataset
