#pragma once

#include <string>
#include <vector>

#include "vbg/document.hpp"

namespace vbg {

struct MatchOptions {
    bool lowercase = true;
    bool strip_punct = true;          // leading/trailing punctuation
    bool collapse_whitespace = true;
    bool edit_distance_fallback = true;  // per-word edit distance <= 1
};

struct FieldMatch {
    int field_index = 0;
    int label = 0;
    std::string status;                   // "matched", "matched_fuzzy", "unmatched"
    std::vector<int> matched_word_indices;
    std::string note;
};

struct MatchResult {
    std::vector<int> word_labels;     // one label per word
    std::vector<FieldMatch> report;
};

// Assigns a label to every word by aligning field texts against the word
// sequence. Earliest exact match of the normalized texts wins; optional
// fallback allows edit distance <= 1 per word. Unmatched fields stay in the
// report, never silently dropped.
MatchResult match_field_annotations(const Document& doc,
                                    const std::vector<FieldAnnotation>& fields,
                                    const LabelSet& labels,
                                    const MatchOptions& opts = {});

std::string normalize_text(const std::string& s, const MatchOptions& opts);

void write_match_report(const std::vector<FieldMatch>& report, const LabelSet& labels,
                        const std::string& path);

}  // namespace vbg
