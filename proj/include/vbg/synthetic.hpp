#pragma once

#include <string>
#include <vector>

#include "vbg/document.hpp"

namespace vbg {

// Receipt-like pages: white background, one dark rectangle per word, one
// keyword+value pair per label plus filler words from a disjoint lexicon.
struct SyntheticSpec {
    std::vector<std::string> labels = {"company", "date", "address", "total"};
    std::string layout = "free_text";  // "free_text" | "tabular"
    int min_width = 320, max_width = 480;
    int min_height = 400, max_height = 560;
    int min_filler_words = 10, max_filler_words = 30;
    double bbox_jitter = 0.0;  // max per-edge pixel perturbation
    int font_height = 12;      // word box height
    int char_width = 7;        // word box width per character
    int margin = 8;
    unsigned long long seed = 0;

    void validate() const;  // throws ValidationError
    LabelSet label_set() const { return LabelSet{labels, {}}; }
};

// Deterministic given spec.seed. Every document carries consistent gold word
// labels and field annotations. Throws ValidationError if the words cannot
// fit the page.
std::vector<Document> generate_synthetic(const SyntheticSpec& spec, int count);

// Dataset directory layout: one <stem>.json + <stem>.pgm per document plus a
// labels.txt (one label name per line). Returns the written JSON paths.
std::vector<std::string> write_dataset(const std::vector<Document>& docs, const LabelSet& labels,
                                       const std::string& dir);
std::vector<Document> load_dataset(const std::string& dir, LabelSet& labels);

}  // namespace vbg
