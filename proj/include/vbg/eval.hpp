#pragma once

#include <map>
#include <string>
#include <vector>

#include "vbg/document.hpp"

namespace vbg {

struct FieldPrediction {
    int label = 0;            // < C
    std::string text;         // matched words, single-space joined
    int begin = 0, end = 0;   // word span [begin, end)
    bool rule_derived = false;
};

// Maximal runs of consecutive identically-labeled words (label < C); "other"
// breaks runs.
std::vector<FieldPrediction> extract_entities(const std::vector<int>& word_labels,
                                              const Document& doc, const LabelSet& labels);

struct PerLabelPRF {
    long long tp = 0, fp = 0, fn = 0;
    double precision = 0, recall = 0, f1 = 0;
};

struct F1Report {
    double micro_f1 = 0, macro_f1 = 0;
    double micro_precision = 0, micro_recall = 0;
    std::map<std::string, PerLabelPRF> per_label;
};

// Field-level NER F1 with exact-span matching: an entity is correct iff
// label, begin and end all match a gold entity of the same document.
F1Report field_f1(const std::vector<std::vector<FieldPrediction>>& predicted,
                  const std::vector<std::vector<FieldPrediction>>& gold, const LabelSet& labels);

// SROIE-style scoring: per document and label the (first) predicted entity
// text must equal the gold field text exactly after trimming outer
// whitespace.
double sroie_macro_f1(const std::vector<std::vector<FieldPrediction>>& predicted,
                      const std::vector<std::vector<FieldAnnotation>>& gold_fields,
                      const LabelSet& labels);

struct PostprocessRule {
    int label = 0;
    std::string stage;    // "remove" | "fallback"
    std::string pattern;  // ECMAScript regex
};

std::vector<PostprocessRule> load_rule_pack(const std::string& path, const LabelSet& labels);

// Applies removal rules, then per-label fallback extraction over the raw
// document words for labels left without an entity.
std::vector<FieldPrediction> postprocess(const std::vector<FieldPrediction>& entities,
                                         const std::vector<PostprocessRule>& rules,
                                         const Document& doc);

struct McNemarReport {
    long long b = 0;  // A right, B wrong
    long long c = 0;  // B right, A wrong
    long long both_right = 0, both_wrong = 0;
    double p = 1.0;
};

// Exact two-sided binomial test for b+c < 25, otherwise chi-squared with
// continuity correction. b+c = 0 gives p = 1 by convention.
McNemarReport mcnemar(const std::vector<bool>& correct_a, const std::vector<bool>& correct_b);

// Prediction file: {"id", "words": [{"text","label"}], "entities": [...]}.
struct PredictionRecord {
    std::string id;
    std::vector<std::string> word_texts;
    std::vector<int> word_labels;
    std::vector<FieldPrediction> entities;
};

void write_predictions(const std::vector<PredictionRecord>& records, const LabelSet& labels,
                       const std::string& path);
std::vector<PredictionRecord> read_predictions(const std::string& path, const LabelSet& labels);

}  // namespace vbg
