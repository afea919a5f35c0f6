#include "vbg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include "json.hpp"

namespace vbg {
namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string join_words(const Document& doc, int begin, int end) {
    std::string out;
    for (int i = begin; i < end; ++i) {
        if (i > begin) out += ' ';
        out += doc.words[static_cast<std::size_t>(i)].text;
    }
    return out;
}

double f1_of(long long tp, long long fp, long long fn) {
    const double p = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
}

}  // namespace

std::vector<FieldPrediction> extract_entities(const std::vector<int>& word_labels,
                                              const Document& doc, const LabelSet& labels) {
    if (word_labels.size() != doc.words.size())
        throw std::invalid_argument("extract_entities: label count does not match word count");
    std::vector<FieldPrediction> out;
    const int n = static_cast<int>(word_labels.size());
    int i = 0;
    while (i < n) {
        const int lab = word_labels[static_cast<std::size_t>(i)];
        if (lab == labels.other_label()) {
            ++i;
            continue;
        }
        int j = i + 1;
        while (j < n && word_labels[static_cast<std::size_t>(j)] == lab) ++j;
        FieldPrediction e;
        e.label = lab;
        e.begin = i;
        e.end = j;
        e.text = join_words(doc, i, j);
        out.push_back(std::move(e));
        i = j;
    }
    return out;
}

F1Report field_f1(const std::vector<std::vector<FieldPrediction>>& predicted,
                  const std::vector<std::vector<FieldPrediction>>& gold, const LabelSet& labels) {
    if (predicted.size() != gold.size())
        throw std::invalid_argument("field_f1: document count mismatch");
    F1Report rep;
    std::vector<PerLabelPRF> prf(static_cast<std::size_t>(labels.num_fields()));
    for (std::size_t d = 0; d < predicted.size(); ++d) {
        std::vector<bool> gold_used(gold[d].size(), false);
        for (const FieldPrediction& p : predicted[d]) {
            bool hit = false;
            for (std::size_t g = 0; g < gold[d].size(); ++g) {
                const FieldPrediction& gd = gold[d][g];
                if (!gold_used[g] && gd.label == p.label && gd.begin == p.begin &&
                    gd.end == p.end) {
                    gold_used[g] = true;
                    hit = true;
                    break;
                }
            }
            auto& s = prf[static_cast<std::size_t>(p.label)];
            if (hit)
                ++s.tp;
            else
                ++s.fp;
        }
        for (std::size_t g = 0; g < gold[d].size(); ++g)
            if (!gold_used[g]) ++prf[static_cast<std::size_t>(gold[d][g].label)].fn;
    }

    long long tp = 0, fp = 0, fn = 0;
    double macro_sum = 0.0;
    int macro_n = 0;
    for (int c = 0; c < labels.num_fields(); ++c) {
        auto& s = prf[static_cast<std::size_t>(c)];
        s.precision = s.tp + s.fp > 0 ? static_cast<double>(s.tp) / (s.tp + s.fp) : 0.0;
        s.recall = s.tp + s.fn > 0 ? static_cast<double>(s.tp) / (s.tp + s.fn) : 0.0;
        s.f1 = f1_of(s.tp, s.fp, s.fn);
        rep.per_label[labels.name_of(c)] = s;
        tp += s.tp;
        fp += s.fp;
        fn += s.fn;
        if (s.tp + s.fp + s.fn > 0) {
            macro_sum += s.f1;
            ++macro_n;
        }
    }
    rep.micro_precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    rep.micro_recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    rep.micro_f1 = f1_of(tp, fp, fn);
    rep.macro_f1 = macro_n > 0 ? macro_sum / macro_n : 0.0;
    return rep;
}

double sroie_macro_f1(const std::vector<std::vector<FieldPrediction>>& predicted,
                      const std::vector<std::vector<FieldAnnotation>>& gold_fields,
                      const LabelSet& labels) {
    if (predicted.size() != gold_fields.size())
        throw std::invalid_argument("sroie_macro_f1: document count mismatch");
    double macro_sum = 0.0;
    int macro_n = 0;
    for (int c = 0; c < labels.num_fields(); ++c) {
        long long tp = 0, fp = 0, fn = 0;
        for (std::size_t d = 0; d < predicted.size(); ++d) {
            const FieldPrediction* pred = nullptr;
            for (const FieldPrediction& p : predicted[d])
                if (p.label == c) {
                    pred = &p;
                    break;
                }
            const FieldAnnotation* gold = nullptr;
            for (const FieldAnnotation& g : gold_fields[d])
                if (g.label == c) {
                    gold = &g;
                    break;
                }
            if (!pred && !gold) continue;
            if (pred && gold && trim(pred->text) == trim(gold->text)) {
                ++tp;
            } else {
                if (pred) ++fp;
                if (gold) ++fn;
            }
        }
        if (tp + fp + fn == 0) continue;  // label absent everywhere
        macro_sum += f1_of(tp, fp, fn);
        ++macro_n;
    }
    return macro_n > 0 ? macro_sum / macro_n : 0.0;
}

std::vector<PostprocessRule> load_rule_pack(const std::string& path, const LabelSet& labels) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open rule pack: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("rule pack " + path + ": " + e.what());
    }
    if (!j.is_array()) throw ParseError("rule pack " + path + ": expected a JSON array");
    std::vector<PostprocessRule> rules;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const json& r = j[i];
        PostprocessRule rule;
        if (!r.contains("label") || !r.contains("stage") || !r.contains("pattern"))
            throw ParseError("rule pack " + path + ": rule " + std::to_string(i) +
                             " needs label/stage/pattern");
        rule.label = labels.id_of(r.at("label").get<std::string>());
        if (rule.label >= labels.num_fields())
            throw ValidationError("rule pack " + path + ": rule " + std::to_string(i) +
                                  " targets the background label");
        rule.stage = r.at("stage").get<std::string>();
        if (rule.stage != "remove" && rule.stage != "fallback")
            throw ValidationError("rule pack " + path + ": rule " + std::to_string(i) +
                                  " has unknown stage \"" + rule.stage + "\"");
        rule.pattern = r.at("pattern").get<std::string>();
        try {
            std::regex probe(rule.pattern);
        } catch (const std::regex_error& e) {
            throw ValidationError("rule pack " + path + ": rule " + std::to_string(i) + " (" +
                                  r.at("label").get<std::string>() + "): bad pattern: " + e.what());
        }
        rules.push_back(std::move(rule));
    }
    return rules;
}

std::vector<FieldPrediction> postprocess(const std::vector<FieldPrediction>& entities,
                                         const std::vector<PostprocessRule>& rules,
                                         const Document& doc) {
    std::vector<FieldPrediction> out = entities;

    for (const PostprocessRule& rule : rules) {
        if (rule.stage != "remove") continue;
        std::regex re(rule.pattern);
        std::vector<FieldPrediction> kept;
        for (FieldPrediction e : out) {
            if (e.label == rule.label) {
                std::string cleaned = std::regex_replace(e.text, re, "");
                // collapse the whitespace the removal may have left behind
                std::string squeezed;
                for (char ch : cleaned) {
                    if (ch == ' ' && !squeezed.empty() && squeezed.back() == ' ') continue;
                    squeezed += ch;
                }
                e.text = trim(squeezed);
                if (e.text.empty()) continue;  // removal consumed the entity
            }
            kept.push_back(std::move(e));
        }
        out = std::move(kept);
    }

    for (const PostprocessRule& rule : rules) {
        if (rule.stage != "fallback") continue;
        bool present = false;
        for (const FieldPrediction& e : out)
            if (e.label == rule.label) {
                present = true;
                break;
            }
        if (present) continue;
        std::regex re(rule.pattern);
        for (int i = 0; i < static_cast<int>(doc.words.size()); ++i) {
            if (!std::regex_match(doc.words[static_cast<std::size_t>(i)].text, re)) continue;
            FieldPrediction e;
            e.label = rule.label;
            e.begin = i;
            e.end = i + 1;
            e.text = doc.words[static_cast<std::size_t>(i)].text;
            e.rule_derived = true;
            out.push_back(std::move(e));
            break;
        }
    }
    return out;
}

McNemarReport mcnemar(const std::vector<bool>& correct_a, const std::vector<bool>& correct_b) {
    if (correct_a.size() != correct_b.size())
        throw std::invalid_argument("mcnemar: vectors must have equal length");
    McNemarReport rep;
    for (std::size_t i = 0; i < correct_a.size(); ++i) {
        if (correct_a[i] && correct_b[i])
            ++rep.both_right;
        else if (!correct_a[i] && !correct_b[i])
            ++rep.both_wrong;
        else if (correct_a[i])
            ++rep.b;
        else
            ++rep.c;
    }
    const long long n = rep.b + rep.c;
    if (n == 0) {
        rep.p = 1.0;
        return rep;
    }
    if (n < 25) {
        // exact two-sided binomial test, p0 = 0.5
        const long long k = std::min(rep.b, rep.c);
        double tail = 0.0;
        for (long long i = 0; i <= k; ++i) {
            double log_choose = std::lgamma(static_cast<double>(n) + 1) -
                                std::lgamma(static_cast<double>(i) + 1) -
                                std::lgamma(static_cast<double>(n - i) + 1);
            tail += std::exp(log_choose - static_cast<double>(n) * std::log(2.0));
        }
        rep.p = std::min(1.0, 2.0 * tail);
        if (rep.b == rep.c) rep.p = 1.0;  // the two tails overlap at the midpoint
    } else {
        // chi-squared with continuity correction, 1 dof
        const double diff = std::abs(static_cast<double>(rep.b - rep.c)) - 1.0;
        const double x2 = diff * diff / static_cast<double>(n);
        rep.p = std::erfc(std::sqrt(x2 / 2.0));
    }
    return rep;
}

void write_predictions(const std::vector<PredictionRecord>& records, const LabelSet& labels,
                       const std::string& path) {
    json out = json::array();
    for (const PredictionRecord& r : records) {
        json doc;
        doc["id"] = r.id;
        doc["words"] = json::array();
        for (std::size_t i = 0; i < r.word_texts.size(); ++i)
            doc["words"].push_back({{"text", r.word_texts[i]},
                                    {"label", labels.name_of(r.word_labels[i])}});
        doc["entities"] = json::array();
        for (const FieldPrediction& e : r.entities) {
            json je = {{"label", labels.name_of(e.label)},
                       {"text", e.text},
                       {"begin", e.begin},
                       {"end", e.end}};
            if (e.rule_derived) je["rule_derived"] = true;
            doc["entities"].push_back(std::move(je));
        }
        out.push_back(std::move(doc));
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw std::runtime_error("cannot write " + tmp);
        f << out.dump(2) << '\n';
    }
    std::rename(tmp.c_str(), path.c_str());
}

std::vector<PredictionRecord> read_predictions(const std::string& path, const LabelSet& labels) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open predictions: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("predictions " + path + ": " + e.what());
    }
    if (!j.is_array()) throw ParseError("predictions " + path + ": expected a JSON array");
    std::vector<PredictionRecord> out;
    for (const json& doc : j) {
        PredictionRecord r;
        r.id = doc.at("id").get<std::string>();
        for (const json& w : doc.at("words")) {
            r.word_texts.push_back(w.at("text").get<std::string>());
            r.word_labels.push_back(labels.id_of(w.at("label").get<std::string>()));
        }
        for (const json& e : doc.at("entities")) {
            FieldPrediction p;
            p.label = labels.id_of(e.at("label").get<std::string>());
            p.text = e.at("text").get<std::string>();
            p.begin = e.at("begin").get<int>();
            p.end = e.at("end").get<int>();
            p.rule_derived = e.value("rule_derived", false);
            r.entities.push_back(std::move(p));
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace vbg
