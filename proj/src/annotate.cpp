#include "vbg/annotate.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <sstream>

namespace vbg {

using nlohmann::json;

std::string normalize_text(const std::string& s, const MatchOptions& opts) {
    std::string t = s;
    if (opts.strip_punct) {
        std::size_t b = 0, e = t.size();
        while (b < e && std::ispunct(static_cast<unsigned char>(t[b]))) ++b;
        while (e > b && std::ispunct(static_cast<unsigned char>(t[e - 1]))) --e;
        t = t.substr(b, e - b);
    }
    std::string out;
    bool prev_space = true;  // also trims leading whitespace
    for (char c : t) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (opts.collapse_whitespace) {
                if (!prev_space) {
                    out.push_back(' ');
                    prev_space = true;
                }
            } else {
                out.push_back(c);
                prev_space = true;
            }
            continue;
        }
        out.push_back(opts.lowercase ? static_cast<char>(std::tolower(static_cast<unsigned char>(c)))
                                     : c);
        prev_space = false;
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

namespace {

std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

int edit_distance(const std::string& a, const std::string& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= m; ++j) {
            int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

}  // namespace

MatchResult match_field_annotations(const Document& doc,
                                    const std::vector<FieldAnnotation>& fields,
                                    const LabelSet& labels, const MatchOptions& opts) {
    MatchResult result;
    const int n = static_cast<int>(doc.words.size());
    result.word_labels.assign(static_cast<std::size_t>(n), labels.other_label());

    std::vector<std::string> norm_words(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) norm_words[static_cast<std::size_t>(i)] = normalize_text(doc.words[static_cast<std::size_t>(i)].text, opts);

    for (std::size_t fi = 0; fi < fields.size(); ++fi) {
        const FieldAnnotation& field = fields[fi];
        if (field.text.empty()) throw ValidationError("field " + std::to_string(fi) + ": empty text");
        FieldMatch fm;
        fm.field_index = static_cast<int>(fi);
        fm.label = field.label;
        const std::string target = normalize_text(field.text, opts);
        if (target.empty())
            throw ValidationError("field " + std::to_string(fi) + ": text normalizes to empty");

        // Earliest contiguous span whose normalized concatenation equals the target.
        bool found = false;
        for (int start = 0; start < n && !found; ++start) {
            std::string concat;
            for (int end = start; end < n; ++end) {
                if (!concat.empty()) concat.push_back(' ');
                concat += norm_words[static_cast<std::size_t>(end)];
                if (concat.size() > target.size()) break;
                if (concat == target) {
                    for (int i = start; i <= end; ++i) fm.matched_word_indices.push_back(i);
                    fm.status = "matched";
                    found = true;
                    break;
                }
            }
        }

        const std::vector<std::string> ftoks = split_ws(target);
        const int k = static_cast<int>(ftoks.size());
        if (!found && opts.edit_distance_fallback && k >= 1 && k <= n) {
            for (int start = 0; start + k <= n && !found; ++start) {
                bool ok = true;
                for (int j = 0; j < k && ok; ++j)
                    ok = edit_distance(norm_words[static_cast<std::size_t>(start + j)], ftoks[static_cast<std::size_t>(j)]) <= 1;
                if (ok) {
                    for (int i = start; i < start + k; ++i) fm.matched_word_indices.push_back(i);
                    fm.status = "matched_fuzzy";
                    found = true;
                }
            }
        }

        if (found) {
            for (int i : fm.matched_word_indices)
                result.word_labels[static_cast<std::size_t>(i)] = field.label;
        } else {
            fm.status = "unmatched";
            // Closest candidate span of the same token count, for the report.
            if (k >= 1 && k <= n) {
                int best_start = -1, best_cost = std::numeric_limits<int>::max();
                for (int start = 0; start + k <= n; ++start) {
                    int cost = 0;
                    for (int j = 0; j < k; ++j)
                        cost += edit_distance(norm_words[static_cast<std::size_t>(start + j)], ftoks[static_cast<std::size_t>(j)]);
                    if (cost < best_cost) {
                        best_cost = cost;
                        best_start = start;
                    }
                }
                if (best_start >= 0) {
                    std::string cand;
                    for (int j = 0; j < k; ++j) {
                        if (j) cand.push_back(' ');
                        cand += doc.words[static_cast<std::size_t>(best_start + j)].text;
                    }
                    fm.note = "closest candidate at word " + std::to_string(best_start) + ": \"" +
                              cand + "\" (distance " + std::to_string(best_cost) + ")";
                }
            } else {
                fm.note = "no candidate span (document has " + std::to_string(n) + " words)";
            }
        }
        result.report.push_back(std::move(fm));
    }
    return result;
}

void write_match_report(const std::vector<FieldMatch>& report, const LabelSet& labels,
                        const std::string& path) {
    json j = json::array();
    for (const FieldMatch& fm : report) {
        j.push_back({{"field", fm.field_index},
                     {"label", labels.name_of(fm.label)},
                     {"status", fm.status},
                     {"matched_word_indices", fm.matched_word_indices},
                     {"note", fm.note}});
    }
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << j.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace vbg
