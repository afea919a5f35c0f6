#include "vbg/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

namespace vbg {
namespace {

namespace fs = std::filesystem;

// Value and filler lexicons are disjoint so field texts match their gold span
// and nothing else.
const std::vector<std::string> kCompanyWords = {"NORDIC", "ATLAS",  "VERTEX", "HARBOR",
                                                "SUMMIT", "CRANE",  "ORION",  "DELTA",
                                                "PIONEER", "LUMEN"};
const std::vector<std::string> kCompanySuffix = {"TRADING", "SYSTEMS", "MARKET", "GROUP",
                                                 "SUPPLY",  "RETAIL",  "FOODS",  "MOTORS"};
const std::vector<std::string> kStreets = {"Maple", "Cedar", "Birch", "Willow",
                                           "Aspen", "Linden", "Rowan", "Alder"};
const std::vector<std::string> kStreetSuffix = {"St.", "Ave.", "Rd.", "Blvd."};
const std::vector<std::string> kCities = {"Easton", "Norwood", "Fairview", "Brookside",
                                          "Hillcrest", "Lakeview"};
const std::vector<std::string> kFiller = {
    "item",    "qty",     "subtotal", "change",  "cash",    "card",     "thank",
    "you",     "receipt", "cashier",  "till",    "visit",   "again",    "open",
    "daily",   "member",  "points",   "balance", "served",  "by",       "lane",
    "ref",     "void",    "tax",      "incl",    "goods",   "returned", "within",
    "days",    "policy",  "hotline",  "feedback"};

int pick(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

const std::string& pick(std::mt19937_64& rng, const std::vector<std::string>& v) {
    return v[static_cast<std::size_t>(pick(rng, 0, static_cast<int>(v.size()) - 1))];
}

std::vector<std::string> value_words(const std::string& label, std::mt19937_64& rng) {
    if (label == "company") {
        std::vector<std::string> w = {pick(rng, kCompanyWords), pick(rng, kCompanySuffix)};
        if (pick(rng, 0, 1)) w.push_back("LTD");
        return w;
    }
    if (label == "date") {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%02d/%02d/%04d", pick(rng, 1, 28), pick(rng, 1, 12),
                      pick(rng, 2018, 2025));
        return {buf};
    }
    if (label == "address") {
        char num[8];
        std::snprintf(num, sizeof num, "%d", pick(rng, 1, 199));
        return {num, pick(rng, kStreets), pick(rng, kStreetSuffix), pick(rng, kCities)};
    }
    if (label == "total") {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%d.%02d", pick(rng, 1, 499), pick(rng, 0, 99));
        return {buf};
    }
    // generic label: a tagged token that cannot collide with the lexicons
    return {"<" + label + "-" + std::to_string(pick(rng, 100, 999)) + ">"};
}

std::string keyword_for(const std::string& label) {
    std::string k = label;
    if (!k.empty()) k[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(k[0])));
    return k + ":";
}

// A segment is laid out contiguously in reading order.
struct Segment {
    std::vector<std::string> texts;
    std::vector<int> labels;  // per word
};

double jittered(double v, double jitter, double lo, double hi, std::mt19937_64& rng) {
    if (jitter <= 0) return v;
    v += std::uniform_real_distribution<double>(-jitter, jitter)(rng);
    return std::clamp(v, lo, hi);
}

void place_word(Document& doc, const std::string& text, int label, double x, double y,
                const SyntheticSpec& spec, std::mt19937_64& rng) {
    Word w;
    w.text = text;
    w.label = label;
    const double bw = static_cast<double>(spec.char_width) * static_cast<double>(text.size());
    const double bh = spec.font_height;
    w.bbox.x_min = jittered(x, spec.bbox_jitter, 0, doc.width - 2, rng);
    w.bbox.y_min = jittered(y, spec.bbox_jitter, 0, doc.height - 2, rng);
    w.bbox.x_max = jittered(x + bw, spec.bbox_jitter, w.bbox.x_min + 1, doc.width - 1, rng);
    w.bbox.y_max = jittered(y + bh, spec.bbox_jitter, w.bbox.y_min + 1, doc.height - 1, rng);
    doc.words.push_back(std::move(w));
}

void render(Document& doc) {
    doc.image = Tensor({1, doc.height, doc.width}, 1.0);
    for (const Word& w : doc.words) {
        const int x0 = std::max(0, static_cast<int>(w.bbox.x_min));
        const int x1 = std::min(doc.width - 1, static_cast<int>(w.bbox.x_max));
        const int y0 = std::max(0, static_cast<int>(w.bbox.y_min));
        const int y1 = std::min(doc.height - 1, static_cast<int>(w.bbox.y_max));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) doc.image.at(0, y, x) = 0.2;
    }
}

Document generate_one(const SyntheticSpec& spec, const LabelSet& labels, int index,
                      std::mt19937_64& rng) {
    Document doc;
    doc.id = "synthetic-" + std::to_string(index);
    doc.width = pick(rng, spec.min_width, spec.max_width);
    doc.height = pick(rng, spec.min_height, spec.max_height);

    std::vector<Segment> segments;
    for (int c = 0; c < labels.num_fields(); ++c) {
        Segment s;
        s.texts.push_back(keyword_for(labels.names[static_cast<std::size_t>(c)]));
        s.labels.push_back(labels.other_label());
        for (std::string& v : value_words(labels.names[static_cast<std::size_t>(c)], rng)) {
            s.texts.push_back(std::move(v));
            s.labels.push_back(c);
        }
        FieldAnnotation f;
        f.label = c;
        for (std::size_t i = 1; i < s.texts.size(); ++i) {
            if (i > 1) f.text += ' ';
            f.text += s.texts[i];
        }
        doc.fields.push_back(std::move(f));
        segments.push_back(std::move(s));
    }
    const int filler = pick(rng, spec.min_filler_words, spec.max_filler_words);
    for (int i = 0; i < filler; ++i) {
        Segment s;
        s.texts.push_back(pick(rng, kFiller));
        s.labels.push_back(labels.other_label());
        segments.push_back(std::move(s));
    }
    std::shuffle(segments.begin(), segments.end(), rng);

    const double line_h = spec.font_height + 6.0;
    const double gap = spec.char_width;  // one character of spacing
    double x = spec.margin, y = spec.margin;

    const bool tabular = spec.layout == "tabular";
    if (spec.layout != "free_text" && !tabular)
        throw ValidationError("synthetic: unknown layout \"" + spec.layout + "\"");

    for (const Segment& seg : segments) {
        const bool is_field = seg.labels.size() > 1;
        if (tabular && is_field) {
            // keyword column on the left, value column at mid-page
            if (x > spec.margin) {
                x = spec.margin;
                y += line_h;
            }
            place_word(doc, seg.texts[0], seg.labels[0], x, y, spec, rng);
            double vx = doc.width / 2.0;
            for (std::size_t i = 1; i < seg.texts.size(); ++i) {
                const double bw = static_cast<double>(spec.char_width) *
                                  static_cast<double>(seg.texts[i].size());
                if (vx + bw > doc.width - spec.margin)
                    throw ValidationError("synthetic: value row overflows page width in " +
                                          doc.id);
                place_word(doc, seg.texts[i], seg.labels[i], vx, y, spec, rng);
                vx += bw + gap;
            }
            y += line_h;
            continue;
        }
        // free-text flow; a field segment stays on one line so its words are
        // contiguous in reading order
        double seg_w = 0;
        for (const std::string& t : seg.texts)
            seg_w += static_cast<double>(spec.char_width) * static_cast<double>(t.size()) + gap;
        if (seg_w > doc.width - 2.0 * spec.margin)
            throw ValidationError("synthetic: segment wider than page in " + doc.id);
        if (x + seg_w > doc.width - spec.margin) {
            x = spec.margin;
            y += line_h;
        }
        for (std::size_t i = 0; i < seg.texts.size(); ++i) {
            place_word(doc, seg.texts[i], seg.labels[i], x, y, spec, rng);
            x += static_cast<double>(spec.char_width) * static_cast<double>(seg.texts[i].size()) +
                 gap;
        }
    }
    if (y + spec.font_height > doc.height - spec.margin)
        throw ValidationError("synthetic: words do not fit the page in " + doc.id +
                              " (need height > " + std::to_string(y + spec.font_height) + ")");
    render(doc);
    doc.validate(labels);
    return doc;
}

}  // namespace

void SyntheticSpec::validate() const {
    auto fail = [](const std::string& msg) { throw ValidationError("synthetic spec: " + msg); };
    if (labels.empty()) fail("labels must be nonempty");
    if (min_width < 32 || min_height < 32) fail("page sides must be >= 32");
    if (max_width < min_width || max_height < min_height) fail("empty page size range");
    if (min_filler_words < 0 || max_filler_words < min_filler_words)
        fail("bad filler word range");
    if (layout != "free_text" && layout != "tabular") fail("layout must be free_text or tabular");
    if (font_height < 2 || char_width < 1) fail("font dimensions too small");
    if (bbox_jitter < 0) fail("bbox_jitter must be >= 0");
}

std::vector<Document> generate_synthetic(const SyntheticSpec& spec, int count) {
    spec.validate();
    const LabelSet labels = spec.label_set();
    std::mt19937_64 rng(spec.seed);
    std::vector<Document> docs;
    docs.reserve(static_cast<std::size_t>(std::max(0, count)));
    for (int i = 0; i < count; ++i) docs.push_back(generate_one(spec, labels, i, rng));
    return docs;
}

std::vector<std::string> write_dataset(const std::vector<Document>& docs, const LabelSet& labels,
                                       const std::string& dir) {
    fs::create_directories(dir);
    {
        const std::string tmp = (fs::path(dir) / "labels.txt.tmp").string();
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        for (const std::string& name : labels.names) out << name << '\n';
        fs::rename(tmp, fs::path(dir) / "labels.txt");
    }
    std::vector<std::string> paths;
    for (const Document& d : docs) {
        const std::string json_path = (fs::path(dir) / (d.id + ".json")).string();
        save_document(d, labels, json_path, d.id + ".pgm");
        paths.push_back(json_path);
    }
    return paths;
}

std::vector<Document> load_dataset(const std::string& dir, LabelSet& labels) {
    const fs::path labels_path = fs::path(dir) / "labels.txt";
    std::ifstream in(labels_path);
    if (!in) throw ParseError("cannot open " + labels_path.string());
    labels.names.clear();
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) labels.names.push_back(line);
    if (labels.names.empty()) throw ValidationError(labels_path.string() + " lists no labels");

    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() != ".json") continue;
        // documents are JSON objects; sidecar reports (e.g. a match report,
        // which is a JSON array) live in the same directory and are skipped
        std::ifstream peek(entry.path());
        char c = 0;
        while (peek.get(c) && std::isspace(static_cast<unsigned char>(c))) {
        }
        if (c == '{') files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    std::vector<Document> docs;
    for (const std::string& f : files) docs.push_back(load_document(f, labels));
    return docs;
}

}  // namespace vbg
