#include "vbg/document.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace vbg {

using nlohmann::json;
namespace fs = std::filesystem;

int LabelSet::id_of(const std::string& name) const {
    if (name == "other") return other_label();
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    throw ValidationError("unknown label name: " + name);
}

std::string LabelSet::name_of(int label) const {
    if (label == other_label()) return "other";
    if (label < 0 || label > other_label())
        throw ValidationError("label id out of range: " + std::to_string(label));
    return names[static_cast<std::size_t>(label)];
}

void Document::validate(const LabelSet& labels) const {
    if (width <= 0 || height <= 0) throw ValidationError("document " + id + ": zero-area image");
    if (image.rank() != 3 || image.dim(1) != height || image.dim(2) != width)
        throw ValidationError("document " + id + ": image shape disagrees with width/height");
    for (std::size_t i = 0; i < words.size(); ++i) {
        const Word& w = words[i];
        std::string at = "document " + id + ", word " + std::to_string(i);
        if (w.text.empty()) throw ValidationError(at + ": empty text");
        if (w.bbox.x_min > w.bbox.x_max || w.bbox.y_min > w.bbox.y_max)
            throw ValidationError(at + ": inverted bbox");
        if (w.bbox.x_min < 0 || w.bbox.y_min < 0 || w.bbox.x_max > width ||
            w.bbox.y_max > height)
            throw ValidationError(at + ": bbox outside image");
        if (w.label < 0 || w.label >= labels.num_labels())
            throw ValidationError(at + ": label out of range");
    }
    for (const FieldAnnotation& f : fields)
        if (f.label < 0 || f.label >= labels.num_fields())
            throw ValidationError("document " + id + ": field label out of range");
}

std::vector<int> cell_owners(const Document& doc, int stride, int grid_h, int grid_w) {
    std::vector<int> owners(static_cast<std::size_t>(grid_h) * grid_w, -1);
    for (std::size_t i = 0; i < doc.words.size(); ++i) {
        const BoundingBox& b = doc.words[i].bbox;
        // Cell range whose sample points (x*stride, y*stride) fall in the box.
        int x0 = static_cast<int>(std::ceil(b.x_min / stride));
        int x1 = static_cast<int>(std::floor(b.x_max / stride));
        int y0 = static_cast<int>(std::ceil(b.y_min / stride));
        int y1 = static_cast<int>(std::floor(b.y_max / stride));
        x0 = std::max(x0, 0);
        y0 = std::max(y0, 0);
        x1 = std::min(x1, grid_w - 1);
        y1 = std::min(y1, grid_h - 1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                owners[static_cast<std::size_t>(y) * grid_w + x] = static_cast<int>(i);
    }
    return owners;
}

namespace {

json require(const json& j, const char* key, const std::string& ctx) {
    if (!j.contains(key)) throw ParseError(ctx + ": missing field \"" + key + "\"");
    return j.at(key);
}

}  // namespace

Document load_document(const std::string& path, const LabelSet& labels) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path + ": invalid JSON: " + e.what());
    }
    Document doc;
    try {
        doc.id = require(j, "id", path).get<std::string>();
        doc.width = require(j, "width", path).get<int>();
        doc.height = require(j, "height", path).get<int>();
        for (const json& jw : require(j, "words", path)) {
            Word w;
            w.text = require(jw, "text", path + " words").get<std::string>();
            json bb = require(jw, "bbox", path + " words");
            if (!bb.is_array() || bb.size() != 4)
                throw ParseError(path + ": word \"bbox\" must be [x_min,y_min,x_max,y_max]");
            w.bbox = {bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(),
                      bb[3].get<double>()};
            if (jw.contains("label") && !jw.at("label").is_null())
                w.label = labels.id_of(jw.at("label").get<std::string>());
            else
                w.label = labels.other_label();
            doc.words.push_back(std::move(w));
        }
        if (j.contains("fields") && !j.at("fields").is_null()) {
            for (const json& jf : j.at("fields")) {
                FieldAnnotation f;
                f.label = labels.id_of(require(jf, "label", path + " fields").get<std::string>());
                f.text = require(jf, "text", path + " fields").get<std::string>();
                doc.fields.push_back(std::move(f));
            }
        }
        if (j.contains("image") && j.at("image").is_string()) {
            fs::path img = j.at("image").get<std::string>();
            if (img.is_relative()) img = fs::path(path).parent_path() / img;
            doc.image = read_pgm(img.string());
            if (doc.image.dim(1) != doc.height || doc.image.dim(2) != doc.width)
                throw ValidationError(path + ": image dims disagree with width/height");
        } else {
            doc.image = Tensor({1, doc.height, doc.width}, 1.0);  // white page
        }
    } catch (const json::exception& e) {
        throw ParseError(path + ": schema error: " + e.what());
    }
    doc.validate(labels);
    return doc;
}

void save_document(const Document& doc, const LabelSet& labels, const std::string& path,
                   const std::string& image_path) {
    json j;
    j["id"] = doc.id;
    j["width"] = doc.width;
    j["height"] = doc.height;
    if (!image_path.empty()) {
        fs::path img(image_path);
        write_pgm(doc.image, img.is_relative()
                                 ? (fs::path(path).parent_path() / img).string()
                                 : img.string());
        j["image"] = image_path;
    }
    j["words"] = json::array();
    for (const Word& w : doc.words) {
        j["words"].push_back({{"text", w.text},
                              {"bbox", {w.bbox.x_min, w.bbox.y_min, w.bbox.x_max, w.bbox.y_max}},
                              {"label", labels.name_of(w.label)}});
    }
    j["fields"] = json::array();
    for (const FieldAnnotation& f : doc.fields)
        j["fields"].push_back({{"label", labels.name_of(f.label)}, {"text", f.text}});

    // Atomic write: temp file then rename.
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << j.dump(2) << "\n";
    }
    fs::rename(tmp, path);
}

Tensor resize_bilinear(const Tensor& image, int new_h, int new_w) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out({c, new_h, new_w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < new_h; ++y) {
            double sy = (y + 0.5) * h / new_h - 0.5;
            sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
            int y0 = std::min(static_cast<int>(sy), h - 1);
            int y1 = std::min(y0 + 1, h - 1);
            double fy = sy - y0;
            for (int x = 0; x < new_w; ++x) {
                double sx = (x + 0.5) * w / new_w - 0.5;
                sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
                int x0 = std::min(static_cast<int>(sx), w - 1);
                int x1 = std::min(x0 + 1, w - 1);
                double fx = sx - x0;
                out.at(ci, y, x) = (1 - fy) * ((1 - fx) * image.at(ci, y0, x0) +
                                               fx * image.at(ci, y0, x1)) +
                                   fy * ((1 - fx) * image.at(ci, y1, x0) +
                                         fx * image.at(ci, y1, x1));
            }
        }
    return out;
}

Document rescale_document(const Document& doc, int shorter_side, int max_longer_side) {
    if (shorter_side <= 0 || max_longer_side < shorter_side)
        throw ValidationError("rescale: invalid target sides");
    if (doc.width <= 0 || doc.height <= 0) throw ValidationError("rescale: zero-area image");
    const int shorter = std::min(doc.width, doc.height);
    const int longer = std::max(doc.width, doc.height);
    double s = static_cast<double>(shorter_side) / shorter;
    if (longer * s > max_longer_side) s = static_cast<double>(max_longer_side) / longer;
    const int new_w = std::max(1, static_cast<int>(std::lround(doc.width * s)));
    const int new_h = std::max(1, static_cast<int>(std::lround(doc.height * s)));
    const double fx = static_cast<double>(new_w) / doc.width;
    const double fy = static_cast<double>(new_h) / doc.height;

    Document out;
    out.id = doc.id;
    out.width = new_w;
    out.height = new_h;
    out.image = (new_w == doc.width && new_h == doc.height)
                    ? doc.image
                    : resize_bilinear(doc.image, new_h, new_w);
    out.fields = doc.fields;
    out.words = doc.words;
    for (Word& w : out.words) {
        w.bbox.x_min *= fx;
        w.bbox.x_max *= fx;
        w.bbox.y_min *= fy;
        w.bbox.y_max *= fy;
    }
    return out;
}

PixelMasks rasterize_masks(const Document& doc, int stride, const LabelSet& labels) {
    if (stride < 1) throw ValidationError("rasterize: stride must be >= 1");
    PixelMasks m;
    m.height = grid_dim(doc.height, stride);
    m.width = grid_dim(doc.width, stride);
    m.background_fine = labels.num_labels();  // C+1
    const std::vector<int> owners = cell_owners(doc, stride, m.height, m.width);
    m.coarse.resize(owners.size());
    m.fine.resize(owners.size());
    for (std::size_t i = 0; i < owners.size(); ++i) {
        if (owners[i] < 0) {
            m.coarse[i] = kCoarseBackground;
            m.fine[i] = m.background_fine;
        } else {
            const int label = doc.words[static_cast<std::size_t>(owners[i])].label;
            m.fine[i] = label;
            m.coarse[i] = label < labels.num_fields() ? kCoarseInteresting : kCoarseOther;
        }
    }
    return m;
}

Tensor read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open image " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw ParseError(path + ": not a P5 PGM");
    auto next_int = [&in, &path]() {
        // Skip whitespace and '#' comments.
        int c;
        while ((c = in.peek()) != EOF) {
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        int v;
        if (!(in >> v)) throw ParseError(path + ": truncated PGM header");
        return v;
    };
    const int w = next_int(), h = next_int(), maxval = next_int();
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
        throw ParseError(path + ": unsupported PGM dims/maxval");
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw ParseError(path + ": truncated PGM data");
    Tensor img({1, h, w});
    for (std::size_t i = 0; i < raw.size(); ++i)
        img[static_cast<std::int64_t>(i)] = static_cast<double>(raw[i]) / maxval;
    return img;
}

void write_pgm(const Tensor& image, const std::string& path) {
    if (image.rank() != 3 || image.dim(0) != 1)
        throw std::runtime_error("write_pgm: expected {1,H,W} image");
    const int h = image.dim(1), w = image.dim(2);
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << "P5\n" << w << " " << h << "\n255\n";
        std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
        for (std::size_t i = 0; i < raw.size(); ++i) {
            double v = std::clamp(image[static_cast<std::int64_t>(i)], 0.0, 1.0);
            raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        out.write(reinterpret_cast<const char*>(raw.data()),
                  static_cast<std::streamsize>(raw.size()));
    }
    fs::rename(tmp, path);
}

}  // namespace vbg
