#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vbg/tensor.hpp"

namespace vbg {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BoundingBox {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    bool contains(double px, double py) const {
        return x_min <= px && px <= x_max && y_min <= py && py <= y_max;
    }
    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
};

struct LabelSet {
    std::vector<std::string> names;          // the C interesting field names
    std::vector<double> label_priors;        // C+1 entries when populated

    int num_fields() const { return static_cast<int>(names.size()); }
    int other_label() const { return num_fields(); }
    int num_labels() const { return num_fields() + 1; }
    // Returns the label id for `name`; "other" maps to C.
    int id_of(const std::string& name) const;
    std::string name_of(int label) const;
};

struct Word {
    std::string text;
    BoundingBox bbox;
    int label = 0;  // in {0..C}, C = other
};

struct FieldAnnotation {
    int label = 0;  // < C
    std::string text;
};

struct Document {
    std::string id;
    int width = 0, height = 0;
    Tensor image;  // {1,H,W}, values in [0,1]
    std::vector<Word> words;
    std::vector<FieldAnnotation> fields;

    void validate(const LabelSet& labels) const;
};

// Pixel class ids for the coarse mask.
enum CoarseClass : int { kCoarseInteresting = 0, kCoarseOther = 1, kCoarseBackground = 2 };

struct PixelMasks {
    int height = 0, width = 0;   // downsampled dims
    std::vector<int> coarse;     // {0,1,2}
    std::vector<int> fine;       // {0..C}, background = C+1
    int background_fine = 0;     // the sentinel value used in `fine`
};

// Last-writer-wins owner index per downsampled cell; -1 for background.
// Cell (x,y) is owned by the last word whose bbox contains (x*stride, y*stride).
std::vector<int> cell_owners(const Document& doc, int stride, int grid_h, int grid_w);

inline int grid_dim(int image_dim, int stride) { return (image_dim + stride - 1) / stride; }

Document load_document(const std::string& path, const LabelSet& labels);
void save_document(const Document& doc, const LabelSet& labels, const std::string& path,
                   const std::string& image_path = "");

Document rescale_document(const Document& doc, int shorter_side, int max_longer_side);
PixelMasks rasterize_masks(const Document& doc, int stride, const LabelSet& labels);

// PGM (P5) grayscale image I/O; values mapped to [0,1].
Tensor read_pgm(const std::string& path);
void write_pgm(const Tensor& image, const std::string& path);

// Bilinear resize of a {1,H,W} image.
Tensor resize_bilinear(const Tensor& image, int new_h, int new_w);

}  // namespace vbg
