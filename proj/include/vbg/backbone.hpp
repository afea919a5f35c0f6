#pragma once

#include <random>

#include "vbg/document.hpp"
#include "vbg/params.hpp"

namespace vbg {

struct BackboneConfig {
    std::vector<int> stage_channels = {32, 64, 128, 256};  // strides 4,8,16,32
    int blocks_per_stage = 2;
    int fpn_channels = 256;
    int fusion_stride = 4;  // 4 or 8; which stage the BERTgrid is added to
    int embed_dim = 64;     // d, width of the fusion projection input
};

struct BackboneMaps {
    Var s4, s8, s16, s32;  // per-stage outputs, cropped to ceil(H/s) x ceil(W/s)
    Var fused;             // FPN-merged stride-4 map (P_fuse)
};

void backbone_init(ParamStore& store, const BackboneConfig& cfg, std::mt19937_64& rng);

// BERTgrid: word embeddings scattered into the cells their bbox covers,
// stored {d, ceil(H/S), ceil(W/S)}. Last writer in reading order wins.
Var build_bertgrid(const Var& word_embeddings, const Document& doc, int stride);

// Runs the residual backbone + FPN over the image. If `grid` is non-null it
// is projected by a learned 1x1 conv and added to the activations of the
// configured fusion stage. Image is reflect-padded to multiples of 32 and the
// returned maps are cropped back.
BackboneMaps backbone_forward(const Tensor& image, const Var& grid, ParamContext& params,
                              const BackboneConfig& cfg);

inline BackboneMaps backbone_forward(const Tensor& image, ParamContext& params,
                                     const BackboneConfig& cfg) {
    return backbone_forward(image, Var(), params, cfg);
}

// Reflect-pad a {C,H,W} tensor on the bottom/right to the given size.
Tensor reflect_pad(const Tensor& image, int new_h, int new_w);

}  // namespace vbg
