#pragma once

#include <random>

#include "vbg/document.hpp"
#include "vbg/params.hpp"
#include "vbg/word_head.hpp"

namespace vbg {

struct SegHeadConfig {
    int fpn_channels = 256;
    int num_labels = 0;  // C+1 for the fine classifier
    bool include_background_in_fine = false;
};

void seg_head_init(ParamStore& store, const SegHeadConfig& cfg, std::mt19937_64& rng);

struct SegLogits {
    Var coarse;  // {3, H/4, W/4}
    Var fine;    // {C+1, H/4, W/4}
};

SegLogits seg_forward(const Var& p_fuse, ParamContext& params, const SegHeadConfig& cfg);

// Coarse term averages over all pixels; the fine term averages over in-box
// pixels only (background excluded) and contributes 0 when there are none.
Var seg_loss(const SegLogits& logits, const PixelMasks& masks, const ClassWeights& coarse_weights,
             const ClassWeights& fine_weights, const SegHeadConfig& cfg);

}  // namespace vbg
