#pragma once

#include <random>

#include "vbg/document.hpp"
#include "vbg/params.hpp"

namespace vbg {

struct WordHeadConfig {
    int fpn_channels = 256;
    int fc_dim = 1024;
    int embed_dim = 64;     // d
    int num_labels = 0;     // C+1
    int roi_size = 7;
    double dropout_rate = 0.1;
    bool use_binary_head = true;  // the auxiliary 2-way classifier
};

struct ClassWeights {
    std::vector<double> weights;
};

// w_c = 1 / ln(k + p_c); throws if k <= 1.
ClassWeights enet_weights(const std::vector<double>& priors, double k = 1.02);

void word_head_init(ParamStore& store, const WordHeadConfig& cfg, std::mt19937_64& rng);

// ROIAlign over P_fuse for a word box given in image coordinates. Degenerate
// boxes are expanded to at least one feature pixel, centered.
Var roi_word_feature(const Var& p_fuse, const BoundingBox& bbox, int stride,
                     const WordHeadConfig& cfg);

// Fused per-word features for all words: {N, fc_dim}. Applies the conv+FC
// trunk, concatenates the embedding skip connection and the fusion FC, then
// dropout (training mode only).
Var late_fuse_words(const Var& p_fuse, const Var& word_embeddings, const Document& doc,
                    int stride, ParamContext& params, const WordHeadConfig& cfg,
                    std::mt19937_64& rng, bool training);

struct LinearHeadOutput {
    Var loss_word1;  // binary head (empty when disabled)
    Var loss_word2;  // multiclass head
    Var loss_word;   // sum
    Var logits_binary;
    Var logits_multi;
};

LinearHeadOutput linear_head_loss(const Var& fused_features, const std::vector<int>& gold_labels,
                                  const ClassWeights& multi_weights,
                                  const ClassWeights& binary_weights, ParamContext& params,
                                  const WordHeadConfig& cfg);

// Inference logits of the multiclass classifier only.
Var linear_head_logits(const Var& fused_features, ParamContext& params);

}  // namespace vbg
