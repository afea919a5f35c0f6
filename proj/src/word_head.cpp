#include "vbg/word_head.hpp"

#include <cmath>
#include <stdexcept>

namespace vbg {

ClassWeights enet_weights(const std::vector<double>& priors, double k) {
    if (k <= 1.0) throw std::invalid_argument("enet_weights: k must be > 1");
    ClassWeights cw;
    cw.weights.reserve(priors.size());
    for (double p : priors) {
        if (p < 0.0 || p > 1.0) throw std::invalid_argument("enet_weights: prior outside [0,1]");
        cw.weights.push_back(1.0 / std::log(k + p));
    }
    return cw;
}

void word_head_init(ParamStore& store, const WordHeadConfig& cfg, std::mt19937_64& rng) {
    const int c = cfg.fpn_channels, r = cfg.roi_size;
    auto add_conv = [&](const std::string& name, int out_c, int in_c, int k) {
        store.add(name + ".w", {out_c, in_c, k, k});
        store.init_normal(name + ".w", rng, std::sqrt(2.0 / (in_c * k * k)));
        store.add(name + ".b", {out_c});
    };
    auto add_fc = [&](const std::string& name, int in_dim, int out_dim) {
        store.add(name + ".w", {in_dim, out_dim});
        store.init_normal(name + ".w", rng, std::sqrt(2.0 / in_dim));
        store.add(name + ".b", {out_dim});
    };
    add_conv("word_head.conv1", c, c, 3);
    add_conv("word_head.conv2", c, c, 3);
    add_fc("word_head.fc", c * r * r, cfg.fc_dim);
    add_fc("word_head.fuse", cfg.fc_dim + cfg.embed_dim, cfg.fc_dim);
    if (cfg.use_binary_head) add_fc("word_head.cls_bin", cfg.fc_dim, 2);
    add_fc("word_head.cls_multi", cfg.fc_dim, cfg.num_labels);
}

Var roi_word_feature(const Var& p_fuse, const BoundingBox& bbox, int stride,
                     const WordHeadConfig& cfg) {
    const int fh = p_fuse->value.dim(1), fw = p_fuse->value.dim(2);
    RoiBox box{bbox.x_min / stride, bbox.y_min / stride, bbox.x_max / stride,
               bbox.y_max / stride};
    // Expand degenerate extents to one feature pixel, centered.
    if (box.x1 - box.x0 < 1.0) {
        const double cx = 0.5 * (box.x0 + box.x1);
        box.x0 = cx - 0.5;
        box.x1 = cx + 0.5;
    }
    if (box.y1 - box.y0 < 1.0) {
        const double cy = 0.5 * (box.y0 + box.y1);
        box.y0 = cy - 0.5;
        box.y1 = cy + 0.5;
    }
    // Keep the box inside the map.
    const double ww = box.x1 - box.x0, hh = box.y1 - box.y0;
    if (box.x0 < 0) { box.x0 = 0; box.x1 = std::min<double>(ww, fw); }
    if (box.y0 < 0) { box.y0 = 0; box.y1 = std::min<double>(hh, fh); }
    if (box.x1 > fw) { box.x1 = fw; box.x0 = std::max(0.0, fw - ww); }
    if (box.y1 > fh) { box.y1 = fh; box.y0 = std::max(0.0, fh - hh); }
    return roi_align_v(p_fuse, box, cfg.roi_size, cfg.roi_size);
}

Var late_fuse_words(const Var& p_fuse, const Var& word_embeddings, const Document& doc,
                    int stride, ParamContext& params, const WordHeadConfig& cfg,
                    std::mt19937_64& rng, bool training) {
    const int n = static_cast<int>(doc.words.size());
    if (n == 0) throw std::invalid_argument("late_fuse: empty document");
    if (word_embeddings->value.dim(0) != n)
        throw std::invalid_argument("late_fuse: embedding count != word count");
    const int c = cfg.fpn_channels, r = cfg.roi_size;

    std::vector<Var> rows;
    rows.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Var xi = roi_word_feature(p_fuse, doc.words[static_cast<std::size_t>(i)].bbox, stride, cfg);
        xi = relu(conv2d(xi, params["word_head.conv1.w"], params["word_head.conv1.b"], 1, 1));
        xi = relu(conv2d(xi, params["word_head.conv2.w"], params["word_head.conv2.b"], 1, 1));
        Var flat = reshape(xi, {1, c * r * r});
        Var fc = add_rowvec(matmul_v(flat, params["word_head.fc.w"]), params["word_head.fc.b"]);
        rows.push_back(fc);
    }
    Var x = vstack(rows);                       // {N, fc_dim}
    x = concat_cols(x, word_embeddings);        // skip connection: {N, fc_dim + d}
    x = add_rowvec(matmul_v(x, params["word_head.fuse.w"]), params["word_head.fuse.b"]);
    return dropout(x, cfg.dropout_rate, rng, training);
}

Var linear_head_logits(const Var& fused_features, ParamContext& params) {
    return add_rowvec(matmul_v(fused_features, params["word_head.cls_multi.w"]),
                      params["word_head.cls_multi.b"]);
}

LinearHeadOutput linear_head_loss(const Var& fused_features, const std::vector<int>& gold_labels,
                                  const ClassWeights& multi_weights,
                                  const ClassWeights& binary_weights, ParamContext& params,
                                  const WordHeadConfig& cfg) {
    const int n = fused_features->value.dim(0);
    if (n == 0) throw std::invalid_argument("linear_head_loss: empty word list");
    if (static_cast<int>(gold_labels.size()) != n)
        throw std::invalid_argument("linear_head_loss: label count mismatch");
    const int num_fields = cfg.num_labels - 1;

    LinearHeadOutput out;
    out.logits_multi = linear_head_logits(fused_features, params);
    out.loss_word2 = weighted_ce_mean(out.logits_multi, gold_labels, multi_weights.weights);
    if (cfg.use_binary_head) {
        out.logits_binary = add_rowvec(matmul_v(fused_features, params["word_head.cls_bin.w"]),
                                       params["word_head.cls_bin.b"]);
        std::vector<int> y1(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            y1[static_cast<std::size_t>(i)] = gold_labels[static_cast<std::size_t>(i)] < num_fields ? 1 : 0;
        out.loss_word1 = weighted_ce_mean(out.logits_binary, y1, binary_weights.weights);
        out.loss_word = add(out.loss_word1, out.loss_word2);
    } else {
        out.loss_word = out.loss_word2;
    }
    return out;
}

}  // namespace vbg
