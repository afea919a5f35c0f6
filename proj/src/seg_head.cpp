#include "vbg/seg_head.hpp"

#include <cmath>
#include <stdexcept>

namespace vbg {

void seg_head_init(ParamStore& store, const SegHeadConfig& cfg, std::mt19937_64& rng) {
    const int c = cfg.fpn_channels;
    auto add_conv = [&](const std::string& name, int out_c, int in_c, int k) {
        store.add(name + ".w", {out_c, in_c, k, k});
        store.init_normal(name + ".w", rng, std::sqrt(2.0 / (in_c * k * k)));
        store.add(name + ".b", {out_c});
    };
    add_conv("seg_head.conv1", c, c, 3);
    add_conv("seg_head.conv2", c, c, 3);
    add_conv("seg_head.cls_coarse", 3, c, 1);
    add_conv("seg_head.cls_fine", cfg.num_labels, c, 1);
}

SegLogits seg_forward(const Var& p_fuse, ParamContext& params, const SegHeadConfig&) {
    if (!p_fuse || p_fuse->value.rank() != 3)
        throw std::invalid_argument("seg_forward: bad feature map");
    Var x = relu(conv2d(p_fuse, params["seg_head.conv1.w"], params["seg_head.conv1.b"], 1, 1));
    x = relu(conv2d(x, params["seg_head.conv2.w"], params["seg_head.conv2.b"], 1, 1));
    SegLogits out;
    out.coarse = conv2d(x, params["seg_head.cls_coarse.w"], params["seg_head.cls_coarse.b"], 1, 0);
    out.fine = conv2d(x, params["seg_head.cls_fine.w"], params["seg_head.cls_fine.b"], 1, 0);
    return out;
}

Var seg_loss(const SegLogits& logits, const PixelMasks& masks, const ClassWeights& coarse_weights,
             const ClassWeights& fine_weights, const SegHeadConfig& cfg) {
    const int h = logits.coarse->value.dim(1), w = logits.coarse->value.dim(2);
    if (h != masks.height || w != masks.width)
        throw std::invalid_argument("seg_loss: logits and masks not aligned");
    const int num_fields = cfg.num_labels - 1;

    Var coarse_rows = chw_to_rows(logits.coarse);  // {HW, 3}
    Var loss = weighted_ce_mean(coarse_rows, masks.coarse, coarse_weights.weights);

    std::vector<int> fine_rows_idx;
    std::vector<int> fine_labels;
    for (int i = 0; i < h * w; ++i) {
        int f = masks.fine[static_cast<std::size_t>(i)];
        if (f == masks.background_fine) {
            if (!cfg.include_background_in_fine) continue;
            f = num_fields;  // map background to "other"
        }
        fine_rows_idx.push_back(i);
        fine_labels.push_back(f);
    }
    if (!fine_rows_idx.empty()) {
        Var fine_rows = select_rows(chw_to_rows(logits.fine), fine_rows_idx);
        loss = add(loss, weighted_ce_mean(fine_rows, fine_labels, fine_weights.weights));
    }
    return loss;
}

}  // namespace vbg
