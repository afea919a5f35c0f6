#include "vbg/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace vbg {

namespace {

std::string stage_key(int stage, int block, const std::string& suffix) {
    return "backbone.stage" + std::to_string(stage) + ".block" + std::to_string(block) + "." +
           suffix;
}

void add_conv(ParamStore& store, const std::string& name, int out_c, int in_c, int k,
              std::mt19937_64& rng) {
    store.add(name + ".w", {out_c, in_c, k, k});
    store.init_normal(name + ".w", rng, std::sqrt(2.0 / (in_c * k * k)));
    store.add(name + ".b", {out_c});
}

Var conv(ParamContext& params, const std::string& name, const Var& x, int stride, int pad) {
    return conv2d(x, params[name + ".w"], params[name + ".b"], stride, pad);
}

}  // namespace

void backbone_init(ParamStore& store, const BackboneConfig& cfg, std::mt19937_64& rng) {
    if (cfg.stage_channels.size() != 4)
        throw std::invalid_argument("backbone: need 4 stage channel counts");
    if (cfg.fusion_stride != 4 && cfg.fusion_stride != 8)
        throw std::invalid_argument("backbone: fusion stride must be 4 or 8");
    const auto& ch = cfg.stage_channels;
    add_conv(store, "backbone.stem.conv1", ch[0], 1, 3, rng);
    add_conv(store, "backbone.stem.conv2", ch[0], ch[0], 3, rng);
    for (int s = 0; s < 4; ++s) {
        const int in_c = s == 0 ? ch[0] : ch[static_cast<std::size_t>(s - 1)];
        const int out_c = ch[static_cast<std::size_t>(s)];
        for (int b = 0; b < cfg.blocks_per_stage; ++b) {
            const int block_in = b == 0 ? in_c : out_c;
            add_conv(store, stage_key(s + 1, b, "conv1"), out_c, block_in, 3, rng);
            add_conv(store, stage_key(s + 1, b, "conv2"), out_c, out_c, 3, rng);
            if (block_in != out_c || (s > 0 && b == 0))
                add_conv(store, stage_key(s + 1, b, "proj"), out_c, block_in, 1, rng);
        }
        add_conv(store, "backbone.fpn.lateral" + std::to_string(s + 1), cfg.fpn_channels, out_c,
                 1, rng);
    }
    add_conv(store, "backbone.fpn.out", cfg.fpn_channels, cfg.fpn_channels, 3, rng);
    const int fusion_ch = cfg.fusion_stride == 4 ? ch[0] : ch[1];
    add_conv(store, "fusion.proj", fusion_ch, cfg.embed_dim, 1, rng);
}

Var build_bertgrid(const Var& word_embeddings, const Document& doc, int stride) {
    if (stride < 1) throw std::invalid_argument("build_bertgrid: stride must be >= 1");
    const int gh = grid_dim(doc.height, stride), gw = grid_dim(doc.width, stride);
    const int n = word_embeddings ? word_embeddings->value.dim(0) : 0;
    if (n != static_cast<int>(doc.words.size()))
        throw std::invalid_argument("build_bertgrid: embedding count != word count");
    const std::vector<int> owners = cell_owners(doc, stride, gh, gw);
    if (n == 0) {
        // No words: all-zero grid with a declared width of 0 channels would be
        // useless downstream; callers skip fusion instead.
        throw std::invalid_argument("build_bertgrid: empty document");
    }
    return scatter_grid(word_embeddings, owners, gh, gw);
}

Tensor reflect_pad(const Tensor& image, int new_h, int new_w) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    auto mirror = [](int i, int n) {
        // reflect-101 indexing, defined for pads up to n-1
        if (i < n) return i;
        int j = 2 * n - 2 - i;
        return std::max(0, std::min(j, n - 1));
    };
    Tensor out({c, new_h, new_w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < new_h; ++y)
            for (int x = 0; x < new_w; ++x)
                out.at(ci, y, x) = image.at(ci, mirror(y, h), mirror(x, w));
    return out;
}

namespace {

Var residual_block(ParamContext& params, const Var& x, int stage, int block, int stride,
                   bool has_proj) {
    Var y = relu(conv(params, stage_key(stage, block, "conv1"), x, stride, 1));
    y = conv(params, stage_key(stage, block, "conv2"), y, 1, 1);
    Var shortcut = has_proj ? conv(params, stage_key(stage, block, "proj"), x, stride, 0) : x;
    return relu(add(shortcut, y));
}

}  // namespace

BackboneMaps backbone_forward(const Tensor& image, const Var& grid, ParamContext& params,
                              const BackboneConfig& cfg) {
    if (image.rank() != 3) throw std::invalid_argument("backbone: image must be {C,H,W}");
    const int h = image.dim(1), w = image.dim(2);
    const int hp = (h + 31) / 32 * 32, wp = (w + 31) / 32 * 32;
    Var x = make_const(hp == h && wp == w ? image : reflect_pad(image, hp, wp));

    x = relu(conv(params, "backbone.stem.conv1", x, 2, 1));
    x = relu(conv(params, "backbone.stem.conv2", x, 2, 1));

    auto run_stage = [&](Var in, int stage) {
        Var out = in;
        for (int b = 0; b < cfg.blocks_per_stage; ++b) {
            const int stride = (stage > 1 && b == 0) ? 2 : 1;
            const bool proj = params.has(stage_key(stage, b, "proj.w"));
            out = residual_block(params, out, stage, b, stride, proj);
        }
        return out;
    };

    auto fuse_into = [&](Var feat, int stage_stride) {
        if (!grid) return feat;
        if (cfg.fusion_stride != stage_stride) return feat;
        const int gd = grid->value.dim(0);
        if (gd != cfg.embed_dim)
            throw std::invalid_argument("early_fuse: grid width != configured embed_dim");
        Var proj = conv2d(pad_hw(grid, feat->value.dim(1), feat->value.dim(2)),
                          params["fusion.proj.w"], params["fusion.proj.b"], 1, 0);
        return add(feat, proj);
    };

    Var c1 = run_stage(x, 1);           // stride 4
    c1 = fuse_into(c1, 4);
    Var c2 = run_stage(c1, 2);          // stride 8
    c2 = fuse_into(c2, 8);
    Var c3 = run_stage(c2, 3);          // stride 16
    Var c4 = run_stage(c3, 4);          // stride 32

    Var p4 = conv(params, "backbone.fpn.lateral4", c4, 1, 0);
    Var p3 = add(conv(params, "backbone.fpn.lateral3", c3, 1, 0), upsample2x(p4));
    Var p2 = add(conv(params, "backbone.fpn.lateral2", c2, 1, 0), upsample2x(p3));
    Var p1 = add(conv(params, "backbone.fpn.lateral1", c1, 1, 0), upsample2x(p2));
    Var fused = conv(params, "backbone.fpn.out", p1, 1, 1);

    BackboneMaps maps;
    maps.s4 = crop_hw(c1, grid_dim(h, 4), grid_dim(w, 4));
    maps.s8 = crop_hw(c2, grid_dim(h, 8), grid_dim(w, 8));
    maps.s16 = crop_hw(c3, grid_dim(h, 16), grid_dim(w, 16));
    maps.s32 = crop_hw(c4, grid_dim(h, 32), grid_dim(w, 32));
    maps.fused = crop_hw(fused, grid_dim(h, 4), grid_dim(w, 4));
    return maps;
}

}  // namespace vbg
