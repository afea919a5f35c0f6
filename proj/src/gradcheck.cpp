#include "vbg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "vbg/crf.hpp"
#include "vbg/model.hpp"
#include "vbg/seg_head.hpp"
#include "vbg/synthetic.hpp"
#include "vbg/word_head.hpp"

namespace vbg {
namespace {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

using LossFn = std::function<Var(ParamContext&)>;

double rel_err(double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-4});
}

GradCheckResult check(const std::string& name, ParamStore& store,
                      const std::vector<std::string>& param_names, const LossFn& loss,
                      int max_coords, std::mt19937_64& rng) {
    ParamContext ctx(store);
    Var l = loss(ctx);
    backward(l);

    GradCheckResult res;
    res.name = name;
    for (const std::string& pn : param_names) {
        Tensor analytic = ctx.grad_of(pn);
        Tensor& p = store.at(pn);
        if (analytic.empty()) analytic = Tensor::zeros_like(p);  // unused -> zero grad

        std::vector<std::int64_t> coords;
        if (p.numel() <= max_coords) {
            for (std::int64_t i = 0; i < p.numel(); ++i) coords.push_back(i);
        } else {
            std::uniform_int_distribution<std::int64_t> dist(0, p.numel() - 1);
            while (static_cast<int>(coords.size()) < max_coords) {
                std::int64_t c = dist(rng);
                if (std::find(coords.begin(), coords.end(), c) == coords.end())
                    coords.push_back(c);
            }
        }
        for (std::int64_t c : coords) {
            const double orig = p[c];
            p[c] = orig + kStep;
            ParamContext hi(store, /*requires_grad=*/false);
            const double f_hi = loss(hi)->value[0];
            p[c] = orig - kStep;
            ParamContext lo(store, /*requires_grad=*/false);
            const double f_lo = loss(lo)->value[0];
            p[c] = orig;
            const double numeric = (f_hi - f_lo) / (2.0 * kStep);
            res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic[c], numeric));
        }
    }
    res.pass = res.max_rel_err < kTol;
    return res;
}

GradCheckResult check_crf_emissions(std::mt19937_64& rng) {
    const int n = 6, labels = 3;
    ParamStore store;
    store.add("E", {n, labels});
    store.init_uniform("E", rng, -2.0, 2.0);
    store.add("T", {labels, labels});
    store.init_uniform("T", rng, -1.0, 1.0);
    std::vector<int> y;
    std::uniform_int_distribution<int> lab(0, labels - 1);
    for (int i = 0; i < n; ++i) y.push_back(lab(rng));
    LossFn loss = [y](ParamContext& ctx) { return crf_nll(ctx["E"], ctx["T"], y); };
    return check("crf_nll wrt E,T", store, {"E", "T"}, loss, 64, rng);
}

GradCheckResult check_crf_bilstm(std::mt19937_64& rng) {
    CrfHeadConfig cfg;
    cfg.input_dim = 5;
    cfg.hidden_dim = 4;
    cfg.num_labels = 3;
    ParamStore store;
    crf_head_init(store, cfg, rng);
    store.add("features", {4, cfg.input_dim});
    store.init_uniform("features", rng, -1.0, 1.0);
    std::vector<int> y = {0, 2, 1, 0};
    LossFn loss = [cfg, y](ParamContext& ctx) {
        return crf_nll(bilstm_emissions(ctx["features"], ctx, cfg), ctx["crf.transitions"], y);
    };
    std::vector<std::string> names = {"features",        "crf.bilstm.fwd.wx", "crf.bilstm.fwd.wh",
                                      "crf.bilstm.fwd.b", "crf.bilstm.bwd.wx", "crf.bilstm.bwd.wh",
                                      "crf.bilstm.bwd.b", "crf.proj.w",        "crf.proj.b",
                                      "crf.transitions"};
    return check("crf_nll wrt BiLSTM params", store, names, loss, 10, rng);
}

Document three_word_doc() {
    Document doc;
    doc.id = "probe";
    doc.width = 32;
    doc.height = 32;
    doc.image = Tensor({1, 32, 32}, 1.0);
    const char* texts[3] = {"aa", "bb", "cc"};
    const double boxes[3][4] = {{2, 2, 13, 9}, {16, 2, 29, 9}, {4, 14, 27, 23}};
    for (int i = 0; i < 3; ++i) {
        Word w;
        w.text = texts[i];
        w.bbox = {boxes[i][0], boxes[i][1], boxes[i][2], boxes[i][3]};
        w.label = i == 2 ? 2 : i;  // last word "other"
        doc.words.push_back(w);
    }
    return doc;
}

GradCheckResult check_linear_head(std::mt19937_64& rng) {
    WordHeadConfig cfg;
    cfg.fpn_channels = 4;
    cfg.fc_dim = 6;
    cfg.embed_dim = 3;
    cfg.num_labels = 3;
    cfg.roi_size = 2;
    cfg.dropout_rate = 0.0;
    ParamStore store;
    word_head_init(store, cfg, rng);
    store.add("p_fuse", {cfg.fpn_channels, 8, 8});
    store.init_uniform("p_fuse", rng, -1.0, 1.0);
    store.add("embeddings", {3, cfg.embed_dim});
    store.init_uniform("embeddings", rng, -1.0, 1.0);

    Document doc = three_word_doc();
    std::vector<int> gold = {0, 1, 2};
    ClassWeights multi = enet_weights({0.2, 0.2, 0.6});
    ClassWeights binary = enet_weights({0.6, 0.4});
    LossFn loss = [=](ParamContext& ctx) {
        std::mt19937_64 unused(0);  // dropout rate 0
        Var fused = late_fuse_words(ctx["p_fuse"], ctx["embeddings"], doc, 4, ctx, cfg, unused,
                                    true);
        return linear_head_loss(fused, gold, multi, binary, ctx, cfg).loss_word;
    };
    std::vector<std::string> names = {"p_fuse",
                                      "embeddings",
                                      "word_head.conv1.w",
                                      "word_head.conv1.b",
                                      "word_head.conv2.w",
                                      "word_head.conv2.b",
                                      "word_head.fc.w",
                                      "word_head.fc.b",
                                      "word_head.fuse.w",
                                      "word_head.fuse.b",
                                      "word_head.cls_bin.w",
                                      "word_head.cls_bin.b",
                                      "word_head.cls_multi.w",
                                      "word_head.cls_multi.b"};
    return check("linear head loss wrt head params", store, names, loss, 8, rng);
}

GradCheckResult check_seg_loss(std::mt19937_64& rng) {
    SegHeadConfig cfg;
    cfg.fpn_channels = 4;
    cfg.num_labels = 3;
    ParamStore store;
    seg_head_init(store, cfg, rng);
    store.add("p_fuse", {cfg.fpn_channels, 6, 6});
    store.init_uniform("p_fuse", rng, -1.0, 1.0);

    PixelMasks masks;
    masks.height = 6;
    masks.width = 6;
    masks.background_fine = cfg.num_labels;
    std::uniform_int_distribution<int> coarse(0, 2);
    std::uniform_int_distribution<int> fine(0, cfg.num_labels - 1);
    for (int i = 0; i < 36; ++i) {
        const int c = coarse(rng);
        masks.coarse.push_back(c);
        masks.fine.push_back(c == kCoarseBackground ? masks.background_fine : fine(rng));
    }
    ClassWeights cw = enet_weights({0.3, 0.3, 0.4});
    ClassWeights fw = enet_weights({0.3, 0.3, 0.4});
    LossFn loss = [=](ParamContext& ctx) {
        return seg_loss(seg_forward(ctx["p_fuse"], ctx, cfg), masks, cw, fw, cfg);
    };
    std::vector<std::string> names = {"p_fuse",
                                      "seg_head.conv1.w",
                                      "seg_head.conv1.b",
                                      "seg_head.conv2.w",
                                      "seg_head.conv2.b",
                                      "seg_head.cls_coarse.w",
                                      "seg_head.cls_coarse.b",
                                      "seg_head.cls_fine.w",
                                      "seg_head.cls_fine.b"};
    return check("seg loss wrt seg params", store, names, loss, 8, rng);
}

GradCheckResult check_end_to_end(std::mt19937_64& rng, HeadKind head) {
    SyntheticSpec spec;
    spec.min_width = spec.max_width = 160;
    spec.min_height = spec.max_height = 96;
    spec.min_filler_words = 2;
    spec.max_filler_words = 2;
    spec.font_height = 8;
    spec.char_width = 3;
    spec.seed = 7;
    Document doc = generate_synthetic(spec, 1).at(0);
    LabelSet labels = spec.label_set();

    std::vector<std::string> corpus;
    for (const Word& w : doc.words) corpus.push_back(w.text);
    Vocabulary vocab = Vocabulary::build(corpus, 200);

    ModelConfig cfg;
    cfg.head_kind = head;
    cfg.encoder.embed_dim = 8;
    cfg.encoder.num_layers = 1;
    cfg.encoder.num_heads = 2;
    cfg.encoder.ff_mult = 2;
    cfg.backbone.stage_channels = {4, 4, 8, 8};
    cfg.backbone.blocks_per_stage = 1;
    cfg.backbone.fpn_channels = 8;
    cfg.word_head.fc_dim = 12;
    cfg.word_head.roi_size = 3;
    cfg.word_head.dropout_rate = 0.0;
    cfg.crf_head.hidden_dim = 6;

    Model model(cfg, labels, vocab);
    model.init(rng);

    LossFn loss = [&](ParamContext& ctx) {
        std::mt19937_64 unused(0);  // dropout rate 0
        return model.forward_loss(doc, ctx, unused, true).total;
    };
    std::vector<std::string> names = {"encoder.embed",
                                      "encoder.pos",
                                      "encoder.layer0.attn.wq",
                                      "encoder.layer0.ff.w1",
                                      "backbone.stem.conv1.w",
                                      "backbone.stage1.block0.conv1.w",
                                      "backbone.fpn.out.w",
                                      "fusion.proj.w",
                                      "word_head.fc.w",
                                      "seg_head.cls_fine.w"};
    if (head == HeadKind::kLinear)
        names.push_back("word_head.cls_multi.w");
    else {
        names.push_back("crf.transitions");
        names.push_back("crf.proj.w");
    }
    const std::string label =
        std::string("end-to-end total loss (") + head_kind_to_string(head) + " head)";
    return check(label, model.params(), names, loss, 4, rng);
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(unsigned long long seed) {
    std::mt19937_64 rng(seed);
    std::vector<GradCheckResult> out;
    out.push_back(check_crf_emissions(rng));
    out.push_back(check_crf_bilstm(rng));
    out.push_back(check_linear_head(rng));
    out.push_back(check_seg_loss(rng));
    out.push_back(check_end_to_end(rng, HeadKind::kLinear));
    out.push_back(check_end_to_end(rng, HeadKind::kBilstmCrf));
    return out;
}

}  // namespace vbg
