#include <cmath>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "vbg/seg_head.hpp"
#include "vbg/word_head.hpp"

using namespace vbg;

namespace {

WordHeadConfig tiny_word_cfg() {
    WordHeadConfig cfg;
    cfg.fpn_channels = 2;
    cfg.fc_dim = 4;
    cfg.embed_dim = 2;
    cfg.num_labels = 3;
    cfg.roi_size = 2;
    cfg.dropout_rate = 0.0;
    return cfg;
}

Document two_word_doc() {
    Document doc;
    doc.id = "h";
    doc.width = 40;
    doc.height = 24;
    doc.image = Tensor({1, 24, 40}, 1.0);
    doc.words.push_back({"aa", {2, 2, 14, 8}, 0});
    doc.words.push_back({"bb", {18, 10, 36, 20}, 1});
    return doc;
}

}  // namespace

TEST_CASE("class weights follow 1/ln(k + p)") {
    ClassWeights w = enet_weights({0.0, 0.5, 1.0});
    CHECK(std::abs(w.weights[0] - 1.0 / std::log(1.02)) < 1e-9);
    CHECK(std::abs(w.weights[1] - 1.0 / std::log(1.52)) < 1e-9);
    CHECK(std::abs(w.weights[2] - 1.0 / std::log(2.02)) < 1e-9);

    // strictly decreasing in the prior: rare classes get larger weights
    double prev = 1e300;
    for (int i = 0; i <= 10; ++i) {
        double cur = enet_weights({i / 10.0}).weights[0];
        CHECK(cur < prev);
        prev = cur;
    }

    CHECK_THROWS_AS(enet_weights({0.5}, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(enet_weights({0.5}, 0.3), std::invalid_argument);
    CHECK_THROWS_AS(enet_weights({1.5}), std::invalid_argument);
}

TEST_CASE("degenerate word boxes are expanded, constant maps stay constant") {
    WordHeadConfig cfg = tiny_word_cfg();
    Var p_fuse = make_const(Tensor({2, 6, 10}, 0.7));
    BoundingBox zero_w{8, 4, 8, 4};  // a point
    Var out = roi_word_feature(p_fuse, zero_w, 4, cfg);
    REQUIRE(out->value.shape() == std::vector<int>{2, 2, 2});
    for (std::int64_t i = 0; i < out->value.numel(); ++i)
        CHECK(out->value[i] == doctest::Approx(0.7).epsilon(1e-12));

    // a box hanging past the right edge is shifted back inside
    BoundingBox off{38, 2, 120, 8};
    Var clamped = roi_word_feature(p_fuse, off, 4, cfg);
    for (std::int64_t i = 0; i < clamped->value.numel(); ++i)
        CHECK(std::isfinite(clamped->value[i]));
}

TEST_CASE("late fusion produces one row per word and validates inputs") {
    std::mt19937_64 rng(11);
    WordHeadConfig cfg = tiny_word_cfg();
    ParamStore store;
    word_head_init(store, cfg, rng);
    Document doc = two_word_doc();
    Var p_fuse = make_const(vbg::test::random_tensor({2, 6, 10}, rng));
    Var emb = make_const(vbg::test::random_tensor({2, 2}, rng));

    ParamContext ctx(store, false);
    Var fused = late_fuse_words(p_fuse, emb, doc, 4, ctx, cfg, rng, false);
    CHECK(fused->value.shape() == std::vector<int>{2, cfg.fc_dim});

    Document empty = doc;
    empty.words.clear();
    ParamContext c2(store, false);
    CHECK_THROWS(late_fuse_words(p_fuse, emb, empty, 4, c2, cfg, rng, false));
    Var wrong = make_const(vbg::test::random_tensor({3, 2}, rng));
    ParamContext c3(store, false);
    CHECK_THROWS(late_fuse_words(p_fuse, wrong, doc, 4, c3, cfg, rng, false));
}

TEST_CASE("linear head loss decomposes into binary plus multiclass terms") {
    std::mt19937_64 rng(12);
    WordHeadConfig cfg = tiny_word_cfg();
    ParamStore store;
    word_head_init(store, cfg, rng);
    Var feats = make_const(vbg::test::random_tensor({4, cfg.fc_dim}, rng));
    std::vector<int> gold = {0, 1, 2, 2};
    ClassWeights multi = enet_weights({0.25, 0.25, 0.5});
    ClassWeights bin = enet_weights({0.5, 0.5});

    ParamContext ctx(store, false);
    LinearHeadOutput out = linear_head_loss(feats, gold, multi, bin, ctx, cfg);
    REQUIRE(out.logits_binary);
    CHECK(out.logits_multi->value.shape() == std::vector<int>{4, 3});
    CHECK(out.logits_binary->value.shape() == std::vector<int>{4, 2});
    CHECK(out.loss_word->value[0] ==
          doctest::Approx(out.loss_word1->value[0] + out.loss_word2->value[0]).epsilon(1e-12));
    CHECK(out.loss_word2->value[0] > 0.0);

    WordHeadConfig no_bin = cfg;
    no_bin.use_binary_head = false;
    ParamContext c2(store, false);
    LinearHeadOutput single = linear_head_loss(feats, gold, multi, bin, c2, no_bin);
    CHECK(!single.logits_binary);
    CHECK(single.loss_word->value[0] == doctest::Approx(single.loss_word2->value[0]).epsilon(1e-12));

    ParamContext c3(store, false);
    CHECK_THROWS(linear_head_loss(feats, {0, 1}, multi, bin, c3, cfg));
}

namespace {

SegHeadConfig tiny_seg_cfg() {
    SegHeadConfig cfg;
    cfg.fpn_channels = 3;
    cfg.num_labels = 3;  // two fields + other, background id 3
    return cfg;
}

PixelMasks masks_2x3(const std::vector<int>& coarse, const std::vector<int>& fine) {
    PixelMasks m;
    m.height = 2;
    m.width = 3;
    m.background_fine = 3;
    m.coarse = coarse;
    m.fine = fine;
    return m;
}

}  // namespace

TEST_CASE("segmentation logits have one plane per class") {
    std::mt19937_64 rng(13);
    SegHeadConfig cfg = tiny_seg_cfg();
    ParamStore store;
    seg_head_init(store, cfg, rng);
    Var p_fuse = make_const(vbg::test::random_tensor({3, 2, 3}, rng));
    ParamContext ctx(store, false);
    SegLogits out = seg_forward(p_fuse, ctx, cfg);
    CHECK(out.coarse->value.shape() == std::vector<int>{3, 2, 3});
    CHECK(out.fine->value.shape() == std::vector<int>{3, 2, 3});
}

TEST_CASE("fine segmentation term skips background pixels") {
    std::mt19937_64 rng(14);
    SegHeadConfig cfg = tiny_seg_cfg();
    ParamStore store;
    seg_head_init(store, cfg, rng);
    Var p_fuse = make_const(vbg::test::random_tensor({3, 2, 3}, rng));
    ClassWeights coarse_w = enet_weights({0.3, 0.3, 0.4});
    ClassWeights fine_a = enet_weights({0.2, 0.3, 0.5});
    ClassWeights fine_b = enet_weights({0.9, 0.05, 0.05});

    // all-background fine mask: the fine term must vanish entirely, so the
    // fine weights cannot matter
    PixelMasks bg = masks_2x3({0, 0, 0, 0, 0, 0}, {3, 3, 3, 3, 3, 3});
    ParamContext c1(store, false);
    SegLogits l1 = seg_forward(p_fuse, c1, cfg);
    double with_a = seg_loss(l1, bg, coarse_w, fine_a, cfg)->value[0];
    double with_b = seg_loss(l1, bg, coarse_w, fine_b, cfg)->value[0];
    CHECK(with_a == doctest::Approx(with_b).epsilon(1e-15));

    // with background folded into "other" the fine term reappears
    SegHeadConfig incl = cfg;
    incl.include_background_in_fine = true;
    double folded = seg_loss(l1, bg, coarse_w, fine_a, incl)->value[0];
    CHECK(folded > with_a + 1e-9);

    // mixed mask: only the in-box pixel labels enter the fine average
    PixelMasks mixed = masks_2x3({1, 0, 0, 0, 0, 2}, {0, 3, 3, 3, 3, 2});
    double mixed_a = seg_loss(l1, mixed, coarse_w, fine_a, cfg)->value[0];
    PixelMasks mixed_flip = mixed;
    mixed_flip.fine[0] = 1;  // change an in-box pixel: the loss must move
    double flipped = seg_loss(l1, mixed_flip, coarse_w, fine_a, cfg)->value[0];
    CHECK(mixed_a != doctest::Approx(flipped).epsilon(1e-12));

    PixelMasks bad = mixed;
    bad.width = 4;
    bad.coarse.resize(8, 0);
    bad.fine.resize(8, 3);
    CHECK_THROWS(seg_loss(l1, bad, coarse_w, fine_a, cfg));
}
