#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "vbg/autograd.hpp"
#include "vbg/tensor.hpp"

using namespace vbg;
using test::fd_check;
using test::random_tensor;
using test::rel_err;

TEST_CASE("matmul matches the naive triple loop") {
    std::mt19937_64 rng(1);
    Tensor a = random_tensor({3, 5}, rng), b = random_tensor({5, 4}, rng);
    Tensor c = matmul(a, b);
    REQUIRE(c.shape() == std::vector<int>{3, 4});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) {
            double s = 0;
            for (int k = 0; k < 5; ++k) s += a.at(i, k) * b.at(k, j);
            CHECK(c.at(i, j) == doctest::Approx(s).epsilon(1e-12));
        }
    Tensor tn = matmul_tn(a, c);  // (5x3)·(3x4)
    Tensor nt = matmul_nt(c, b);  // (3x4)·(4x5)
    REQUIRE(tn.shape() == std::vector<int>{5, 4});
    REQUIRE(nt.shape() == std::vector<int>{3, 5});
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += a.at(k, i) * c.at(k, j);
            CHECK(tn.at(i, j) == doctest::Approx(s).epsilon(1e-12));
        }
}

TEST_CASE("elementwise and matmul gradients") {
    std::mt19937_64 rng(2);
    std::vector<Tensor> in = {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
    CHECK(fd_check(in, [](const std::vector<Var>& v) { return mul(add(v[0], v[1]), v[1]); },
                   rng) < 1e-6);

    std::vector<Tensor> mm = {random_tensor({3, 5}, rng), random_tensor({5, 4}, rng)};
    CHECK(fd_check(mm, [](const std::vector<Var>& v) { return matmul_v(v[0], v[1]); }, rng) <
          1e-6);
    std::vector<Tensor> nt = {random_tensor({3, 5}, rng), random_tensor({4, 5}, rng)};
    CHECK(fd_check(nt, [](const std::vector<Var>& v) { return matmul_nt_v(v[0], v[1]); }, rng) <
          1e-6);
    std::vector<Tensor> rv = {random_tensor({3, 4}, rng), random_tensor({4}, rng)};
    CHECK(fd_check(rv, [](const std::vector<Var>& v) { return add_rowvec(v[0], v[1]); }, rng) <
          1e-6);
}

TEST_CASE("activation gradients") {
    std::mt19937_64 rng(3);
    std::vector<Tensor> in = {random_tensor({4, 3}, rng, 0.1, 2.0)};  // away from the relu kink
    CHECK(fd_check(in, [](const std::vector<Var>& v) { return relu(v[0]); }, rng) < 1e-6);
    std::vector<Tensor> s = {random_tensor({4, 3}, rng)};
    CHECK(fd_check(s, [](const std::vector<Var>& v) { return sigmoid_v(v[0]); }, rng) < 1e-6);
    CHECK(fd_check(s, [](const std::vector<Var>& v) { return tanh_v(v[0]); }, rng) < 1e-6);
    CHECK(fd_check(s, [](const std::vector<Var>& v) { return softmax_rows(v[0]); }, rng) < 1e-5);
    std::vector<Tensor> vec = {random_tensor({5}, rng)};
    CHECK(fd_check(vec, [](const std::vector<Var>& v) { return logsumexp_vec(v[0]); }, rng) <
          1e-6);
}

TEST_CASE("relu negative side is exactly dead") {
    Tensor x({2, 2}, {-1.0, -0.5, 0.5, 2.0});
    Var leaf = make_leaf(x, true);
    backward(sum_all(relu(leaf)));
    CHECK(leaf->grad[0] == 0.0);
    CHECK(leaf->grad[1] == 0.0);
    CHECK(leaf->grad[2] == 1.0);
    CHECK(leaf->grad[3] == 1.0);
}

TEST_CASE("layernorm normalizes rows and its gradient checks out") {
    std::mt19937_64 rng(4);
    std::vector<Tensor> in = {random_tensor({3, 6}, rng), random_tensor({6}, rng, 0.5, 1.5),
                              random_tensor({6}, rng)};
    Var out = layernorm(make_const(in[0]), make_const(Tensor({6}, 1.0)),
                        make_const(Tensor({6}, 0.0)));
    for (int i = 0; i < 3; ++i) {
        double mean = 0, var = 0;
        for (int j = 0; j < 6; ++j) mean += out->value.at(i, j);
        mean /= 6;
        for (int j = 0; j < 6; ++j) var += (out->value.at(i, j) - mean) * (out->value.at(i, j) - mean);
        CHECK(std::abs(mean) < 1e-10);
        CHECK(var / 6 == doctest::Approx(1.0).epsilon(1e-3));
    }
    CHECK(fd_check(in,
                   [](const std::vector<Var>& v) { return layernorm(v[0], v[1], v[2]); },
                   rng) < 1e-5);
}

TEST_CASE("weighted cross entropy: value oracle and gradient") {
    std::mt19937_64 rng(5);
    std::vector<Tensor> in = {random_tensor({4, 3}, rng)};
    std::vector<int> labels = {0, 2, 1, 2};
    std::vector<double> w = {1.0, 2.0, 0.5};

    Var loss = weighted_ce_mean(make_const(in[0]), labels, w);
    double expect = 0;
    for (int i = 0; i < 4; ++i) {
        double m = std::max({in[0].at(i, 0), in[0].at(i, 1), in[0].at(i, 2)});
        double z = 0;
        for (int j = 0; j < 3; ++j) z += std::exp(in[0].at(i, j) - m);
        const int y = labels[static_cast<std::size_t>(i)];
        expect += w[static_cast<std::size_t>(y)] * (std::log(z) + m - in[0].at(i, y));
    }
    expect /= 4;  // divides by N, not by the weight sum
    CHECK(loss->value[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(fd_check(in,
                   [&](const std::vector<Var>& v) { return weighted_ce_mean(v[0], labels, w); },
                   rng) < 1e-6);
}

TEST_CASE("shape ops round-trip and differentiate") {
    std::mt19937_64 rng(6);
    std::vector<Tensor> in = {random_tensor({4, 6}, rng)};
    CHECK(fd_check(in, [](const std::vector<Var>& v) { return reshape(v[0], {2, 12}); }, rng) <
          1e-6);
    CHECK(fd_check(in, [](const std::vector<Var>& v) { return select_rows(v[0], {3, 1, 1}); },
                   rng) < 1e-6);
    CHECK(fd_check(in, [](const std::vector<Var>& v) { return slice_cols(v[0], 1, 4); }, rng) <
          1e-6);
    std::vector<Tensor> two = {random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)};
    CHECK(fd_check(two, [](const std::vector<Var>& v) { return concat_cols(v[0], v[1]); }, rng) <
          1e-6);
    std::vector<Tensor> stack = {random_tensor({2, 3}, rng), random_tensor({4, 3}, rng)};
    CHECK(fd_check(stack, [](const std::vector<Var>& v) { return vstack({v[0], v[1]}); }, rng) <
          1e-6);
    std::vector<Tensor> chw = {random_tensor({3, 2, 4}, rng)};
    Var rows = chw_to_rows(make_const(chw[0]));
    REQUIRE(rows->value.shape() == std::vector<int>{8, 3});
    CHECK(rows->value.at(5, 2) == chw[0].at(2, 1, 1));  // pixel (y=1,x=1) is row 6
    CHECK(fd_check(chw, [](const std::vector<Var>& v) { return chw_to_rows(v[0]); }, rng) < 1e-6);
}

TEST_CASE("gradient accumulates when a node is reused") {
    Tensor x({1}, {3.0});
    Var leaf = make_leaf(x, true);
    backward(add(mul(leaf, leaf), leaf));  // d/dx (x^2 + x) = 2x + 1
    CHECK(leaf->grad[0] == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("conv2d matches a naive convolution and differentiates") {
    std::mt19937_64 rng(7);
    const int cin = 2, cout = 3, h = 5, w = 6, k = 3, stride = 2, pad = 1;
    std::vector<Tensor> in = {random_tensor({cin, h, w}, rng),
                              random_tensor({cout, cin, k, k}, rng),
                              random_tensor({cout}, rng)};
    Var out = conv2d(make_const(in[0]), make_const(in[1]), make_const(in[2]), stride, pad);
    const int oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
    REQUIRE(out->value.shape() == std::vector<int>{cout, oh, ow});
    for (int co = 0; co < cout; ++co)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double s = in[2][co];
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            s += in[0].at(ci, iy, ix) * in[1].at(co, ci, ky, kx);
                        }
                CHECK(out->value.at(co, oy, ox) == doctest::Approx(s).epsilon(1e-10));
            }
    CHECK(fd_check(in,
                   [&](const std::vector<Var>& v) {
                       return conv2d(v[0], v[1], v[2], stride, pad);
                   },
                   rng) < 1e-5);
}

TEST_CASE("upsample2x repeats pixels; crop and pad invert each other") {
    std::mt19937_64 rng(8);
    std::vector<Tensor> in = {random_tensor({2, 3, 4}, rng)};
    Var up = upsample2x(make_const(in[0]));
    REQUIRE(up->value.shape() == std::vector<int>{2, 6, 8});
    CHECK(up->value.at(1, 5, 7) == in[0].at(1, 2, 3));
    CHECK(up->value.at(1, 4, 6) == in[0].at(1, 2, 3));
    CHECK(fd_check(in, [](const std::vector<Var>& v) { return upsample2x(v[0]); }, rng) < 1e-6);

    Var padded = pad_hw(make_const(in[0]), 5, 6);
    REQUIRE(padded->value.shape() == std::vector<int>{2, 5, 6});
    CHECK(padded->value.at(0, 4, 5) == 0.0);
    Var back = crop_hw(padded, 3, 4);
    for (std::int64_t i = 0; i < in[0].numel(); ++i) CHECK(back->value[i] == in[0][i]);
    CHECK(fd_check(in,
                   [](const std::vector<Var>& v) { return crop_hw(pad_hw(v[0], 5, 6), 3, 4); },
                   rng) < 1e-6);
}

TEST_CASE("scatter_grid places rows by owner and aggregate_rows averages groups") {
    std::mt19937_64 rng(9);
    std::vector<Tensor> emb = {random_tensor({2, 3}, rng)};
    std::vector<int> owners = {0, -1, 1, 1};  // 2x2 grid
    Var grid = scatter_grid(make_const(emb[0]), owners, 2, 2);
    REQUIRE(grid->value.shape() == std::vector<int>{3, 2, 2});
    for (int d = 0; d < 3; ++d) {
        CHECK(grid->value.at(d, 0, 0) == emb[0].at(0, d));
        CHECK(grid->value.at(d, 0, 1) == 0.0);
        CHECK(grid->value.at(d, 1, 0) == emb[0].at(1, d));
        CHECK(grid->value.at(d, 1, 1) == emb[0].at(1, d));
    }
    CHECK(fd_check(emb,
                   [&](const std::vector<Var>& v) { return scatter_grid(v[0], owners, 2, 2); },
                   rng) < 1e-6);

    std::vector<Tensor> tok = {random_tensor({5, 2}, rng)};
    std::vector<int> word_index = {0, 0, 1, 2, 2};
    Var agg = aggregate_rows(make_const(tok[0]), word_index, 3);
    REQUIRE(agg->value.shape() == std::vector<int>{3, 2});
    CHECK(agg->value.at(0, 0) ==
          doctest::Approx((tok[0].at(0, 0) + tok[0].at(1, 0)) / 2).epsilon(1e-12));
    CHECK(agg->value.at(1, 1) == doctest::Approx(tok[0].at(2, 1)).epsilon(1e-12));
    CHECK(fd_check(tok,
                   [&](const std::vector<Var>& v) { return aggregate_rows(v[0], word_index, 3); },
                   rng) < 1e-6);
}

TEST_CASE("roi_align equals average pooling on aligned boxes with even blocks") {
    std::mt19937_64 rng(10);
    for (int k : {2, 4}) {
        const int out = 3;
        Tensor map = random_tensor({2, k * out, k * out}, rng);
        Var roi = roi_align_v(make_const(map), {0.0, 0.0, double(k * out), double(k * out)}, out,
                              out);
        for (int c = 0; c < 2; ++c)
            for (int by = 0; by < out; ++by)
                for (int bx = 0; bx < out; ++bx) {
                    double s = 0;
                    for (int y = 0; y < k; ++y)
                        for (int x = 0; x < k; ++x) s += map.at(c, by * k + y, bx * k + x);
                    CHECK(roi->value.at(c, by, bx) ==
                          doctest::Approx(s / (k * k)).epsilon(1e-10));
                }
    }
}

TEST_CASE("roi_align gradient and interior sampling") {
    std::mt19937_64 rng(11);
    std::vector<Tensor> in = {random_tensor({2, 6, 7}, rng)};
    RoiBox box{0.7, 1.2, 5.3, 4.9};
    CHECK(fd_check(in,
                   [&](const std::vector<Var>& v) { return roi_align_v(v[0], box, 2, 3); },
                   rng) < 1e-5);
    // constant map -> constant output regardless of the box
    Tensor flat({1, 5, 5}, 3.25);
    Var roi = roi_align_v(make_const(flat), {0.3, 0.4, 4.9, 4.2}, 3, 3);
    for (std::int64_t i = 0; i < roi->value.numel(); ++i)
        CHECK(roi->value[i] == doctest::Approx(3.25).epsilon(1e-12));
}

TEST_CASE("dropout scales kept units in training and is identity in eval") {
    std::mt19937_64 rng(12);
    Tensor x({1, 1000}, 1.0);
    Var eval_out = dropout(make_const(x), 0.5, rng, false);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(eval_out->value[i] == 1.0);

    Var train_out = dropout(make_const(x), 0.5, rng, true);
    int kept = 0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double v = train_out->value[i];
        REQUIRE((v == 0.0 || v == doctest::Approx(2.0).epsilon(1e-12)));
        if (v != 0.0) ++kept;
    }
    CHECK(kept > 400);
    CHECK(kept < 600);
    Var zero_rate = dropout(make_const(x), 0.0, rng, true);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(zero_rate->value[i] == 1.0);
}

TEST_CASE("crf primitives match hand computation") {
    std::mt19937_64 rng(13);
    Tensor alpha({3}, {0.1, -0.4, 0.7});
    Tensor trans = random_tensor({3, 3}, rng);
    Tensor emit({3}, {0.2, 0.0, -0.3});
    Var next = crf_step(make_const(alpha), make_const(trans), make_const(emit));
    for (int j = 0; j < 3; ++j) {
        double z = 0;
        for (int i = 0; i < 3; ++i) z += std::exp(alpha[i] + trans.at(i, j));
        CHECK(next->value[j] == doctest::Approx(std::log(z) + emit[j]).epsilon(1e-12));
    }
    std::vector<Tensor> in = {Tensor({3}, {0.1, -0.4, 0.7}), random_tensor({3, 3}, rng),
                              Tensor({3}, {0.2, 0.0, -0.3})};
    CHECK(fd_check(in,
                   [](const std::vector<Var>& v) { return crf_step(v[0], v[1], v[2]); },
                   rng) < 1e-6);

    std::vector<Tensor> gs = {random_tensor({4, 3}, rng), random_tensor({3, 3}, rng)};
    std::vector<int> y = {2, 0, 1, 1};
    Var score = crf_gold_score(make_const(gs[0]), make_const(gs[1]), y);
    double expect = gs[0].at(0, 2) + gs[0].at(1, 0) + gs[0].at(2, 1) + gs[0].at(3, 1) +
                    gs[1].at(2, 0) + gs[1].at(0, 1) + gs[1].at(1, 1);
    CHECK(score->value[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(fd_check(gs,
                   [&](const std::vector<Var>& v) { return crf_gold_score(v[0], v[1], y); },
                   rng) < 1e-6);
}
