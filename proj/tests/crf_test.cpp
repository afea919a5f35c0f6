#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "vbg/crf.hpp"

using namespace vbg;

namespace {

// enumerate every label sequence of length n over c labels
void for_each_sequence(int n, int c, const std::function<void(const std::vector<int>&)>& fn) {
    std::vector<int> y(static_cast<std::size_t>(n), 0);
    while (true) {
        fn(y);
        int i = n - 1;
        while (i >= 0 && ++y[static_cast<std::size_t>(i)] == c) y[static_cast<std::size_t>(i--)] = 0;
        if (i < 0) break;
    }
}

double brute_log_partition(const Tensor& e, const Tensor& t) {
    const int n = e.dim(0), c = e.dim(1);
    double m = -1e300;
    std::vector<double> scores;
    for_each_sequence(n, c, [&](const std::vector<int>& y) {
        double s = crf_score(e, t, y);
        scores.push_back(s);
        m = std::max(m, s);
    });
    double acc = 0;
    for (double s : scores) acc += std::exp(s - m);
    return m + std::log(acc);
}

}  // namespace

TEST_CASE("hand-sized chain score") {
    Tensor e({2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor t({2, 2}, {0.1, 0.2, 0.3, 0.4});
    CHECK(crf_score(e, t, {0, 1}) == doctest::Approx(1.0 + 4.0 + 0.2).epsilon(1e-12));
    CHECK(crf_score(e, t, {1, 0}) == doctest::Approx(2.0 + 3.0 + 0.3).epsilon(1e-12));
    Tensor e1({1, 2}, {1.0, 2.0});
    CHECK(crf_score(e1, t, {1}) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("log-partition and Viterbi agree with exhaustive enumeration") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> U(-5.0, 5.0);
    for (int trial = 0; trial < 500; ++trial) {
        const int n = std::uniform_int_distribution<int>(1, 6)(rng);
        const int c = std::uniform_int_distribution<int>(2, 4)(rng);
        Tensor e({n, c}), t({c, c});
        for (std::int64_t i = 0; i < e.numel(); ++i) e[i] = U(rng);
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = U(rng);

        const double log_z = crf_log_partition(e, t);
        CHECK(std::abs(log_z - brute_log_partition(e, t)) < 1e-10);

        // exhaustive argmax, first (lexicographically smallest) winner kept
        double best = -1e300;
        std::vector<int> best_y;
        for_each_sequence(n, c, [&](const std::vector<int>& y) {
            const double s = crf_score(e, t, y);
            if (s > best + 1e-12) {
                best = s;
                best_y = y;
            }
        });
        ViterbiResult vit = viterbi_decode(e, t);
        CHECK(std::abs(vit.score - best) < 1e-12);
        CHECK(vit.labels == best_y);

        // the normalized path probabilities form a distribution
        double mass = 0;
        for_each_sequence(n, c, [&](const std::vector<int>& y) {
            mass += std::exp(crf_score(e, t, y) - log_z);
        });
        CHECK(std::abs(mass - 1.0) < 1e-8);
    }
}

TEST_CASE("Viterbi ties resolve to the lowest label ids") {
    Tensor e({3, 3}, 0.0);
    Tensor t({3, 3}, 0.0);
    ViterbiResult vit = viterbi_decode(e, t);
    CHECK(vit.labels == std::vector<int>{0, 0, 0});
    CHECK(vit.score == doctest::Approx(0.0));
}

TEST_CASE("differentiable NLL equals log-partition minus gold score") {
    std::mt19937_64 rng(22);
    Tensor e = vbg::test::random_tensor({4, 3}, rng, -2.0, 2.0);
    Tensor t = vbg::test::random_tensor({3, 3}, rng, -2.0, 2.0);
    std::vector<int> y = {2, 0, 1, 1};
    Var nll = crf_nll(make_const(e), make_const(t), y);
    CHECK(nll->value[0] ==
          doctest::Approx(crf_log_partition(e, t) - crf_score(e, t, y)).epsilon(1e-10));
    CHECK(nll->value[0] > 0.0);  // one path can never hold all the mass here
}

TEST_CASE("BiLSTM emissions are deterministic with the right shape") {
    std::mt19937_64 rng(23);
    CrfHeadConfig cfg;
    cfg.input_dim = 6;
    cfg.hidden_dim = 4;
    cfg.num_labels = 3;
    ParamStore store;
    crf_head_init(store, cfg, rng);
    REQUIRE(store.has("crf.transitions"));
    CHECK(store.at("crf.transitions").shape() == std::vector<int>{3, 3});

    Var feats = make_const(vbg::test::random_tensor({5, 6}, rng));
    ParamContext c1(store, false), c2(store, false);
    Var a = bilstm_emissions(feats, c1, cfg);
    Var b = bilstm_emissions(feats, c2, cfg);
    REQUIRE(a->value.shape() == std::vector<int>{5, 3});
    for (std::int64_t i = 0; i < a->value.numel(); ++i) CHECK(a->value[i] == b->value[i]);

    // the backward direction matters: reversing the word order must not
    // simply reverse the emissions
    Tensor rev({5, 6});
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 6; ++j) rev.at(i, j) = feats->value.at(4 - i, j);
    ParamContext c3(store, false);
    Var r = bilstm_emissions(make_const(rev), c3, cfg);
    double diff = 0;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 3; ++j) diff = std::max(diff, std::abs(r->value.at(4 - i, j) - a->value.at(i, j)));
    CHECK(diff > 1e-9);
}
