#include <cmath>
#include <limits>

#include "doctest.h"
#include "test_util.hpp"
#include "vbg/config.hpp"
#include "vbg/optim.hpp"

using namespace vbg;
using nlohmann::json;

namespace {

AdamWConfig simple_optim() {
    AdamWConfig cfg;
    cfg.encoder_lr = 0.01;
    cfg.encoder_weight_decay = 0.02;
    cfg.cnn_lr = 0.1;
    cfg.cnn_weight_decay = 0.001;
    return cfg;
}

}  // namespace

TEST_CASE("zero gradients leave only the decoupled decay") {
    AdamWConfig cfg = simple_optim();
    AdamW opt(cfg);
    ParamStore store;
    store.add("encoder.embed", {2}, 2.0);
    store.add("cnn.w", {2}, 2.0);
    std::map<std::string, Tensor> grads;
    grads["encoder.embed"] = Tensor({2}, 0.0);
    grads["cnn.w"] = Tensor({2}, 0.0);
    for (int i = 0; i < 3; ++i) CHECK(opt.step(store, grads).applied);
    // per-group factors: encoder 1 - 0.01*0.02, cnn 1 - 0.1*0.001
    CHECK(store.at("encoder.embed")[0] ==
          doctest::Approx(2.0 * std::pow(1.0 - 2e-4, 3)).epsilon(1e-12));
    CHECK(store.at("cnn.w")[0] == doctest::Approx(2.0 * std::pow(1.0 - 1e-4, 3)).epsilon(1e-12));
    CHECK(opt.step_count() == 3);
}

TEST_CASE("bias correction makes the first step one learning rate long") {
    AdamWConfig cfg = simple_optim();
    cfg.cnn_weight_decay = 0.0;
    AdamW opt(cfg);
    ParamStore store;
    store.add("cnn.w", {1}, 1.0);
    std::map<std::string, Tensor> grads;
    grads["cnn.w"] = Tensor({1}, 0.5);
    opt.step(store, grads);
    // mhat = g, vhat = g^2 -> update = lr * g / (|g| + eps) ~ lr * sign(g)
    CHECK(store.at("cnn.w")[0] == doctest::Approx(1.0 - cfg.cnn_lr).epsilon(1e-6));

    // the multiplier scales the realized step
    AdamW half(cfg);
    half.set_lr_multiplier(0.5);
    ParamStore s2;
    s2.add("cnn.w", {1}, 1.0);
    half.step(s2, grads);
    CHECK(s2.at("cnn.w")[0] == doctest::Approx(1.0 - 0.5 * cfg.cnn_lr).epsilon(1e-6));
}

TEST_CASE("a non-finite gradient aborts the whole step and names the culprit") {
    AdamW opt(simple_optim());
    ParamStore store;
    store.add("cnn.a", {1}, 1.0);
    store.add("cnn.b", {1}, 1.0);
    std::map<std::string, Tensor> grads;
    grads["cnn.a"] = Tensor({1}, 0.3);
    grads["cnn.b"] = Tensor({1}, std::numeric_limits<double>::quiet_NaN());
    AdamW::StepResult res = opt.step(store, grads);
    CHECK(!res.applied);
    CHECK(res.bad_param == "cnn.b");
    CHECK(store.at("cnn.a")[0] == 1.0);  // nothing moved
    CHECK(store.at("cnn.b")[0] == 1.0);
    CHECK(opt.step_count() == 0);
    CHECK(opt.moments_m().empty());

    grads["cnn.b"] = Tensor({1}, std::numeric_limits<double>::infinity());
    CHECK(!opt.step(store, grads).applied);
}

TEST_CASE("gradient clipping rescales the global norm before the moments") {
    AdamWConfig cfg = simple_optim();
    cfg.grad_clip_norm = 1.0;
    AdamW opt(cfg);
    ParamStore store;
    store.add("cnn.a", {1}, 0.0);
    store.add("cnn.b", {1}, 0.0);
    std::map<std::string, Tensor> grads;
    grads["cnn.a"] = Tensor({1}, 3.0);
    grads["cnn.b"] = Tensor({1}, 4.0);  // norm 5 -> scale 1/5
    opt.step(store, grads);
    CHECK(opt.moments_m().at("cnn.a")[0] == doctest::Approx(0.1 * 3.0 / 5.0).epsilon(1e-12));
    CHECK(opt.moments_m().at("cnn.b")[0] == doctest::Approx(0.1 * 4.0 / 5.0).epsilon(1e-12));
}

TEST_CASE("plateau decay fires after the patience window and then resets") {
    PlateauScheduler sched;  // patience 5, factor 0.1
    // best at epoch 3, flat afterwards -> first decay at epoch 8
    std::vector<double> scores = {0.2, 0.4, 0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6};
    std::vector<int> decays;
    for (int e = 0; e < static_cast<int>(scores.size()); ++e)
        if (sched.update(e, scores[static_cast<std::size_t>(e)])) decays.push_back(e);
    CHECK(decays == std::vector<int>{8});
    CHECK(sched.multiplier == doctest::Approx(0.1).epsilon(1e-12));
    // window resets: next decay five epochs after the last one
    for (int e = 9; e <= 13; ++e)
        if (sched.update(e, 0.6)) decays.push_back(e);
    CHECK(decays == std::vector<int>{8, 13});
    CHECK(sched.multiplier == doctest::Approx(0.01).epsilon(1e-12));

    PlateauScheduler eager;
    for (int e = 0; e < 40; ++e) CHECK(!eager.update(e, e * 0.01));  // always improving
    CHECK(eager.multiplier == doctest::Approx(1.0));
}

TEST_CASE("config JSON round-trips and rejects unknown keys") {
    TrainConfig cfg;
    cfg.optim.cnn_lr = 0.25;
    cfg.train_scales = {64, 96};
    cfg.model.encoder.embed_dim = 32;
    cfg.model.encoder.num_heads = 4;
    TrainConfig back = train_config_from_json(to_json(cfg));
    CHECK(back.optim.cnn_lr == 0.25);
    CHECK(back.train_scales == std::vector<int>{64, 96});
    CHECK(back.model.encoder.embed_dim == 32);

    json bad = to_json(TrainConfig{});
    bad["optim"]["learning_rate"] = 0.1;  // not a real key
    CHECK_THROWS_AS(train_config_from_json(bad), ValidationError);
    json bad2 = to_json(TrainConfig{});
    bad2["model"]["encoder"]["layers"] = 2;
    CHECK_THROWS_AS(train_config_from_json(bad2), ValidationError);

    json invalid = to_json(TrainConfig{});
    invalid["plateau_factor"] = 1.5;
    CHECK_THROWS_AS(train_config_from_json(invalid), ValidationError);
    json empty_scales = to_json(TrainConfig{});
    empty_scales["train_scales"] = json::array();
    CHECK_THROWS_AS(train_config_from_json(empty_scales), ValidationError);
}

TEST_CASE("dotted overrides update nested keys with validation") {
    json j = to_json(TrainConfig{});
    apply_override(j, "optim.cnn_lr", "0.5");
    apply_override(j, "model.encoder.num_layers", "1");
    apply_override(j, "train_scales", "[64,96]");
    apply_override(j, "model.head_kind", "bilstm_crf");
    TrainConfig cfg = train_config_from_json(j);
    CHECK(cfg.optim.cnn_lr == 0.5);
    CHECK(cfg.model.encoder.num_layers == 1);
    CHECK(cfg.train_scales == std::vector<int>{64, 96});
    CHECK(head_kind_to_string(cfg.model.head_kind) == "bilstm_crf");

    CHECK_THROWS_AS(apply_override(j, "optim.nope", "1"), ValidationError);
    CHECK_THROWS_AS(apply_override(j, "completely.made.up", "1"), ValidationError);
}

TEST_CASE("the key documentation covers every leaf") {
    std::vector<std::string> docs = config_key_docs();
    CHECK(!docs.empty());
    bool saw_lr = false, saw_scales = false, saw_nested = false;
    for (const std::string& line : docs) {
        if (line.rfind("optim.cnn_lr = ", 0) == 0) saw_lr = true;
        if (line.rfind("train_scales = ", 0) == 0) saw_scales = true;
        if (line.rfind("model.encoder.embed_dim = ", 0) == 0) saw_nested = true;
    }
    CHECK(saw_lr);
    CHECK(saw_scales);
    CHECK(saw_nested);
}
