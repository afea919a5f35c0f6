#pragma once

#include <map>
#include <string>

#include "vbg/params.hpp"

namespace vbg {

struct AdamWConfig {
    double encoder_lr = 5e-5;
    double encoder_weight_decay = 0.01;
    double cnn_lr = 1e-4;
    double cnn_weight_decay = 0.005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip_norm = 0.0;  // 0 = off
};

// Two AdamW groups with decoupled weight decay: parameters named
// "encoder.*" form one group, everything else (backbone, fusion, heads) the
// other. A shared multiplier implements the plateau decay.
class AdamW {
public:
    explicit AdamW(const AdamWConfig& cfg) : cfg_(cfg) {}

    struct StepResult {
        bool applied = false;
        std::string bad_param;  // first parameter with a non-finite gradient
    };

    // Applies one update; skips the whole step if any gradient is non-finite.
    StepResult step(ParamStore& params, const std::map<std::string, Tensor>& grads);

    double lr_multiplier() const { return lr_mult_; }
    void set_lr_multiplier(double m) { lr_mult_ = m; }
    double encoder_lr() const { return cfg_.encoder_lr * lr_mult_; }
    double cnn_lr() const { return cfg_.cnn_lr * lr_mult_; }

    std::map<std::string, Tensor>& moments_m() { return m_; }
    std::map<std::string, Tensor>& moments_v() { return v_; }
    long long step_count() const { return step_count_; }
    void set_step_count(long long s) { step_count_ = s; }

    static bool is_encoder_param(const std::string& name);

private:
    AdamWConfig cfg_;
    double lr_mult_ = 1.0;
    long long step_count_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

// Plateau rule: multiply by `factor` when the best score is at least
// `patience` epochs old; the window resets after each decay event.
struct PlateauScheduler {
    int patience = 5;
    double factor = 0.1;
    double best_score = -1.0;
    int best_epoch = -1;
    int last_decay_epoch = -1;
    double multiplier = 1.0;

    // Returns true when a decay fired at this epoch.
    bool update(int epoch, double score);
};

}  // namespace vbg
