#include "vbg/optim.hpp"

#include <cmath>

namespace vbg {

bool AdamW::is_encoder_param(const std::string& name) {
    return name.rfind("encoder.", 0) == 0;
}

AdamW::StepResult AdamW::step(ParamStore& params, const std::map<std::string, Tensor>& grads) {
    StepResult res;
    for (const auto& [name, g] : grads) {
        if (g.empty()) continue;
        if (!g.all_finite()) {
            res.bad_param = name;
            return res;  // abort the whole step
        }
    }

    double clip_scale = 1.0;
    if (cfg_.grad_clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& [name, g] : grads)
            for (std::int64_t i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
        const double norm = std::sqrt(sq);
        if (norm > cfg_.grad_clip_norm) clip_scale = cfg_.grad_clip_norm / norm;
    }

    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));

    for (auto& [name, p] : params.all()) {
        auto git = grads.find(name);
        if (git == grads.end() || git->second.empty()) continue;
        const Tensor& g = git->second;
        const bool enc = is_encoder_param(name);
        const double lr = (enc ? cfg_.encoder_lr : cfg_.cnn_lr) * lr_mult_;
        const double wd = enc ? cfg_.encoder_weight_decay : cfg_.cnn_weight_decay;

        Tensor& m = m_.try_emplace(name, Tensor::zeros_like(p)).first->second;
        Tensor& v = v_.try_emplace(name, Tensor::zeros_like(p)).first->second;
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const double gi = g[i] * clip_scale;
            // decoupled weight decay
            p[i] -= lr * wd * p[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
    res.applied = true;
    return res;
}

bool PlateauScheduler::update(int epoch, double score) {
    if (score > best_score) {
        best_score = score;
        best_epoch = epoch;
    }
    const int anchor = std::max(best_epoch, last_decay_epoch);
    if (anchor >= 0 && epoch - anchor >= patience) {
        multiplier *= factor;
        last_decay_epoch = epoch;
        return true;
    }
    return false;
}

}  // namespace vbg
