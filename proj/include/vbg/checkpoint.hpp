#pragma once

#include <map>
#include <memory>
#include <string>

#include "vbg/config.hpp"
#include "vbg/model.hpp"
#include "vbg/optim.hpp"

namespace vbg {

// Training-progress bookkeeping stored alongside the weights so a run can
// resume exactly where it stopped.
struct TrainState {
    int epoch = -1;       // last completed epoch
    long long step = 0;   // global step counter
    std::string rng_state;
    PlateauScheduler schedule;
    double best_val_f1 = -1.0;
};

// Single-file container: magic, JSON header (config, labels, vocab, priors,
// train state, tensor table with byte offsets), then raw little-endian f64
// data. Self-describing — no external config needed to load.
void save_checkpoint(const std::string& path, const Model& model, const TrainConfig& cfg,
                     const TrainState& state, const AdamW* optim = nullptr);

struct LoadedCheckpoint {
    TrainConfig config;
    TrainState state;
    std::unique_ptr<Model> model;
    // Optimizer moments keyed by parameter name; empty when the checkpoint
    // was saved without an optimizer.
    std::map<std::string, Tensor> adam_m, adam_v;
    long long adam_step_count = 0;

    // Rebuilds an AdamW with the stored moments installed.
    AdamW make_optimizer() const;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace vbg
