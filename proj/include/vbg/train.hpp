#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vbg/checkpoint.hpp"
#include "vbg/config.hpp"
#include "vbg/model.hpp"

namespace vbg {

struct TrainResult {
    bool aborted = false;
    std::string abort_reason;
    int epochs_run = 0;
    double best_val_f1 = -1.0;
    std::string best_checkpoint;  // empty if never saved
    std::string last_checkpoint;
};

struct TrainOptions {
    std::string out_dir;           // checkpoints + metrics.jsonl land here
    std::string resume_from;       // optional checkpoint path
    std::function<void(const std::string&)> log;  // optional info sink
};

// End-to-end training loop: batch sampling, multi-scale rescale, forward /
// backward over the full network, two-group AdamW step, per-epoch validation
// micro-F1, plateau decay, checkpoint-if-best. Deterministic given cfg.seed.
TrainResult train(const TrainConfig& cfg, const std::vector<Document>& train_docs,
                  const std::vector<Document>& val_docs, const LabelSet& labels,
                  const TrainOptions& opts);

// Eval-mode field-level micro F1 of `model` over `docs`.
double dataset_micro_f1(Model& model, const std::vector<Document>& docs, int eval_short_side,
                        int max_long_side);

}  // namespace vbg
