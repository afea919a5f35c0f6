#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "vbg/model.hpp"
#include "vbg/optim.hpp"

namespace vbg {

struct TrainConfig {
    ModelConfig model;
    AdamWConfig optim;
    int plateau_patience = 5;
    double plateau_factor = 0.1;
    int batch_size = 2;
    std::vector<int> train_scales = {320, 416, 512, 608, 704};
    int max_long_side = 800;
    int eval_short_side = 512;
    int epochs = 30;
    unsigned long long seed = 0;
    int max_vocab_pieces = 2000;
    int nonfinite_abort_after = 10;  // consecutive skipped steps before giving up

    void validate() const;  // throws ValidationError
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

TrainConfig load_train_config(const std::string& path);
void save_train_config(const TrainConfig& cfg, const std::string& path);

// Sets a single dotted key ("optim.cnn_lr", "model.backbone.fpn_channels",
// "train_scales") from its string form. Unknown keys throw ValidationError.
void apply_override(nlohmann::json& config, const std::string& dotted_key,
                    const std::string& value);

// Flattened "dotted.key = default" lines for --help.
std::vector<std::string> config_key_docs();

}  // namespace vbg
