#include "vbg/config.hpp"

#include <fstream>
#include <sstream>

namespace vbg {

using nlohmann::json;

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ValidationError("config: " + msg); };
    if (optim.encoder_lr <= 0 || optim.cnn_lr <= 0) fail("learning rates must be > 0");
    if (optim.encoder_weight_decay < 0 || optim.cnn_weight_decay < 0)
        fail("weight decay must be >= 0");
    if (plateau_factor <= 0 || plateau_factor >= 1) fail("plateau_factor must be in (0,1)");
    if (plateau_patience < 1) fail("plateau_patience must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (train_scales.empty()) fail("train_scales must be nonempty");
    for (int s : train_scales)
        if (s < 32) fail("train scales must be >= 32");
    if (eval_short_side < 32) fail("eval_short_side must be >= 32");
    if (epochs < 1) fail("epochs must be >= 1");
    if (model.enet_k <= 1.0) fail("enet_k must be > 1");
    if (model.word_head.dropout_rate < 0 || model.word_head.dropout_rate >= 1)
        fail("dropout_rate must be in [0,1)");
    if (model.encoder.embed_dim % model.encoder.num_heads != 0)
        fail("embed_dim must be divisible by num_heads");
    if (model.backbone.fusion_stride != 4 && model.backbone.fusion_stride != 8)
        fail("fusion_stride must be 4 or 8");
    if (model.backbone.stage_channels.size() != 4) fail("stage_channels needs 4 entries");
    if (model.chunk_window < 1 || model.chunk_window > kChunkPayload)
        fail("chunk_window must be in [1,510]");
    if (model.chunk_stride < 1 || model.chunk_stride > model.chunk_window)
        fail("chunk_stride must be in [1, chunk_window]");
}

json to_json(const TrainConfig& cfg) {
    const ModelConfig& m = cfg.model;
    return json{
        {"model",
         {{"head_kind", head_kind_to_string(m.head_kind)},
          {"lambda_aux", m.lambda_aux},
          {"enet_k", m.enet_k},
          {"chunk_window", m.chunk_window},
          {"chunk_stride", m.chunk_stride},
          {"binary_head_with_crf", m.binary_head_with_crf},
          {"encoder",
           {{"embed_dim", m.encoder.embed_dim},
            {"num_layers", m.encoder.num_layers},
            {"num_heads", m.encoder.num_heads},
            {"ff_mult", m.encoder.ff_mult}}},
          {"backbone",
           {{"stage_channels", m.backbone.stage_channels},
            {"blocks_per_stage", m.backbone.blocks_per_stage},
            {"fpn_channels", m.backbone.fpn_channels},
            {"fusion_stride", m.backbone.fusion_stride}}},
          {"word_head",
           {{"fc_dim", m.word_head.fc_dim},
            {"roi_size", m.word_head.roi_size},
            {"dropout_rate", m.word_head.dropout_rate}}},
          {"crf_head", {{"hidden_dim", m.crf_head.hidden_dim}}},
          {"seg_head",
           {{"include_background_in_fine", m.seg_head.include_background_in_fine}}}}},
        {"optim",
         {{"encoder_lr", cfg.optim.encoder_lr},
          {"encoder_weight_decay", cfg.optim.encoder_weight_decay},
          {"cnn_lr", cfg.optim.cnn_lr},
          {"cnn_weight_decay", cfg.optim.cnn_weight_decay},
          {"beta1", cfg.optim.beta1},
          {"beta2", cfg.optim.beta2},
          {"eps", cfg.optim.eps},
          {"grad_clip_norm", cfg.optim.grad_clip_norm}}},
        {"plateau_patience", cfg.plateau_patience},
        {"plateau_factor", cfg.plateau_factor},
        {"batch_size", cfg.batch_size},
        {"train_scales", cfg.train_scales},
        {"max_long_side", cfg.max_long_side},
        {"eval_short_side", cfg.eval_short_side},
        {"epochs", cfg.epochs},
        {"seed", cfg.seed},
        {"max_vocab_pieces", cfg.max_vocab_pieces},
        {"nonfinite_abort_after", cfg.nonfinite_abort_after},
    };
}

namespace {

// Reads each present key into `cfg`, erasing consumed keys so leftovers can be
// reported. Defaults come from the struct initializers.
template <typename T>
void take(json& j, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    out = it->get<T>();
    j.erase(it);
}

void take_head(json& j, HeadKind& out) {
    auto it = j.find("head_kind");
    if (it == j.end()) return;
    out = head_kind_from_string(it->get<std::string>());
    j.erase(it);
}

void expect_empty(const json& j, const std::string& where) {
    if (j.is_object() && !j.empty()) {
        std::string keys;
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!keys.empty()) keys += ", ";
            keys += it.key();
        }
        throw ValidationError("config: unknown key(s) under " + where + ": " + keys);
    }
}

}  // namespace

TrainConfig train_config_from_json(const json& input) {
    TrainConfig cfg;
    json j = input;
    if (!j.is_object()) throw ValidationError("config: expected a JSON object");

    if (j.contains("model")) {
        json m = j.at("model");
        take_head(m, cfg.model.head_kind);
        take(m, "lambda_aux", cfg.model.lambda_aux);
        take(m, "enet_k", cfg.model.enet_k);
        take(m, "chunk_window", cfg.model.chunk_window);
        take(m, "chunk_stride", cfg.model.chunk_stride);
        take(m, "binary_head_with_crf", cfg.model.binary_head_with_crf);
        if (m.contains("encoder")) {
            json e = m.at("encoder");
            take(e, "embed_dim", cfg.model.encoder.embed_dim);
            take(e, "num_layers", cfg.model.encoder.num_layers);
            take(e, "num_heads", cfg.model.encoder.num_heads);
            take(e, "ff_mult", cfg.model.encoder.ff_mult);
            expect_empty(e, "model.encoder");
            m.erase("encoder");
        }
        if (m.contains("backbone")) {
            json b = m.at("backbone");
            take(b, "stage_channels", cfg.model.backbone.stage_channels);
            take(b, "blocks_per_stage", cfg.model.backbone.blocks_per_stage);
            take(b, "fpn_channels", cfg.model.backbone.fpn_channels);
            take(b, "fusion_stride", cfg.model.backbone.fusion_stride);
            expect_empty(b, "model.backbone");
            m.erase("backbone");
        }
        if (m.contains("word_head")) {
            json w = m.at("word_head");
            take(w, "fc_dim", cfg.model.word_head.fc_dim);
            take(w, "roi_size", cfg.model.word_head.roi_size);
            take(w, "dropout_rate", cfg.model.word_head.dropout_rate);
            expect_empty(w, "model.word_head");
            m.erase("word_head");
        }
        if (m.contains("crf_head")) {
            json c = m.at("crf_head");
            take(c, "hidden_dim", cfg.model.crf_head.hidden_dim);
            expect_empty(c, "model.crf_head");
            m.erase("crf_head");
        }
        if (m.contains("seg_head")) {
            json s = m.at("seg_head");
            take(s, "include_background_in_fine", cfg.model.seg_head.include_background_in_fine);
            expect_empty(s, "model.seg_head");
            m.erase("seg_head");
        }
        expect_empty(m, "model");
        j.erase("model");
    }
    if (j.contains("optim")) {
        json o = j.at("optim");
        take(o, "encoder_lr", cfg.optim.encoder_lr);
        take(o, "encoder_weight_decay", cfg.optim.encoder_weight_decay);
        take(o, "cnn_lr", cfg.optim.cnn_lr);
        take(o, "cnn_weight_decay", cfg.optim.cnn_weight_decay);
        take(o, "beta1", cfg.optim.beta1);
        take(o, "beta2", cfg.optim.beta2);
        take(o, "eps", cfg.optim.eps);
        take(o, "grad_clip_norm", cfg.optim.grad_clip_norm);
        expect_empty(o, "optim");
        j.erase("optim");
    }
    take(j, "plateau_patience", cfg.plateau_patience);
    take(j, "plateau_factor", cfg.plateau_factor);
    take(j, "batch_size", cfg.batch_size);
    take(j, "train_scales", cfg.train_scales);
    take(j, "max_long_side", cfg.max_long_side);
    take(j, "eval_short_side", cfg.eval_short_side);
    take(j, "epochs", cfg.epochs);
    take(j, "seed", cfg.seed);
    take(j, "max_vocab_pieces", cfg.max_vocab_pieces);
    take(j, "nonfinite_abort_after", cfg.nonfinite_abort_after);
    expect_empty(j, "the top level");
    cfg.validate();
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("config " + path + ": " + e.what());
    }
    return train_config_from_json(j);
}

void save_train_config(const TrainConfig& cfg, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw std::runtime_error("cannot write " + tmp);
        f << to_json(cfg).dump(2) << '\n';
    }
    std::rename(tmp.c_str(), path.c_str());
}

void apply_override(json& config, const std::string& dotted_key, const std::string& value) {
    json defaults = to_json(TrainConfig{});
    json* cursor = &config;
    const json* def = &defaults;
    std::size_t pos = 0;
    while (true) {
        std::size_t dot = dotted_key.find('.', pos);
        std::string part = dotted_key.substr(pos, dot - pos);
        if (!def->is_object() || !def->contains(part))
            throw ValidationError("unknown config key: " + dotted_key);
        def = &def->at(part);
        if (dot == std::string::npos) {
            json parsed;
            // scalars accept bare strings ("linear"); everything else must be
            // valid JSON ("[320,416]", "0.1", "true")
            try {
                parsed = json::parse(value);
            } catch (const json::exception&) {
                parsed = value;
            }
            if (def->is_string() && parsed.is_number()) parsed = value;
            (*cursor)[part] = parsed;
            return;
        }
        cursor = &(*cursor)[part];
        if (!cursor->is_object()) *cursor = json::object();
        pos = dot + 1;
    }
}

namespace {

void flatten(const json& j, const std::string& prefix, std::vector<std::string>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it->is_object())
            flatten(*it, key, out);
        else
            out.push_back(key + " = " + it->dump());
    }
}

}  // namespace

std::vector<std::string> config_key_docs() {
    std::vector<std::string> out;
    flatten(to_json(TrainConfig{}), "", out);
    return out;
}

}  // namespace vbg
