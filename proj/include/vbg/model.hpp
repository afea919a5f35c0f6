#pragma once

#include <optional>
#include <random>

#include "vbg/backbone.hpp"
#include "vbg/crf.hpp"
#include "vbg/document.hpp"
#include "vbg/encoder.hpp"
#include "vbg/params.hpp"
#include "vbg/seg_head.hpp"
#include "vbg/text.hpp"
#include "vbg/word_head.hpp"

namespace vbg {

enum class HeadKind { kLinear, kBilstmCrf };

HeadKind head_kind_from_string(const std::string& s);
std::string head_kind_to_string(HeadKind k);

struct ModelConfig {
    HeadKind head_kind = HeadKind::kLinear;
    EncoderConfig encoder;
    BackboneConfig backbone;
    WordHeadConfig word_head;
    CrfHeadConfig crf_head;
    SegHeadConfig seg_head;
    double lambda_aux = 1.0;
    double enet_k = 1.02;
    int chunk_window = kChunkPayload;
    int chunk_stride = kChunkPayload;
    bool binary_head_with_crf = false;  // re-attach the 2-way classifier to the CRF variant

    // Fills in the cross-module dimensions (embed_dim, channel widths, label
    // counts) so the pieces agree.
    void resolve(int num_labels, int vocab_size);
};

class Model {
public:
    Model(ModelConfig cfg, LabelSet labels, Vocabulary vocab);

    // Fresh parameter initialization.
    void init(std::mt19937_64& rng);

    // ENet class weights from label priors (C+1 word-level priors and
    // 3 coarse pixel priors).
    void set_priors(const std::vector<double>& label_priors,
                    const std::vector<double>& coarse_priors);

    struct ForwardResult {
        Var loss_word;
        Var loss_aux;
        Var total;
        ParamContext* context = nullptr;
    };

    // Full differentiable forward pass on one (already rescaled) document.
    // The returned context owns the parameter leaves; pull gradients from it
    // after backward(). Throws on empty documents.
    ForwardResult forward_loss(const Document& doc, ParamContext& ctx, std::mt19937_64& rng,
                               bool training);

    // Eval-mode prediction: per-word label ids. Empty doc -> empty list.
    std::vector<int> predict(const Document& doc);

    const ModelConfig& config() const { return cfg_; }
    const LabelSet& labels() const { return labels_; }
    const Vocabulary& vocab() const { return vocab_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const std::vector<double>& label_priors() const { return label_priors_; }
    const std::vector<double>& coarse_priors() const { return coarse_priors_; }

private:
    // Shared trunk: encoder -> grid -> backbone fusion -> ROI late fusion.
    struct Trunk {
        Var word_features;  // {N, fc_dim}
        Var p_fuse;
    };
    Trunk trunk_forward(const Document& doc, ParamContext& ctx, std::mt19937_64& rng,
                        bool training);

    ModelConfig cfg_;
    LabelSet labels_;
    Vocabulary vocab_;
    ParamStore params_;
    ClassWeights multi_weights_, binary_weights_, coarse_weights_;
    std::vector<double> label_priors_, coarse_priors_;
};

// Word-level label priors over a training set (C+1 entries) and coarse pixel
// priors (3 entries) at the given mask stride.
void compute_priors(const std::vector<Document>& docs, const LabelSet& labels, int mask_stride,
                    std::vector<double>& label_priors, std::vector<double>& coarse_priors);

}  // namespace vbg
