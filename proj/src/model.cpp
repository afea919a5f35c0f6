#include "vbg/model.hpp"

#include <stdexcept>

namespace vbg {

HeadKind head_kind_from_string(const std::string& s) {
    if (s == "linear") return HeadKind::kLinear;
    if (s == "bilstm_crf") return HeadKind::kBilstmCrf;
    throw std::invalid_argument("unknown head kind: " + s + " (expected linear or bilstm_crf)");
}

std::string head_kind_to_string(HeadKind k) {
    return k == HeadKind::kLinear ? "linear" : "bilstm_crf";
}

void ModelConfig::resolve(int num_labels, int vocab_size) {
    encoder.vocab_size = vocab_size;
    backbone.embed_dim = encoder.embed_dim;
    word_head.embed_dim = encoder.embed_dim;
    word_head.fpn_channels = backbone.fpn_channels;
    word_head.num_labels = num_labels;
    word_head.use_binary_head = head_kind == HeadKind::kLinear || binary_head_with_crf;
    crf_head.input_dim = word_head.fc_dim;
    crf_head.num_labels = num_labels;
    seg_head.fpn_channels = backbone.fpn_channels;
    seg_head.num_labels = num_labels;
}

Model::Model(ModelConfig cfg, LabelSet labels, Vocabulary vocab)
    : cfg_(std::move(cfg)), labels_(std::move(labels)), vocab_(std::move(vocab)) {
    cfg_.resolve(labels_.num_labels(), vocab_.size());
    // Defaults until real priors are provided.
    set_priors(std::vector<double>(static_cast<std::size_t>(labels_.num_labels()),
                                   1.0 / labels_.num_labels()),
               {1.0 / 3, 1.0 / 3, 1.0 / 3});
}

void Model::init(std::mt19937_64& rng) {
    encoder_init(params_, cfg_.encoder, rng);
    backbone_init(params_, cfg_.backbone, rng);
    word_head_init(params_, cfg_.word_head, rng);
    if (cfg_.head_kind == HeadKind::kBilstmCrf) crf_head_init(params_, cfg_.crf_head, rng);
    seg_head_init(params_, cfg_.seg_head, rng);
}

void Model::set_priors(const std::vector<double>& label_priors,
                       const std::vector<double>& coarse_priors) {
    if (static_cast<int>(label_priors.size()) != labels_.num_labels())
        throw std::invalid_argument("set_priors: need C+1 label priors");
    if (coarse_priors.size() != 3) throw std::invalid_argument("set_priors: need 3 coarse priors");
    label_priors_ = label_priors;
    coarse_priors_ = coarse_priors;
    multi_weights_ = enet_weights(label_priors, cfg_.enet_k);
    double p_interesting = 0.0;
    for (int c = 0; c < labels_.num_fields(); ++c)
        p_interesting += label_priors[static_cast<std::size_t>(c)];
    binary_weights_ = enet_weights(
        {label_priors[static_cast<std::size_t>(labels_.other_label())], p_interesting}, cfg_.enet_k);
    coarse_weights_ = enet_weights(coarse_priors, cfg_.enet_k);
}

Model::Trunk Model::trunk_forward(const Document& doc, ParamContext& ctx, std::mt19937_64& rng,
                                  bool training) {
    if (doc.words.empty()) throw std::invalid_argument("forward: empty document " + doc.id);
    TokenSequence tokens = tokenize(doc, vocab_);
    std::vector<Chunk> chunks = chunk(tokens, vocab_, cfg_.chunk_window, cfg_.chunk_stride);
    Var token_embs = encode_tokens(chunks, ctx, cfg_.encoder);
    Var word_embs = aggregate_word_embeddings(token_embs, tokens);

    Var grid = build_bertgrid(word_embs, doc, cfg_.backbone.fusion_stride);
    BackboneMaps maps = backbone_forward(doc.image, grid, ctx, cfg_.backbone);

    Trunk t;
    t.p_fuse = maps.fused;
    t.word_features =
        late_fuse_words(maps.fused, word_embs, doc, 4, ctx, cfg_.word_head, rng, training);
    return t;
}

Model::ForwardResult Model::forward_loss(const Document& doc, ParamContext& ctx,
                                         std::mt19937_64& rng, bool training) {
    Trunk t = trunk_forward(doc, ctx, rng, training);
    std::vector<int> gold;
    gold.reserve(doc.words.size());
    for (const Word& w : doc.words) gold.push_back(w.label);

    ForwardResult res;
    if (cfg_.head_kind == HeadKind::kLinear) {
        LinearHeadOutput head = linear_head_loss(t.word_features, gold, multi_weights_,
                                                 binary_weights_, ctx, cfg_.word_head);
        res.loss_word = head.loss_word;
    } else {
        Var emissions = bilstm_emissions(t.word_features, ctx, cfg_.crf_head);
        res.loss_word = crf_nll(emissions, ctx["crf.transitions"], gold);
        if (cfg_.binary_head_with_crf) {
            LinearHeadOutput aux = linear_head_loss(t.word_features, gold, multi_weights_,
                                                    binary_weights_, ctx, cfg_.word_head);
            res.loss_word = add(res.loss_word, aux.loss_word1);
        }
    }

    PixelMasks masks = rasterize_masks(doc, 4, labels_);
    SegLogits seg = seg_forward(t.p_fuse, ctx, cfg_.seg_head);
    res.loss_aux = seg_loss(seg, masks, coarse_weights_, multi_weights_, cfg_.seg_head);
    res.total = cfg_.lambda_aux == 0.0
                    ? res.loss_word
                    : add(res.loss_word, scale(res.loss_aux, cfg_.lambda_aux));
    return res;
}

std::vector<int> Model::predict(const Document& doc) {
    if (doc.words.empty()) return {};
    ParamContext ctx(params_, /*requires_grad=*/false);
    std::mt19937_64 rng(0);  // unused in eval mode (no dropout)
    Trunk t = trunk_forward(doc, ctx, rng, /*training=*/false);
    if (cfg_.head_kind == HeadKind::kLinear) {
        Var logits = linear_head_logits(t.word_features, ctx);
        std::vector<int> out;
        out.reserve(doc.words.size());
        const int k = logits->value.dim(1);
        for (int i = 0; i < logits->value.dim(0); ++i) {
            int arg = 0;
            for (int j = 1; j < k; ++j)
                if (logits->value.at(i, j) > logits->value.at(i, arg)) arg = j;
            out.push_back(arg);
        }
        return out;
    }
    Var emissions = bilstm_emissions(t.word_features, ctx, cfg_.crf_head);
    return viterbi_decode(emissions->value, params_.at("crf.transitions")).labels;
}

void compute_priors(const std::vector<Document>& docs, const LabelSet& labels, int mask_stride,
                    std::vector<double>& label_priors, std::vector<double>& coarse_priors) {
    std::vector<double> wc(static_cast<std::size_t>(labels.num_labels()), 0.0);
    std::vector<double> cc(3, 0.0);
    double n_words = 0.0, n_pixels = 0.0;
    for (const Document& d : docs) {
        for (const Word& w : d.words) {
            wc[static_cast<std::size_t>(w.label)] += 1.0;
            n_words += 1.0;
        }
        PixelMasks m = rasterize_masks(d, mask_stride, labels);
        for (int c : m.coarse) {
            cc[static_cast<std::size_t>(c)] += 1.0;
            n_pixels += 1.0;
        }
    }
    label_priors.assign(wc.size(), 0.0);
    if (n_words > 0)
        for (std::size_t i = 0; i < wc.size(); ++i) label_priors[i] = wc[i] / n_words;
    coarse_priors.assign(3, 0.0);
    if (n_pixels > 0)
        for (std::size_t i = 0; i < 3; ++i) coarse_priors[i] = cc[i] / n_pixels;
}

}  // namespace vbg
