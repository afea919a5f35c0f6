#include "vbg/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vbg {

namespace {

std::string layer_key(int layer, const std::string& suffix) {
    return "encoder.layer" + std::to_string(layer) + "." + suffix;
}

}  // namespace

void encoder_init(ParamStore& store, const EncoderConfig& cfg, std::mt19937_64& rng) {
    if (cfg.embed_dim % cfg.num_heads != 0)
        throw std::invalid_argument("encoder: embed_dim must be divisible by num_heads");
    const int d = cfg.embed_dim, ff = cfg.ff_mult * d;
    store.add("encoder.embed", {cfg.vocab_size, d});
    store.init_normal("encoder.embed", rng, 0.02);
    store.add("encoder.pos", {cfg.max_positions, d});
    store.init_normal("encoder.pos", rng, 0.02);
    for (int l = 0; l < cfg.num_layers; ++l) {
        for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
            store.add(layer_key(l, w), {d, d});
            store.init_normal(layer_key(l, w), rng, 0.02);
        }
        store.add(layer_key(l, "attn.bo"), {d});
        store.add(layer_key(l, "ln1.gamma"), {d}, 1.0);
        store.add(layer_key(l, "ln1.beta"), {d});
        store.add(layer_key(l, "ln2.gamma"), {d}, 1.0);
        store.add(layer_key(l, "ln2.beta"), {d});
        store.add(layer_key(l, "ff.w1"), {d, ff});
        store.init_normal(layer_key(l, "ff.w1"), rng, 0.02);
        store.add(layer_key(l, "ff.b1"), {ff});
        store.add(layer_key(l, "ff.w2"), {ff, d});
        store.init_normal(layer_key(l, "ff.w2"), rng, 0.02);
        store.add(layer_key(l, "ff.b2"), {d});
    }
}

namespace {

Var transformer_block(const Var& x, ParamContext& params, int layer, const EncoderConfig& cfg) {
    const int d = cfg.embed_dim;
    const int dh = d / cfg.num_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Var normed = layernorm(x, params[layer_key(layer, "ln1.gamma")],
                           params[layer_key(layer, "ln1.beta")]);
    Var q = matmul_v(normed, params[layer_key(layer, "attn.wq")]);
    Var k = matmul_v(normed, params[layer_key(layer, "attn.wk")]);
    Var v = matmul_v(normed, params[layer_key(layer, "attn.wv")]);
    Var heads;
    for (int h = 0; h < cfg.num_heads; ++h) {
        Var qh = slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = slice_cols(v, h * dh, (h + 1) * dh);
        Var attn = softmax_rows(scale(matmul_nt_v(qh, kh), inv_sqrt));
        Var out = matmul_v(attn, vh);
        heads = h == 0 ? out : concat_cols(heads, out);
    }
    Var attn_out = add_rowvec(matmul_v(heads, params[layer_key(layer, "attn.wo")]),
                              params[layer_key(layer, "attn.bo")]);
    Var h1 = add(x, attn_out);

    Var normed2 = layernorm(h1, params[layer_key(layer, "ln2.gamma")],
                            params[layer_key(layer, "ln2.beta")]);
    Var ff = add_rowvec(matmul_v(relu(add_rowvec(matmul_v(normed2, params[layer_key(layer, "ff.w1")]),
                                                 params[layer_key(layer, "ff.b1")])),
                                 params[layer_key(layer, "ff.w2")]),
                        params[layer_key(layer, "ff.b2")]);
    return add(h1, ff);
}

}  // namespace

Var encode_tokens(const std::vector<Chunk>& chunks, ParamContext& params,
                  const EncoderConfig& cfg) {
    Var embed = params["encoder.embed"];
    Var pos = params["encoder.pos"];
    int total = 0;  // number of distinct tokens; windows may overlap
    for (const Chunk& c : chunks) {
        if (static_cast<int>(c.token_ids.size()) != kChunkLen)
            throw std::invalid_argument("encode_tokens: chunk length must be 512");
        total = std::max(total, c.payload_end);
    }
    if (total == 0) return Var();  // empty document

    std::vector<Var> window_outputs;
    std::vector<int> token_of_row;  // flat row -> token index in T
    for (const Chunk& c : chunks) {
        const int payload = c.payload_end - c.payload_begin;
        if (payload == 0) continue;
        // Real tokens only: [CLS] + payload + [SEP]; trailing pads carry no
        // word index and never feed the outputs.
        std::vector<int> ids(c.token_ids.begin(), c.token_ids.begin() + payload + 2);
        std::vector<int> positions(ids.size());
        for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
        Var x = add(select_rows(embed, ids), select_rows(pos, positions));
        for (int l = 0; l < cfg.num_layers; ++l) x = transformer_block(x, params, l, cfg);
        std::vector<int> payload_rows(static_cast<std::size_t>(payload));
        for (int i = 0; i < payload; ++i) payload_rows[static_cast<std::size_t>(i)] = i + 1;
        window_outputs.push_back(select_rows(x, payload_rows));
        for (int i = 0; i < payload; ++i) token_of_row.push_back(c.payload_begin + i);
    }

    // Stack window outputs and average rows covering the same token (only
    // relevant for overlapping windows).
    Var stacked = window_outputs.size() == 1 ? window_outputs[0] : vstack(window_outputs);
    return aggregate_rows(stacked, token_of_row, total);
}

Var aggregate_word_embeddings(const Var& token_embeddings, const TokenSequence& tokens) {
    if (!token_embeddings || tokens.token_ids.empty()) return Var();
    return aggregate_rows(token_embeddings, tokens.word_index, tokens.num_words);
}

}  // namespace vbg
