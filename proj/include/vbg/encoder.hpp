#pragma once

#include <random>

#include "vbg/params.hpp"
#include "vbg/text.hpp"

namespace vbg {

struct EncoderConfig {
    int vocab_size = 0;
    int embed_dim = 64;   // d
    int num_layers = 2;   // L
    int num_heads = 4;
    int ff_mult = 4;      // feed-forward width = ff_mult * d
    int max_positions = kChunkLen;
};

// Registers "encoder.*" parameters and initializes them.
void encoder_init(ParamStore& store, const EncoderConfig& cfg, std::mt19937_64& rng);

// Embeds the chunks and runs the pre-norm transformer stack. Returns one row
// per payload token, in TokenSequence order: {M, d}. Overlapping windows are
// averaged per token. Specials are never emitted (they carry no word index).
Var encode_tokens(const std::vector<Chunk>& chunks, ParamContext& params,
                  const EncoderConfig& cfg);

// E(w_j) = mean of its token embeddings. {M,d} -> {N,d}.
Var aggregate_word_embeddings(const Var& token_embeddings, const TokenSequence& tokens);

}  // namespace vbg
