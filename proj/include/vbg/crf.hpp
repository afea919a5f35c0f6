#pragma once

#include <random>

#include "vbg/params.hpp"

namespace vbg {

struct CrfHeadConfig {
    int input_dim = 1024;   // fused word feature width
    int hidden_dim = 512;   // per direction
    int num_labels = 0;     // C+1
};

void crf_head_init(ParamStore& store, const CrfHeadConfig& cfg, std::mt19937_64& rng);

// BiLSTM over the fused word features, projected to emission scores {N, C+1}.
Var bilstm_emissions(const Var& features, ParamContext& params, const CrfHeadConfig& cfg);

// score(D,y) = sum_i E[i,y_i] + sum_i T[y_i,y_{i+1}] on plain tensors.
double crf_score(const Tensor& emissions, const Tensor& transitions, const std::vector<int>& y);

// log sum over all label sequences of exp(score), forward algorithm in
// log-space.
double crf_log_partition(const Tensor& emissions, const Tensor& transitions);

// Differentiable NLL: log-partition minus gold score.
Var crf_nll(const Var& emissions, const Var& transitions, const std::vector<int>& y);

struct ViterbiResult {
    std::vector<int> labels;
    double score = 0.0;
};

// Argmax sequence; ties broken toward the lowest label id.
ViterbiResult viterbi_decode(const Tensor& emissions, const Tensor& transitions);

}  // namespace vbg
