#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "vbg/tensor.hpp"

namespace vbg {

// Reverse-mode autodiff over Tensor values. Nodes form a DAG held together
// by shared_ptr; backward() runs a topological sweep from the loss node.
struct VarNode {
    Tensor value;
    Tensor grad;  // allocated on demand
    bool requires_grad = false;
    std::string name;  // leaves only
    std::vector<std::shared_ptr<VarNode>> parents;
    std::function<void(VarNode&)> backprop;  // reads this->grad, accumulates into parents

    Tensor& ensure_grad() {
        if (grad.empty()) grad = Tensor::zeros_like(value);
        return grad;
    }
};

using Var = std::shared_ptr<VarNode>;

Var make_leaf(Tensor value, bool requires_grad, std::string name = "");
Var make_const(Tensor value);

// Seeds d(out)/d(out) = 1 and sweeps the graph. `out` must be scalar-shaped
// (numel 1) unless seed is provided.
void backward(const Var& out);
void backward(const Var& out, const Tensor& seed);

// ---- elementwise / linear algebra ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_rowvec(const Var& a, const Var& rowvec);  // a: {N,K}, rowvec: {K}
Var matmul_v(const Var& a, const Var& b);
Var matmul_nt_v(const Var& a, const Var& b);  // a · bᵀ
Var relu(const Var& a);
Var sigmoid_v(const Var& a);
Var tanh_v(const Var& a);
Var sum_all(const Var& a);   // -> {1}
Var mean_all(const Var& a);  // -> {1}

// ---- shape ops ----
Var reshape(const Var& a, std::vector<int> shape);
Var select_rows(const Var& a, std::vector<int> rows);
Var slice_cols(const Var& a, int c0, int c1);
Var concat_cols(const Var& a, const Var& b);
Var concat_rows(const std::vector<Var>& rows);   // each {1,K}
Var vstack(const std::vector<Var>& blocks);      // each {r_i,K}
Var chw_to_rows(const Var& x);                   // {C,H,W} -> {H*W,C}

// ---- softmax / losses ----
Var softmax_rows(const Var& a);
Var logsumexp_vec(const Var& a);  // {K} or {1,K} -> {1}
// Mean over rows of w[label] * CE(logits_row, label); divides by row count.
Var weighted_ce_mean(const Var& logits, const std::vector<int>& labels,
                     const std::vector<double>& class_weights);

// ---- CRF primitives ----
// next_j = logsumexp_i(alpha_i + T_{i,j}) + e_j ; alpha,e: {K}, T: {K,K}
Var crf_step(const Var& alpha, const Var& trans, const Var& emit_row);
// sum_i E[i,y_i] + sum_i T[y_i,y_{i+1}] -> {1}
Var crf_gold_score(const Var& emissions, const Var& trans, const std::vector<int>& y);

// ---- normalization / regularization ----
Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var dropout(const Var& x, double rate, std::mt19937_64& rng, bool training);

// ---- spatial ops on {C,H,W} maps ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample2x(const Var& x);
Var crop_hw(const Var& x, int h, int w);
Var pad_hw(const Var& x, int h, int w);  // zero-pad bottom/right to (h,w)

// Scatter word embeddings into a grid. owners[y*gw+x] is the word index whose
// embedding fills cell (x,y), or -1 for background. emb: {N,d} -> {d,gh,gw}.
Var scatter_grid(const Var& emb, const std::vector<int>& owners, int gh, int gw);

// Mean of token rows sharing a word index. tok: {M,d} -> {N,d}.
Var aggregate_rows(const Var& tok, const std::vector<int>& word_index, int n_words);

struct RoiBox {
    double x0, y0, x1, y1;  // feature-map coordinates
};
// ROIAlign with 2x2 regular samples per bin. map: {C,H,W} -> {C,out_h,out_w}.
Var roi_align_v(const Var& map, const RoiBox& box, int out_h, int out_w);

}  // namespace vbg
