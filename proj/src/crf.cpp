#include "vbg/crf.hpp"

#include <cmath>
#include <stdexcept>

namespace vbg {

namespace {

void add_lstm_dir(ParamStore& store, const std::string& prefix, int in_dim, int hidden,
                  std::mt19937_64& rng) {
    store.add(prefix + ".wx", {in_dim, 4 * hidden});
    store.init_normal(prefix + ".wx", rng, std::sqrt(1.0 / in_dim));
    store.add(prefix + ".wh", {hidden, 4 * hidden});
    store.init_normal(prefix + ".wh", rng, std::sqrt(1.0 / hidden));
    store.add(prefix + ".b", {4 * hidden});
}

// One direction over the rows of `features` in the given order; returns the
// hidden state per position, indexed by original position.
std::vector<Var> lstm_pass(const Var& features, ParamContext& params, const std::string& prefix,
                           int hidden, bool backward_dir) {
    const int n = features->value.dim(0);
    Var wx = params[prefix + ".wx"];
    Var wh = params[prefix + ".wh"];
    Var b = params[prefix + ".b"];
    Var h = make_const(Tensor({1, hidden}));
    Var c = make_const(Tensor({1, hidden}));
    std::vector<Var> out(static_cast<std::size_t>(n));
    for (int step = 0; step < n; ++step) {
        const int t = backward_dir ? n - 1 - step : step;
        Var xt = select_rows(features, {t});
        Var gates = add_rowvec(add(matmul_v(xt, wx), matmul_v(h, wh)), b);
        Var in_g = sigmoid_v(slice_cols(gates, 0, hidden));
        Var forget_g = sigmoid_v(slice_cols(gates, hidden, 2 * hidden));
        Var cand = tanh_v(slice_cols(gates, 2 * hidden, 3 * hidden));
        Var out_g = sigmoid_v(slice_cols(gates, 3 * hidden, 4 * hidden));
        c = add(mul(forget_g, c), mul(in_g, cand));
        h = mul(out_g, tanh_v(c));
        out[static_cast<std::size_t>(t)] = h;
    }
    return out;
}

}  // namespace

void crf_head_init(ParamStore& store, const CrfHeadConfig& cfg, std::mt19937_64& rng) {
    add_lstm_dir(store, "crf.bilstm.fwd", cfg.input_dim, cfg.hidden_dim, rng);
    add_lstm_dir(store, "crf.bilstm.bwd", cfg.input_dim, cfg.hidden_dim, rng);
    store.add("crf.proj.w", {2 * cfg.hidden_dim, cfg.num_labels});
    store.init_normal("crf.proj.w", rng, std::sqrt(1.0 / (2 * cfg.hidden_dim)));
    store.add("crf.proj.b", {cfg.num_labels});
    store.add("crf.transitions", {cfg.num_labels, cfg.num_labels});
    store.init_normal("crf.transitions", rng, 0.01);
}

Var bilstm_emissions(const Var& features, ParamContext& params, const CrfHeadConfig& cfg) {
    if (!features || features->value.dim(0) < 1)
        throw std::invalid_argument("bilstm_emissions: empty sequence");
    const int n = features->value.dim(0);
    std::vector<Var> fwd = lstm_pass(features, params, "crf.bilstm.fwd", cfg.hidden_dim, false);
    std::vector<Var> bwd = lstm_pass(features, params, "crf.bilstm.bwd", cfg.hidden_dim, true);
    std::vector<Var> rows(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t)
        rows[static_cast<std::size_t>(t)] =
            concat_cols(fwd[static_cast<std::size_t>(t)], bwd[static_cast<std::size_t>(t)]);
    Var h = vstack(rows);  // {N, 2H}
    return add_rowvec(matmul_v(h, params["crf.proj.w"]), params["crf.proj.b"]);
}

double crf_score(const Tensor& emissions, const Tensor& transitions, const std::vector<int>& y) {
    const int n = emissions.dim(0), k = emissions.dim(1);
    if (static_cast<int>(y.size()) != n) throw std::invalid_argument("crf_score: length mismatch");
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        if (y[static_cast<std::size_t>(i)] < 0 || y[static_cast<std::size_t>(i)] >= k)
            throw std::invalid_argument("crf_score: label out of range");
        s += emissions.at(i, y[static_cast<std::size_t>(i)]);
        if (i + 1 < n) s += transitions.at(y[static_cast<std::size_t>(i)], y[static_cast<std::size_t>(i + 1)]);
    }
    return s;
}

double crf_log_partition(const Tensor& emissions, const Tensor& transitions) {
    const int n = emissions.dim(0), k = emissions.dim(1);
    if (n < 1) throw std::invalid_argument("crf_log_partition: empty sequence");
    std::vector<double> alpha(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) alpha[static_cast<std::size_t>(j)] = emissions.at(0, j);
    std::vector<double> next(static_cast<std::size_t>(k));
    for (int t = 1; t < n; ++t) {
        for (int j = 0; j < k; ++j) {
            double m = -1e300;
            for (int i = 0; i < k; ++i)
                m = std::max(m, alpha[static_cast<std::size_t>(i)] + transitions.at(i, j));
            double z = 0.0;
            for (int i = 0; i < k; ++i)
                z += std::exp(alpha[static_cast<std::size_t>(i)] + transitions.at(i, j) - m);
            next[static_cast<std::size_t>(j)] = m + std::log(z) + emissions.at(t, j);
        }
        alpha.swap(next);
    }
    double m = -1e300;
    for (double a : alpha) m = std::max(m, a);
    double z = 0.0;
    for (double a : alpha) z += std::exp(a - m);
    return m + std::log(z);
}

Var crf_nll(const Var& emissions, const Var& transitions, const std::vector<int>& y) {
    const int n = emissions->value.dim(0), k = emissions->value.dim(1);
    if (n < 1) throw std::invalid_argument("crf_nll: empty sequence");
    Var alpha = reshape(select_rows(emissions, {0}), {k});
    for (int t = 1; t < n; ++t)
        alpha = crf_step(alpha, transitions, reshape(select_rows(emissions, {t}), {k}));
    Var log_z = logsumexp_vec(alpha);
    return sub(log_z, crf_gold_score(emissions, transitions, y));
}

ViterbiResult viterbi_decode(const Tensor& emissions, const Tensor& transitions) {
    const int n = emissions.dim(0), k = emissions.dim(1);
    if (n < 1) throw std::invalid_argument("viterbi_decode: empty sequence");
    std::vector<double> best(static_cast<std::size_t>(k));
    std::vector<std::vector<int>> back(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(k), 0));
    for (int j = 0; j < k; ++j) best[static_cast<std::size_t>(j)] = emissions.at(0, j);
    std::vector<double> next(static_cast<std::size_t>(k));
    for (int t = 1; t < n; ++t) {
        for (int j = 0; j < k; ++j) {
            int arg = 0;
            double bv = best[0] + transitions.at(0, j);
            for (int i = 1; i < k; ++i) {
                // strict > keeps the lowest predecessor id on ties
                const double v = best[static_cast<std::size_t>(i)] + transitions.at(i, j);
                if (v > bv) {
                    bv = v;
                    arg = i;
                }
            }
            next[static_cast<std::size_t>(j)] = bv + emissions.at(t, j);
            back[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] = arg;
        }
        best.swap(next);
    }
    ViterbiResult res;
    int arg = 0;
    for (int j = 1; j < k; ++j)
        if (best[static_cast<std::size_t>(j)] > best[static_cast<std::size_t>(arg)]) arg = j;
    res.score = best[static_cast<std::size_t>(arg)];
    res.labels.assign(static_cast<std::size_t>(n), 0);
    res.labels[static_cast<std::size_t>(n - 1)] = arg;
    for (int t = n - 1; t > 0; --t) {
        arg = back[static_cast<std::size_t>(t)][static_cast<std::size_t>(arg)];
        res.labels[static_cast<std::size_t>(t - 1)] = arg;
    }
    return res;
}

}  // namespace vbg
