#include "vbg/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace vbg {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

namespace {

Var make_node(Tensor value, std::vector<Var> parents) {
    auto n = std::make_shared<VarNode>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

bool wants(const Var& p) { return p->requires_grad; }

void check(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

Var make_leaf(Tensor value, bool requires_grad, std::string name) {
    auto n = std::make_shared<VarNode>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->name = std::move(name);
    return n;
}

Var make_const(Tensor value) { return make_leaf(std::move(value), false); }

void backward(const Var& out, const Tensor& seed) {
    check(out->value.same_shape(seed), "backward: seed shape mismatch");
    // Iterative post-order topological sort.
    std::vector<VarNode*> order;
    std::unordered_set<VarNode*> seen;
    std::vector<std::pair<VarNode*, std::size_t>> stack;
    stack.emplace_back(out.get(), 0);
    seen.insert(out.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            VarNode* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    out->ensure_grad().add_(seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        VarNode* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

void backward(const Var& out) {
    check(out->value.numel() == 1, "backward: non-scalar output needs an explicit seed");
    Tensor seed(out->value.shape(), 1.0);
    backward(out, seed);
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    check(a->value.same_shape(b->value), "add: shape mismatch");
    Tensor v = a->value;
    v.add_(b->value);
    Var n = make_node(std::move(v), {a, b});
    n->backprop = [a, b](VarNode& self) {
        if (wants(a)) a->ensure_grad().add_(self.grad);
        if (wants(b)) b->ensure_grad().add_(self.grad);
    };
    return n;
}

Var sub(const Var& a, const Var& b) {
    check(a->value.same_shape(b->value), "sub: shape mismatch");
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] -= b->value[i];
    Var n = make_node(std::move(v), {a, b});
    n->backprop = [a, b](VarNode& self) {
        if (wants(a)) a->ensure_grad().add_(self.grad);
        if (wants(b)) {
            Tensor& g = b->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    };
    return n;
}

Var mul(const Var& a, const Var& b) {
    check(a->value.same_shape(b->value), "mul: shape mismatch");
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] *= b->value[i];
    Var n = make_node(std::move(v), {a, b});
    n->backprop = [a, b](VarNode& self) {
        if (wants(a)) {
            Tensor& g = a->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * b->value[i];
        }
        if (wants(b)) {
            Tensor& g = b->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * a->value[i];
        }
    };
    return n;
}

Var scale(const Var& a, double s) {
    Tensor v = a->value;
    v.scale_(s);
    Var n = make_node(std::move(v), {a});
    n->backprop = [a, s](VarNode& self) {
        if (!wants(a)) return;
        Tensor& g = a->ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += s * self.grad[i];
    };
    return n;
}

Var add_rowvec(const Var& a, const Var& rowvec) {
    check(a->value.rank() == 2 && rowvec->value.rank() == 1 &&
              a->value.dim(1) == rowvec->value.dim(0),
          "add_rowvec: shape mismatch");
    const int rows = a->value.dim(0), cols = a->value.dim(1);
    Tensor v = a->value;
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) v.at(i, j) += rowvec->value[j];
    Var n = make_node(std::move(v), {a, rowvec});
    n->backprop = [a, rowvec, rows, cols](VarNode& self) {
        if (wants(a)) a->ensure_grad().add_(self.grad);
        if (wants(rowvec)) {
            Tensor& g = rowvec->ensure_grad();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) g[j] += self.grad.at(i, j);
        }
    };
    return n;
}

Var matmul_v(const Var& a, const Var& b) {
    Var n = make_node(matmul(a->value, b->value), {a, b});
    n->backprop = [a, b](VarNode& self) {
        if (wants(a)) a->ensure_grad().add_(matmul_nt(self.grad, b->value));
        if (wants(b)) b->ensure_grad().add_(matmul_tn(a->value, self.grad));
    };
    return n;
}

Var matmul_nt_v(const Var& a, const Var& b) {
    Var n = make_node(matmul_nt(a->value, b->value), {a, b});
    n->backprop = [a, b](VarNode& self) {
        if (wants(a)) a->ensure_grad().add_(matmul(self.grad, b->value));
        if (wants(b)) b->ensure_grad().add_(matmul_tn(self.grad, a->value));
    };
    return n;
}

Var relu(const Var& a) {
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = std::max(0.0, v[i]);
    Var n = make_node(std::move(v), {a});
    n->backprop = [a](VarNode& self) {
        if (!wants(a)) return;
        Tensor& g = a->ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i)
            if (a->value[i] > 0.0) g[i] += self.grad[i];
    };
    return n;
}

Var sigmoid_v(const Var& a) {
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = 1.0 / (1.0 + std::exp(-v[i]));
    Var n = make_node(std::move(v), {a});
    n->backprop = [a](VarNode& self) {
        if (!wants(a)) return;
        Tensor& g = a->ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            double s = self.value[i];
            g[i] += self.grad[i] * s * (1.0 - s);
        }
    };
    return n;
}

Var tanh_v(const Var& a) {
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = std::tanh(v[i]);
    Var n = make_node(std::move(v), {a});
    n->backprop = [a](VarNode& self) {
        if (!wants(a)) return;
        Tensor& g = a->ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            double t = self.value[i];
            g[i] += self.grad[i] * (1.0 - t * t);
        }
    };
    return n;
}

Var sum_all(const Var& a) {
    double s = 0.0;
    for (std::int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
    Var n = make_node(Tensor({1}, {s}), {a});
    n->backprop = [a](VarNode& self) {
        if (!wants(a)) return;
        Tensor& g = a->ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0];
    };
    return n;
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a->value.numel())); }

// ---------------------------------------------------------------- shape ops

Var reshape(const Var& a, std::vector<int> shape) {
    check(Tensor::numel_of(shape) == a->value.numel(), "reshape: numel mismatch");
    Tensor v(shape, a->value.vec());
    Var n = make_node(std::move(v), {a});
    n->backprop = [a](VarNode& self) {
        if (!wants(a)) return;
        Tensor& g = a->ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    };
    return n;
}

Var select_rows(const Var& a, std::vector<int> rows) {
    check(a->value.rank() == 2, "select_rows: need 2D");
    const int cols = a->value.dim(1);
    Tensor v({static_cast<int>(rows.size()), cols});
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (int j = 0; j < cols; ++j) v.at(static_cast<int>(r), j) = a->value.at(rows[r], j);
    Var n = make_node(std::move(v), {a});
    n->backprop = [a, rows = std::move(rows), cols](VarNode& self) {
        if (!wants(a)) return;
        Tensor& g = a->ensure_grad();
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (int j = 0; j < cols; ++j)
                g.at(rows[r], j) += self.grad.at(static_cast<int>(r), j);
    };
    return n;
}

Var slice_cols(const Var& a, int c0, int c1) {
    check(a->value.rank() == 2 && 0 <= c0 && c0 < c1 && c1 <= a->value.dim(1),
          "slice_cols: bad range");
    const int rows = a->value.dim(0);
    Tensor v({rows, c1 - c0});
    for (int i = 0; i < rows; ++i)
        for (int j = c0; j < c1; ++j) v.at(i, j - c0) = a->value.at(i, j);
    Var n = make_node(std::move(v), {a});
    n->backprop = [a, c0, c1, rows](VarNode& self) {
        if (!wants(a)) return;
        Tensor& g = a->ensure_grad();
        for (int i = 0; i < rows; ++i)
            for (int j = c0; j < c1; ++j) g.at(i, j) += self.grad.at(i, j - c0);
    };
    return n;
}

Var concat_cols(const Var& a, const Var& b) {
    check(a->value.rank() == 2 && b->value.rank() == 2 && a->value.dim(0) == b->value.dim(0),
          "concat_cols: shape mismatch");
    const int rows = a->value.dim(0), ca = a->value.dim(1), cb = b->value.dim(1);
    Tensor v({rows, ca + cb});
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < ca; ++j) v.at(i, j) = a->value.at(i, j);
        for (int j = 0; j < cb; ++j) v.at(i, ca + j) = b->value.at(i, j);
    }
    Var n = make_node(std::move(v), {a, b});
    n->backprop = [a, b, rows, ca, cb](VarNode& self) {
        if (wants(a)) {
            Tensor& g = a->ensure_grad();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < ca; ++j) g.at(i, j) += self.grad.at(i, j);
        }
        if (wants(b)) {
            Tensor& g = b->ensure_grad();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cb; ++j) g.at(i, j) += self.grad.at(i, ca + j);
        }
    };
    return n;
}

Var concat_rows(const std::vector<Var>& rows) {
    check(!rows.empty(), "concat_rows: empty");
    int cols = rows[0]->value.numel() ? static_cast<int>(rows[0]->value.numel()) : 0;
    Tensor v({static_cast<int>(rows.size()), cols});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        check(rows[r]->value.numel() == cols, "concat_rows: width mismatch");
        for (int j = 0; j < cols; ++j) v.at(static_cast<int>(r), j) = rows[r]->value[j];
    }
    Var n = make_node(std::move(v), rows);
    n->backprop = [rows, cols](VarNode& self) {
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (!wants(rows[r])) continue;
            Tensor& g = rows[r]->ensure_grad();
            for (int j = 0; j < cols; ++j) g[j] += self.grad.at(static_cast<int>(r), j);
        }
    };
    return n;
}

Var vstack(const std::vector<Var>& blocks) {
    check(!blocks.empty(), "vstack: empty");
    const int cols = blocks[0]->value.dim(1);
    int rows = 0;
    for (const Var& b : blocks) {
        check(b->value.rank() == 2 && b->value.dim(1) == cols, "vstack: width mismatch");
        rows += b->value.dim(0);
    }
    Tensor v({rows, cols});
    int r = 0;
    for (const Var& b : blocks) {
        for (int i = 0; i < b->value.dim(0); ++i, ++r)
            for (int j = 0; j < cols; ++j) v.at(r, j) = b->value.at(i, j);
    }
    Var n = make_node(std::move(v), blocks);
    n->backprop = [blocks, cols](VarNode& self) {
        int r = 0;
        for (const Var& b : blocks) {
            if (wants(b)) {
                Tensor& g = b->ensure_grad();
                for (int i = 0; i < b->value.dim(0); ++i)
                    for (int j = 0; j < cols; ++j) g.at(i, j) += self.grad.at(r + i, j);
            }
            r += b->value.dim(0);
        }
    };
    return n;
}

Var chw_to_rows(const Var& x) {
    check(x->value.rank() == 3, "chw_to_rows: need 3D");
    const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    Tensor v({h * w, c});
    for (int k = 0; k < c; ++k)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) v.at(y * w + xx, k) = x->value.at(k, y, xx);
    Var n = make_node(std::move(v), {x});
    n->backprop = [x, c, h, w](VarNode& self) {
        if (!wants(x)) return;
        Tensor& g = x->ensure_grad();
        for (int k = 0; k < c; ++k)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) g.at(k, y, xx) += self.grad.at(y * w + xx, k);
    };
    return n;
}

// ---------------------------------------------------------------- softmax / losses

Var softmax_rows(const Var& a) {
    check(a->value.rank() == 2, "softmax_rows: need 2D");
    const int rows = a->value.dim(0), cols = a->value.dim(1);
    Tensor v = a->value;
    for (int i = 0; i < rows; ++i) {
        double m = -1e300;
        for (int j = 0; j < cols; ++j) m = std::max(m, v.at(i, j));
        double z = 0.0;
        for (int j = 0; j < cols; ++j) {
            v.at(i, j) = std::exp(v.at(i, j) - m);
            z += v.at(i, j);
        }
        for (int j = 0; j < cols; ++j) v.at(i, j) /= z;
    }
    Var n = make_node(std::move(v), {a});
    n->backprop = [a, rows, cols](VarNode& self) {
        if (!wants(a)) return;
        Tensor& g = a->ensure_grad();
        for (int i = 0; i < rows; ++i) {
            double dot = 0.0;
            for (int j = 0; j < cols; ++j) dot += self.grad.at(i, j) * self.value.at(i, j);
            for (int j = 0; j < cols; ++j)
                g.at(i, j) += self.value.at(i, j) * (self.grad.at(i, j) - dot);
        }
    };
    return n;
}

Var logsumexp_vec(const Var& a) {
    const std::int64_t k = a->value.numel();
    check(k >= 1, "logsumexp_vec: empty");
    double m = -1e300;
    for (std::int64_t i = 0; i < k; ++i) m = std::max(m, a->value[i]);
    double z = 0.0;
    for (std::int64_t i = 0; i < k; ++i) z += std::exp(a->value[i] - m);
    Var n = make_node(Tensor({1}, {m + std::log(z)}), {a});
    n->backprop = [a, m, z](VarNode& self) {
        if (!wants(a)) return;
        Tensor& g = a->ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i)
            g[i] += self.grad[0] * std::exp(a->value[i] - m) / z;
    };
    return n;
}

Var weighted_ce_mean(const Var& logits, const std::vector<int>& labels,
                     const std::vector<double>& class_weights) {
    check(logits->value.rank() == 2, "weighted_ce_mean: need 2D logits");
    const int rows = logits->value.dim(0), cols = logits->value.dim(1);
    check(static_cast<int>(labels.size()) == rows, "weighted_ce_mean: label count mismatch");
    check(static_cast<int>(class_weights.size()) == cols, "weighted_ce_mean: weight count mismatch");
    check(rows >= 1, "weighted_ce_mean: empty batch");
    // Cache per-row softmax for backward.
    auto probs = std::make_shared<Tensor>(logits->value);
    double loss = 0.0;
    for (int i = 0; i < rows; ++i) {
        check(labels[i] >= 0 && labels[i] < cols, "weighted_ce_mean: label out of range");
        double m = -1e300;
        for (int j = 0; j < cols; ++j) m = std::max(m, probs->at(i, j));
        double z = 0.0;
        for (int j = 0; j < cols; ++j) {
            probs->at(i, j) = std::exp(probs->at(i, j) - m);
            z += probs->at(i, j);
        }
        for (int j = 0; j < cols; ++j) probs->at(i, j) /= z;
        loss -= class_weights[labels[i]] * std::log(std::max(probs->at(i, labels[i]), 1e-300));
    }
    loss /= rows;
    Var n = make_node(Tensor({1}, {loss}), {logits});
    n->backprop = [logits, labels, class_weights, probs, rows, cols](VarNode& self) {
        if (!wants(logits)) return;
        Tensor& g = logits->ensure_grad();
        const double gs = self.grad[0] / rows;
        for (int i = 0; i < rows; ++i) {
            const double w = class_weights[labels[i]];
            for (int j = 0; j < cols; ++j) {
                double t = probs->at(i, j) - (j == labels[i] ? 1.0 : 0.0);
                g.at(i, j) += gs * w * t;
            }
        }
    };
    return n;
}

// ---------------------------------------------------------------- CRF

Var crf_step(const Var& alpha, const Var& trans, const Var& emit_row) {
    const int k = static_cast<int>(alpha->value.numel());
    check(trans->value.rank() == 2 && trans->value.dim(0) == k && trans->value.dim(1) == k,
          "crf_step: transition shape mismatch");
    check(emit_row->value.numel() == k, "crf_step: emission width mismatch");
    // soft[i*k+j] = softmax over i of alpha_i + T_ij
    auto soft = std::make_shared<Tensor>(Tensor({k, k}));
    Tensor out({k});
    for (int j = 0; j < k; ++j) {
        double m = -1e300;
        for (int i = 0; i < k; ++i)
            m = std::max(m, alpha->value[i] + trans->value.at(i, j));
        double z = 0.0;
        for (int i = 0; i < k; ++i) {
            double e = std::exp(alpha->value[i] + trans->value.at(i, j) - m);
            soft->at(i, j) = e;
            z += e;
        }
        for (int i = 0; i < k; ++i) soft->at(i, j) /= z;
        out[j] = m + std::log(z) + emit_row->value[j];
    }
    Var n = make_node(std::move(out), {alpha, trans, emit_row});
    n->backprop = [alpha, trans, emit_row, soft, k](VarNode& self) {
        for (int j = 0; j < k; ++j) {
            const double gj = self.grad[j];
            if (gj == 0.0) continue;
            if (wants(emit_row)) emit_row->ensure_grad()[j] += gj;
            for (int i = 0; i < k; ++i) {
                const double s = gj * soft->at(i, j);
                if (wants(alpha)) alpha->ensure_grad()[i] += s;
                if (wants(trans)) trans->ensure_grad().at(i, j) += s;
            }
        }
    };
    return n;
}

Var crf_gold_score(const Var& emissions, const Var& trans, const std::vector<int>& y) {
    const int n_pos = emissions->value.dim(0), k = emissions->value.dim(1);
    check(static_cast<int>(y.size()) == n_pos && n_pos >= 1, "crf_gold_score: length mismatch");
    double s = 0.0;
    for (int i = 0; i < n_pos; ++i) {
        check(y[i] >= 0 && y[i] < k, "crf_gold_score: label out of range");
        s += emissions->value.at(i, y[i]);
        if (i + 1 < n_pos) s += trans->value.at(y[i], y[i + 1]);
    }
    Var n = make_node(Tensor({1}, {s}), {emissions, trans});
    n->backprop = [emissions, trans, y, n_pos](VarNode& self) {
        const double g = self.grad[0];
        for (int i = 0; i < n_pos; ++i) {
            if (wants(emissions)) emissions->ensure_grad().at(i, y[i]) += g;
            if (i + 1 < n_pos && wants(trans)) trans->ensure_grad().at(y[i], y[i + 1]) += g;
        }
    };
    return n;
}

// ---------------------------------------------------------------- normalization

Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    check(x->value.rank() == 2, "layernorm: need 2D");
    const int rows = x->value.dim(0), cols = x->value.dim(1);
    check(gamma->value.numel() == cols && beta->value.numel() == cols, "layernorm: affine shape");
    auto xhat = std::make_shared<Tensor>(Tensor({rows, cols}));
    auto inv_sigma = std::make_shared<std::vector<double>>(rows);
    Tensor v({rows, cols});
    for (int i = 0; i < rows; ++i) {
        double mu = 0.0;
        for (int j = 0; j < cols; ++j) mu += x->value.at(i, j);
        mu /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) {
            double d = x->value.at(i, j) - mu;
            var += d * d;
        }
        var /= cols;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[i] = inv;
        for (int j = 0; j < cols; ++j) {
            xhat->at(i, j) = (x->value.at(i, j) - mu) * inv;
            v.at(i, j) = xhat->at(i, j) * gamma->value[j] + beta->value[j];
        }
    }
    Var n = make_node(std::move(v), {x, gamma, beta});
    n->backprop = [x, gamma, beta, xhat, inv_sigma, rows, cols](VarNode& self) {
        for (int i = 0; i < rows; ++i) {
            double mean_gy = 0.0, mean_gyx = 0.0;
            for (int j = 0; j < cols; ++j) {
                const double gy = self.grad.at(i, j) * gamma->value[j];
                mean_gy += gy;
                mean_gyx += gy * xhat->at(i, j);
            }
            mean_gy /= cols;
            mean_gyx /= cols;
            if (wants(x)) {
                Tensor& g = x->ensure_grad();
                for (int j = 0; j < cols; ++j) {
                    const double gy = self.grad.at(i, j) * gamma->value[j];
                    g.at(i, j) += (*inv_sigma)[i] * (gy - mean_gy - xhat->at(i, j) * mean_gyx);
                }
            }
            if (wants(gamma)) {
                Tensor& g = gamma->ensure_grad();
                for (int j = 0; j < cols; ++j) g[j] += self.grad.at(i, j) * xhat->at(i, j);
            }
            if (wants(beta)) {
                Tensor& g = beta->ensure_grad();
                for (int j = 0; j < cols; ++j) g[j] += self.grad.at(i, j);
            }
        }
    };
    return n;
}

Var dropout(const Var& x, double rate, std::mt19937_64& rng, bool training) {
    if (!training || rate <= 0.0) return x;
    check(rate < 1.0, "dropout: rate must be < 1");
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x->value.numel()));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Tensor v = x->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) {
        const double m = uni(rng) < keep ? 1.0 / keep : 0.0;
        (*mask)[static_cast<std::size_t>(i)] = m;
        v[i] *= m;
    }
    Var n = make_node(std::move(v), {x});
    n->backprop = [x, mask](VarNode& self) {
        if (!wants(x)) return;
        Tensor& g = x->ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i)
            g[i] += self.grad[i] * (*mask)[static_cast<std::size_t>(i)];
    };
    return n;
}

// ---------------------------------------------------------------- spatial

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    check(x->value.rank() == 3 && w->value.rank() == 4, "conv2d: shape ranks");
    const int c = x->value.dim(0), h = x->value.dim(1), ww = x->value.dim(2);
    const int o = w->value.dim(0), kc = w->value.dim(1), kh = w->value.dim(2), kw = w->value.dim(3);
    check(kc == c, "conv2d: channel mismatch");
    check(b->value.numel() == o, "conv2d: bias mismatch");
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (ww + 2 * pad - kw) / stride + 1;
    check(ho >= 1 && wo >= 1, "conv2d: output collapses");
    const int patch = c * kh * kw, cells = ho * wo;

    auto cols = std::make_shared<Tensor>(Tensor({patch, cells}));
    for (int ci = 0; ci < c; ++ci)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const int row = (ci * kh + ky) * kw + kx;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        double val = 0.0;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < ww) val = x->value.at(ci, iy, ix);
                        cols->at(row, oy * wo + ox) = val;
                    }
                }
            }

    Tensor out({o, ho, wo});
    MMap(out.data(), o, cells) =
        CMap(w->value.data(), o, patch) * CMap(cols->data(), patch, cells);
    for (int oc = 0; oc < o; ++oc)
        for (int cell = 0; cell < cells; ++cell) out[static_cast<std::int64_t>(oc) * cells + cell] += b->value[oc];

    Var n = make_node(std::move(out), {x, w, b});
    n->backprop = [x, w, b, cols, c, h, ww, o, kh, kw, stride, pad, ho, wo, patch,
                   cells](VarNode& self) {
        CMap gout(self.grad.data(), o, cells);
        if (wants(b)) {
            Tensor& g = b->ensure_grad();
            for (int oc = 0; oc < o; ++oc) g[oc] += gout.row(oc).sum();
        }
        if (wants(w)) {
            Tensor& g = w->ensure_grad();
            MMap(g.data(), o, patch).noalias() += gout * CMap(cols->data(), patch, cells).transpose();
        }
        if (wants(x)) {
            EMat gcols = CMap(w->value.data(), o, patch).transpose() * gout;
            Tensor& g = x->ensure_grad();
            for (int ci = 0; ci < c; ++ci)
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const int row = (ci * kh + ky) * kw + kx;
                        for (int oy = 0; oy < ho; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= ww) continue;
                                g.at(ci, iy, ix) += gcols(row, oy * wo + ox);
                            }
                        }
                    }
        }
    };
    return n;
}

Var upsample2x(const Var& x) {
    check(x->value.rank() == 3, "upsample2x: need 3D");
    const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    Tensor v({c, 2 * h, 2 * w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx) v.at(ci, y, xx) = x->value.at(ci, y / 2, xx / 2);
    Var n = make_node(std::move(v), {x});
    n->backprop = [x, c, h, w](VarNode& self) {
        if (!wants(x)) return;
        Tensor& g = x->ensure_grad();
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx) g.at(ci, y / 2, xx / 2) += self.grad.at(ci, y, xx);
    };
    return n;
}

Var crop_hw(const Var& x, int h, int w) {
    check(x->value.rank() == 3 && h <= x->value.dim(1) && w <= x->value.dim(2), "crop_hw: bad size");
    const int c = x->value.dim(0);
    Tensor v({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) v.at(ci, y, xx) = x->value.at(ci, y, xx);
    Var n = make_node(std::move(v), {x});
    n->backprop = [x, c, h, w](VarNode& self) {
        if (!wants(x)) return;
        Tensor& g = x->ensure_grad();
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) g.at(ci, y, xx) += self.grad.at(ci, y, xx);
    };
    return n;
}

Var pad_hw(const Var& x, int h, int w) {
    check(x->value.rank() == 3 && h >= x->value.dim(1) && w >= x->value.dim(2), "pad_hw: bad size");
    const int c = x->value.dim(0), h0 = x->value.dim(1), w0 = x->value.dim(2);
    Tensor v({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h0; ++y)
            for (int xx = 0; xx < w0; ++xx) v.at(ci, y, xx) = x->value.at(ci, y, xx);
    Var n = make_node(std::move(v), {x});
    n->backprop = [x, c, h0, w0](VarNode& self) {
        if (!wants(x)) return;
        Tensor& g = x->ensure_grad();
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h0; ++y)
                for (int xx = 0; xx < w0; ++xx) g.at(ci, y, xx) += self.grad.at(ci, y, xx);
    };
    return n;
}

Var scatter_grid(const Var& emb, const std::vector<int>& owners, int gh, int gw) {
    check(emb->value.rank() == 2, "scatter_grid: need 2D embeddings");
    check(static_cast<int>(owners.size()) == gh * gw, "scatter_grid: owner map size");
    const int n_words = emb->value.dim(0), d = emb->value.dim(1);
    Tensor v({d, gh, gw});
    for (int y = 0; y < gh; ++y)
        for (int x = 0; x < gw; ++x) {
            const int owner = owners[y * gw + x];
            if (owner < 0) continue;
            check(owner < n_words, "scatter_grid: owner out of range");
            for (int k = 0; k < d; ++k) v.at(k, y, x) = emb->value.at(owner, k);
        }
    Var n = make_node(std::move(v), {emb});
    n->backprop = [emb, owners, gh, gw, d](VarNode& self) {
        if (!wants(emb)) return;
        Tensor& g = emb->ensure_grad();
        for (int y = 0; y < gh; ++y)
            for (int x = 0; x < gw; ++x) {
                const int owner = owners[y * gw + x];
                if (owner < 0) continue;
                for (int k = 0; k < d; ++k) g.at(owner, k) += self.grad.at(k, y, x);
            }
    };
    return n;
}

Var aggregate_rows(const Var& tok, const std::vector<int>& word_index, int n_words) {
    check(tok->value.rank() == 2, "aggregate_rows: need 2D");
    const int m = tok->value.dim(0), d = tok->value.dim(1);
    check(static_cast<int>(word_index.size()) == m, "aggregate_rows: index length");
    std::vector<int> counts(static_cast<std::size_t>(n_words), 0);
    for (int i : word_index) {
        check(i >= 0 && i < n_words, "aggregate_rows: word index out of range");
        ++counts[static_cast<std::size_t>(i)];
    }
    for (int c : counts) check(c > 0, "aggregate_rows: word with zero tokens");
    Tensor v({n_words, d});
    for (int t = 0; t < m; ++t)
        for (int k = 0; k < d; ++k) v.at(word_index[t], k) += tok->value.at(t, k);
    for (int wi = 0; wi < n_words; ++wi)
        for (int k = 0; k < d; ++k) v.at(wi, k) /= counts[static_cast<std::size_t>(wi)];
    Var n = make_node(std::move(v), {tok});
    n->backprop = [tok, word_index, counts, m, d](VarNode& self) {
        if (!wants(tok)) return;
        Tensor& g = tok->ensure_grad();
        for (int t = 0; t < m; ++t) {
            const int wi = word_index[t];
            for (int k = 0; k < d; ++k)
                g.at(t, k) += self.grad.at(wi, k) / counts[static_cast<std::size_t>(wi)];
        }
    };
    return n;
}

namespace {

struct BilinearTap {
    int idx[4];
    double w[4];
    double fx, fy;
};

BilinearTap bilinear_tap(int h, int w, double cy, double cx) {
    // Pixel centers at integer+0.5; clamp samples to the valid center range.
    double u = std::clamp(cx - 0.5, 0.0, static_cast<double>(w - 1));
    double v = std::clamp(cy - 0.5, 0.0, static_cast<double>(h - 1));
    int x0 = std::min(static_cast<int>(u), w - 2 < 0 ? 0 : w - 2);
    int y0 = std::min(static_cast<int>(v), h - 2 < 0 ? 0 : h - 2);
    int x1 = std::min(x0 + 1, w - 1);
    int y1 = std::min(y0 + 1, h - 1);
    double fx = u - x0, fy = v - y0;
    BilinearTap t;
    t.fx = fx;
    t.fy = fy;
    t.idx[0] = y0 * w + x0;
    t.idx[1] = y0 * w + x1;
    t.idx[2] = y1 * w + x0;
    t.idx[3] = y1 * w + x1;
    t.w[0] = (1 - fy) * (1 - fx);
    t.w[1] = (1 - fy) * fx;
    t.w[2] = fy * (1 - fx);
    t.w[3] = fy * fx;
    return t;
}

}  // namespace

Var roi_align_v(const Var& map, const RoiBox& box, int out_h, int out_w) {
    check(map->value.rank() == 3, "roi_align: need 3D map");
    const int c = map->value.dim(0), h = map->value.dim(1), w = map->value.dim(2);
    const double bh = (box.y1 - box.y0) / out_h;
    const double bw = (box.x1 - box.x0) / out_w;
    check(bh > 0 && bw > 0, "roi_align: degenerate box");
    // 2x2 regular samples per bin at quarter offsets.
    auto taps = std::make_shared<std::vector<BilinearTap>>();
    taps->reserve(static_cast<std::size_t>(out_h) * out_w * 4);
    for (int by = 0; by < out_h; ++by)
        for (int bx = 0; bx < out_w; ++bx)
            for (int sy = 0; sy < 2; ++sy)
                for (int sx = 0; sx < 2; ++sx) {
                    const double cy = box.y0 + bh * (by + 0.25 + 0.5 * sy);
                    const double cx = box.x0 + bw * (bx + 0.25 + 0.5 * sx);
                    taps->push_back(bilinear_tap(h, w, cy, cx));
                }
    Tensor v({c, out_h, out_w});
    for (int ci = 0; ci < c; ++ci) {
        const double* plane = map->value.data() + static_cast<std::int64_t>(ci) * h * w;
        std::size_t ti = 0;
        for (int cell = 0; cell < out_h * out_w; ++cell) {
            double acc = 0.0;
            for (int s = 0; s < 4; ++s, ++ti) {
                // factored lerp form: exact on constant maps (the deltas vanish)
                const BilinearTap& t = (*taps)[ti];
                const double top = plane[t.idx[0]] + t.fx * (plane[t.idx[1]] - plane[t.idx[0]]);
                const double bot = plane[t.idx[2]] + t.fx * (plane[t.idx[3]] - plane[t.idx[2]]);
                acc += top + t.fy * (bot - top);
            }
            v[static_cast<std::int64_t>(ci) * out_h * out_w + cell] = acc / 4.0;
        }
    }
    Var n = make_node(std::move(v), {map});
    n->backprop = [map, taps, c, h, w, out_h, out_w](VarNode& self) {
        if (!wants(map)) return;
        Tensor& g = map->ensure_grad();
        for (int ci = 0; ci < c; ++ci) {
            double* plane = g.data() + static_cast<std::int64_t>(ci) * h * w;
            std::size_t ti = 0;
            for (int cell = 0; cell < out_h * out_w; ++cell) {
                const double gc = self.grad[static_cast<std::int64_t>(ci) * out_h * out_w + cell] / 4.0;
                for (int s = 0; s < 4; ++s, ++ti) {
                    const BilinearTap& t = (*taps)[ti];
                    for (int q = 0; q < 4; ++q) plane[t.idx[q]] += gc * t.w[q];
                }
            }
        }
    };
    return n;
}

}  // namespace vbg
