#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "ardiff/attention_mask.hpp"
#include "ardiff/errors.hpp"
#include "ardiff/mat.hpp"

namespace ardiff {

// Rectangular boolean mask for attention over a key set that may differ from
// the query set (used by the sampler's cached context).
struct BoolMat {
    int rows = 0, cols = 0;
    std::vector<uint8_t> a;

    BoolMat() = default;
    BoolMat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0) {}
    bool at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c] != 0; }
    void set(int r, int c, bool v) { a[static_cast<size_t>(r) * cols + c] = v ? 1 : 0; }
};

inline BoolMat submask(const AttentionMask& m, const std::vector<int>& qrows,
                       const std::vector<int>& krows) {
    BoolMat out(static_cast<int>(qrows.size()), static_cast<int>(krows.size()));
    for (size_t i = 0; i < qrows.size(); ++i)
        for (size_t j = 0; j < krows.size(); ++j) out.set(static_cast<int>(i), static_cast<int>(j), m.at(qrows[i], krows[j]));
    return out;
}

inline BoolMat full_mask_view(const AttentionMask& m) {
    BoolMat out(m.seq_len, m.seq_len);
    out.a = m.allowed;
    return out;
}

// ---------------------------------------------------------------------------
// Reverse-mode tape over matrices. Nodes are created in evaluation order and
// backward() walks them in reverse, so the creation order is the topological
// order. Everything runs in double precision, single-threaded, with a fixed
// iteration order — forward and backward are bit-deterministic.
// ---------------------------------------------------------------------------

class Tape {
public:
    using Id = int32_t;

    const Mat& val(Id id) const { return vals_[id]; }
    bool needs_grad(Id id) const { return needs_[id] != 0; }

    Mat& grad(Id id) {
        if (!has_grad_[id]) {
            grads_[id] = Mat(vals_[id].rows, vals_[id].cols);
            has_grad_[id] = 1;
        }
        return grads_[id];
    }
    bool has_grad(Id id) const { return has_grad_[id] != 0; }

    size_t node_count() const { return vals_.size(); }

    Id leaf(Mat v, bool requires_grad = false) {
        return push(std::move(v), requires_grad, nullptr);
    }

    Id zeros(int rows, int cols, bool requires_grad = false) {
        return leaf(Mat(rows, cols), requires_grad);
    }

    void backward(Id root) {
        if (vals_[root].rows != 1 || vals_[root].cols != 1) {
            throw ShapeMismatch("backward: root must be a scalar");
        }
        grad(root).v[0] = 1.0;
        for (Id i = root; i >= 0; --i) {
            if (has_grad_[i] && backs_[i]) backs_[i](*this);
        }
    }

    // ---- arithmetic -------------------------------------------------------

    Id add(Id a, Id b) {
        require_same_shape(vals_[a], vals_[b], "tape add");
        Mat out = vals_[a];
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += vals_[b].v[i];
        return push(std::move(out), needs(a, b), [a, b, this](Tape& t) {
            const Mat& g = t.grads_[cur_];
            if (t.needs_grad(a)) acc(t.grad(a), g);
            if (t.needs_grad(b)) acc(t.grad(b), g);
        });
    }

    Id scale(Id a, double s) {
        Mat out = vals_[a];
        for (double& x : out.v) x *= s;
        return push(std::move(out), needs(a), [a, s, this](Tape& t) {
            if (!t.needs_grad(a)) return;
            const Mat& g = t.grads_[cur_];
            Mat& ga = t.grad(a);
            for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += s * g.v[i];
        });
    }

    Id mul(Id a, Id b) {
        require_same_shape(vals_[a], vals_[b], "tape mul");
        Mat out = vals_[a];
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= vals_[b].v[i];
        return push(std::move(out), needs(a, b), [a, b, this](Tape& t) {
            const Mat& g = t.grads_[cur_];
            if (t.needs_grad(a)) {
                Mat& ga = t.grad(a);
                for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * t.vals_[b].v[i];
            }
            if (t.needs_grad(b)) {
                Mat& gb = t.grad(b);
                for (size_t i = 0; i < g.v.size(); ++i) gb.v[i] += g.v[i] * t.vals_[a].v[i];
            }
        });
    }

    Id matmul(Id a, Id b) {
        Mat out = ardiff::matmul(vals_[a], vals_[b]);
        return push(std::move(out), needs(a, b), [a, b, this](Tape& t) {
            const Mat& g = t.grads_[cur_];
            if (t.needs_grad(a)) matmul_nt_acc(g, t.vals_[b], t.grad(a));
            if (t.needs_grad(b)) matmul_tn_acc(t.vals_[a], g, t.grad(b));
        });
    }

    // a * b^T
    Id matmul_nt(Id a, Id b) {
        if (vals_[a].cols != vals_[b].cols) throw ShapeMismatch("matmul_nt: inner dims");
        Mat out(vals_[a].rows, vals_[b].rows);
        matmul_nt_acc(vals_[a], vals_[b], out);
        return push(std::move(out), needs(a, b), [a, b, this](Tape& t) {
            const Mat& g = t.grads_[cur_];
            if (t.needs_grad(a)) matmul_acc(g, t.vals_[b], t.grad(a));
            if (t.needs_grad(b)) matmul_tn_acc(g, t.vals_[a], t.grad(b));
        });
    }

    Id silu(Id a) {
        Mat out = vals_[a];
        for (double& x : out.v) x = x / (1.0 + std::exp(-x));
        return push(std::move(out), needs(a), [a, this](Tape& t) {
            if (!t.needs_grad(a)) return;
            const Mat& g = t.grads_[cur_];
            Mat& ga = t.grad(a);
            const Mat& x = t.vals_[a];
            for (size_t i = 0; i < g.v.size(); ++i) {
                const double s = 1.0 / (1.0 + std::exp(-x.v[i]));
                ga.v[i] += g.v[i] * s * (1.0 + x.v[i] * (1.0 - s));
            }
        });
    }

    // ---- row/column plumbing ----------------------------------------------

    Id gather_rows(Id table, std::vector<int> ids) {
        const Mat& tb = vals_[table];
        Mat out(static_cast<int>(ids.size()), tb.cols);
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= tb.rows) throw ShapeMismatch("gather_rows: id range");
            std::copy(tb.row_ptr(ids[i]), tb.row_ptr(ids[i]) + tb.cols,
                      out.row_ptr(static_cast<int>(i)));
        }
        return push(std::move(out), needs(table),
                    [table, ids = std::move(ids), this](Tape& t) {
                        if (!t.needs_grad(table)) return;
                        const Mat& g = t.grads_[cur_];
                        Mat& gt = t.grad(table);
                        for (size_t i = 0; i < ids.size(); ++i) {
                            double* dst = gt.row_ptr(ids[i]);
                            const double* src = g.row_ptr(static_cast<int>(i));
                            for (int c = 0; c < g.cols; ++c) dst[c] += src[c];
                        }
                    });
    }

    Id select_rows(Id a, std::vector<int> rows) { return gather_rows(a, std::move(rows)); }

    // out = a with out[rows[i]] = b[i]
    Id overwrite_rows(Id a, std::vector<int> rows, Id b) {
        const Mat& av = vals_[a];
        const Mat& bv = vals_[b];
        if (bv.rows != static_cast<int>(rows.size()) || bv.cols != av.cols) {
            throw ShapeMismatch("overwrite_rows: replacement shape");
        }
        Mat out = av;
        for (size_t i = 0; i < rows.size(); ++i) {
            std::copy(bv.row_ptr(static_cast<int>(i)), bv.row_ptr(static_cast<int>(i)) + bv.cols,
                      out.row_ptr(rows[i]));
        }
        return push(std::move(out), needs(a, b),
                    [a, b, rows = std::move(rows), this](Tape& t) {
                        const Mat& g = t.grads_[cur_];
                        if (t.needs_grad(a)) {
                            Mat masked = g;
                            for (int r : rows) std::fill(masked.row_ptr(r), masked.row_ptr(r) + masked.cols, 0.0);
                            acc(t.grad(a), masked);
                        }
                        if (t.needs_grad(b)) {
                            Mat& gb = t.grad(b);
                            for (size_t i = 0; i < rows.size(); ++i) {
                                const double* src = g.row_ptr(rows[i]);
                                double* dst = gb.row_ptr(static_cast<int>(i));
                                for (int c = 0; c < g.cols; ++c) dst[c] += src[c];
                            }
                        }
                    });
    }

    Id repeat_row(Id a, int row, int count) {
        const Mat& av = vals_[a];
        Mat out(count, av.cols);
        for (int r = 0; r < count; ++r)
            std::copy(av.row_ptr(row), av.row_ptr(row) + av.cols, out.row_ptr(r));
        return push(std::move(out), needs(a), [a, row, this](Tape& t) {
            if (!t.needs_grad(a)) return;
            const Mat& g = t.grads_[cur_];
            Mat& ga = t.grad(a);
            double* dst = ga.row_ptr(row);
            for (int r = 0; r < g.rows; ++r) {
                const double* src = g.row_ptr(r);
                for (int c = 0; c < g.cols; ++c) dst[c] += src[c];
            }
        });
    }

    Id concat_rows(std::vector<Id> parts) {
        if (parts.empty()) throw ShapeMismatch("concat_rows: empty");
        const int cols = vals_[parts[0]].cols;
        int rows = 0;
        bool any = false;
        for (Id p : parts) {
            if (vals_[p].cols != cols) throw ShapeMismatch("concat_rows: col mismatch");
            rows += vals_[p].rows;
            any = any || needs_grad(p);
        }
        Mat out(rows, cols);
        int at = 0;
        for (Id p : parts) {
            const Mat& pv = vals_[p];
            std::copy(pv.v.begin(), pv.v.end(), out.row_ptr(at));
            at += pv.rows;
        }
        return push(std::move(out), any, [parts = std::move(parts), this](Tape& t) {
            const Mat& g = t.grads_[cur_];
            int at = 0;
            for (Id p : parts) {
                const int pr = t.vals_[p].rows;
                if (t.needs_grad(p)) {
                    Mat& gp = t.grad(p);
                    for (size_t i = 0; i < gp.v.size(); ++i)
                        gp.v[i] += g.v[static_cast<size_t>(at) * g.cols + i];
                }
                at += pr;
            }
        });
    }

    Id slice_cols(Id a, int c0, int c1) {
        const Mat& av = vals_[a];
        if (!(0 <= c0 && c0 < c1 && c1 <= av.cols)) throw ShapeMismatch("slice_cols: range");
        Mat out(av.rows, c1 - c0);
        for (int r = 0; r < av.rows; ++r)
            std::copy(av.row_ptr(r) + c0, av.row_ptr(r) + c1, out.row_ptr(r));
        return push(std::move(out), needs(a), [a, c0, this](Tape& t) {
            if (!t.needs_grad(a)) return;
            const Mat& g = t.grads_[cur_];
            Mat& ga = t.grad(a);
            for (int r = 0; r < g.rows; ++r) {
                const double* src = g.row_ptr(r);
                double* dst = ga.row_ptr(r) + c0;
                for (int c = 0; c < g.cols; ++c) dst[c] += src[c];
            }
        });
    }

    Id concat_cols(std::vector<Id> parts) {
        if (parts.empty()) throw ShapeMismatch("concat_cols: empty");
        const int rows = vals_[parts[0]].rows;
        int cols = 0;
        bool any = false;
        for (Id p : parts) {
            if (vals_[p].rows != rows) throw ShapeMismatch("concat_cols: row mismatch");
            cols += vals_[p].cols;
            any = any || needs_grad(p);
        }
        Mat out(rows, cols);
        int at = 0;
        for (Id p : parts) {
            const Mat& pv = vals_[p];
            for (int r = 0; r < rows; ++r)
                std::copy(pv.row_ptr(r), pv.row_ptr(r) + pv.cols, out.row_ptr(r) + at);
            at += pv.cols;
        }
        return push(std::move(out), any, [parts = std::move(parts), this](Tape& t) {
            const Mat& g = t.grads_[cur_];
            int at = 0;
            for (Id p : parts) {
                const int pc = t.vals_[p].cols;
                if (t.needs_grad(p)) {
                    Mat& gp = t.grad(p);
                    for (int r = 0; r < g.rows; ++r) {
                        const double* src = g.row_ptr(r) + at;
                        double* dst = gp.row_ptr(r);
                        for (int c = 0; c < pc; ++c) dst[c] += src[c];
                    }
                }
                at += pc;
            }
        });
    }

    // ---- model-specific ops -----------------------------------------------

    // Per-row routed matmul: out[r] = x[r] * W[group[r]]. Group ids may alias
    // the same node (shared towers); gradients simply accumulate.
    Id group_matmul(Id x, std::array<Id, 3> w, std::shared_ptr<const std::vector<int>> group) {
        const Mat& xv = vals_[x];
        if (static_cast<int>(group->size()) != xv.rows)
            throw ShapeMismatch("group_matmul: group size");
        const int out_cols = vals_[w[0]].cols;
        for (Id wi : w) {
            if (vals_[wi].rows != xv.cols || vals_[wi].cols != out_cols)
                throw ShapeMismatch("group_matmul: weight shape");
        }
        Mat out(xv.rows, out_cols);
        for (int r = 0; r < xv.rows; ++r) {
            const Mat& W = vals_[w[(*group)[r]]];
            const double* xr = xv.row_ptr(r);
            double* orow = out.row_ptr(r);
            for (int k = 0; k < xv.cols; ++k) {
                const double xk = xr[k];
                if (xk == 0.0) continue;
                const double* wr = W.row_ptr(k);
                for (int j = 0; j < out_cols; ++j) orow[j] += xk * wr[j];
            }
        }
        bool any = needs(x) || needs_grad(w[0]) || needs_grad(w[1]) || needs_grad(w[2]);
        return push(std::move(out), any, [x, w, group = std::move(group), this](Tape& t) {
            const Mat& g = t.grads_[cur_];
            const Mat& xv = t.vals_[x];
            for (int r = 0; r < xv.rows; ++r) {
                const Id wid = w[(*group)[r]];
                const double* gr = g.row_ptr(r);
                if (t.needs_grad(x)) {
                    const Mat& W = t.vals_[wid];
                    double* gx = t.grad(x).row_ptr(r);
                    for (int k = 0; k < xv.cols; ++k) {
                        const double* wr = W.row_ptr(k);
                        double s = 0.0;
                        for (int j = 0; j < g.cols; ++j) s += gr[j] * wr[j];
                        gx[k] += s;
                    }
                }
                if (t.needs_grad(wid)) {
                    Mat& gw = t.grad(wid);
                    const double* xr = xv.row_ptr(r);
                    for (int k = 0; k < xv.cols; ++k) {
                        const double xk = xr[k];
                        if (xk == 0.0) continue;
                        double* gwr = gw.row_ptr(k);
                        for (int j = 0; j < g.cols; ++j) gwr[j] += xk * gr[j];
                    }
                }
            }
        });
    }

    // Per-row RMS norm with a routed gain vector (1 x width per group).
    Id group_rmsnorm(Id x, std::array<Id, 3> gain, std::shared_ptr<const std::vector<int>> group,
                     double eps) {
        const Mat& xv = vals_[x];
        for (Id gi : gain) {
            if (vals_[gi].rows != 1 || vals_[gi].cols != xv.cols)
                throw ShapeMismatch("group_rmsnorm: gain shape");
        }
        Mat out(xv.rows, xv.cols);
        for (int r = 0; r < xv.rows; ++r) {
            const double* xr = xv.row_ptr(r);
            const double* gn = vals_[gain[(*group)[r]]].row_ptr(0);
            double ms = 0.0;
            for (int c = 0; c < xv.cols; ++c) ms += xr[c] * xr[c];
            const double inv = 1.0 / std::sqrt(ms / xv.cols + eps);
            double* orow = out.row_ptr(r);
            for (int c = 0; c < xv.cols; ++c) orow[c] = xr[c] * inv * gn[c];
        }
        bool any = needs(x) || needs_grad(gain[0]) || needs_grad(gain[1]) || needs_grad(gain[2]);
        return push(std::move(out), any,
                    [x, gain, group = std::move(group), eps, this](Tape& t) {
                        const Mat& g = t.grads_[cur_];
                        const Mat& xv = t.vals_[x];
                        const int W = xv.cols;
                        for (int r = 0; r < xv.rows; ++r) {
                            const Id gid = gain[(*group)[r]];
                            const double* xr = xv.row_ptr(r);
                            const double* gn = t.vals_[gid].row_ptr(0);
                            const double* gr = g.row_ptr(r);
                            double ms = 0.0;
                            for (int c = 0; c < W; ++c) ms += xr[c] * xr[c];
                            const double inv = 1.0 / std::sqrt(ms / W + eps);
                            if (t.needs_grad(x)) {
                                double dot = 0.0;
                                for (int c = 0; c < W; ++c) dot += gr[c] * gn[c] * xr[c];
                                const double k = inv * inv * inv * dot / W;
                                double* gx = t.grad(x).row_ptr(r);
                                for (int c = 0; c < W; ++c)
                                    gx[c] += gr[c] * gn[c] * inv - xr[c] * k;
                            }
                            if (t.needs_grad(gid)) {
                                double* gg = t.grad(gid).row_ptr(0);
                                for (int c = 0; c < W; ++c) gg[c] += gr[c] * xr[c] * inv;
                            }
                        }
                    });
    }

    // 2-axis rotary embedding applied per head: the first half of each head's
    // rotation pairs turns with axis 0, the second half with axis 1.
    Id rope2d(Id x, std::shared_ptr<const std::vector<std::pair<int, int>>> coords, int n_heads,
              double theta) {
        const Mat& xv = vals_[x];
        if (static_cast<int>(coords->size()) != xv.rows) throw ShapeMismatch("rope2d: coords");
        const int head_dim = xv.cols / n_heads;
        if (head_dim * n_heads != xv.cols || head_dim % 4 != 0)
            throw ShapeMismatch("rope2d: head_dim must be a multiple of 4");
        Mat out = xv;
        rope_apply(out, *coords, n_heads, theta, +1.0);
        return push(std::move(out), needs(x),
                    [x, coords = std::move(coords), n_heads, theta, this](Tape& t) {
                        if (!t.needs_grad(x)) return;
                        Mat g = t.grads_[cur_];
                        rope_apply(g, *coords, n_heads, theta, -1.0);  // inverse rotation
                        acc(t.grad(x), g);
                    });
    }

    // Row-wise softmax over the allowed key set; forbidden entries are exact
    // zeros in both the output and the gradient.
    Id masked_softmax(Id scores, std::shared_ptr<const BoolMat> mask) {
        const Mat& sv = vals_[scores];
        if (mask->rows != sv.rows || mask->cols != sv.cols)
            throw ShapeMismatch("masked_softmax: mask shape");
        Mat out(sv.rows, sv.cols);
        for (int r = 0; r < sv.rows; ++r) {
            const double* srow = sv.row_ptr(r);
            double* orow = out.row_ptr(r);
            double mx = -1e300;
            bool any = false;
            for (int c = 0; c < sv.cols; ++c) {
                if (mask->at(r, c)) {
                    mx = std::max(mx, srow[c]);
                    any = true;
                }
            }
            if (!any) throw Error("masked_softmax: row with no allowed keys");
            double z = 0.0;
            for (int c = 0; c < sv.cols; ++c) {
                if (mask->at(r, c)) {
                    orow[c] = std::exp(srow[c] - mx);
                    z += orow[c];
                } else {
                    orow[c] = 0.0;
                }
            }
            for (int c = 0; c < sv.cols; ++c) orow[c] /= z;
        }
        return push(std::move(out), needs(scores),
                    [scores, mask = std::move(mask), this](Tape& t) {
                        if (!t.needs_grad(scores)) return;
                        const Mat& g = t.grads_[cur_];
                        const Mat& p = t.vals_[cur_];
                        Mat& gs = t.grad(scores);
                        for (int r = 0; r < g.rows; ++r) {
                            const double* gr = g.row_ptr(r);
                            const double* pr = p.row_ptr(r);
                            double dot = 0.0;
                            for (int c = 0; c < g.cols; ++c) dot += gr[c] * pr[c];
                            double* gsr = gs.row_ptr(r);
                            for (int c = 0; c < g.cols; ++c) {
                                if (mask->at(r, c)) gsr[c] += pr[c] * (gr[c] - dot);
                            }
                        }
                    });
    }

    // ---- losses -----------------------------------------------------------

    // Mean negative log-likelihood over rows whose target id is >= 0.
    // With no supervised rows the result is 0 (reported, not an error).
    Id cross_entropy_mean(Id logits, std::vector<int> targets) {
        const Mat& lv = vals_[logits];
        if (static_cast<int>(targets.size()) != lv.rows)
            throw ShapeMismatch("cross_entropy_mean: targets size");
        int n = 0;
        double total = 0.0;
        for (int r = 0; r < lv.rows; ++r) {
            if (targets[r] < 0) continue;
            if (targets[r] >= lv.cols) throw ShapeMismatch("cross_entropy_mean: target id");
            const double* row = lv.row_ptr(r);
            double mx = row[0];
            for (int c = 1; c < lv.cols; ++c) mx = std::max(mx, row[c]);
            double z = 0.0;
            for (int c = 0; c < lv.cols; ++c) z += std::exp(row[c] - mx);
            total += std::log(z) + mx - row[targets[r]];
            ++n;
        }
        Mat out(1, 1);
        out.v[0] = n > 0 ? total / n : 0.0;
        return push(std::move(out), needs(logits),
                    [logits, targets = std::move(targets), n, this](Tape& t) {
                        if (!t.needs_grad(logits) || n == 0) return;
                        const double g = t.grads_[cur_].v[0] / n;
                        const Mat& lv = t.vals_[logits];
                        Mat& gl = t.grad(logits);
                        for (int r = 0; r < lv.rows; ++r) {
                            if (targets[r] < 0) continue;
                            const double* row = lv.row_ptr(r);
                            double mx = row[0];
                            for (int c = 1; c < lv.cols; ++c) mx = std::max(mx, row[c]);
                            double z = 0.0;
                            for (int c = 0; c < lv.cols; ++c) z += std::exp(row[c] - mx);
                            double* grow = gl.row_ptr(r);
                            for (int c = 0; c < lv.cols; ++c) {
                                double p = std::exp(row[c] - mx) / z;
                                grow[c] += g * (p - (c == targets[r] ? 1.0 : 0.0));
                            }
                        }
                    });
    }

    // Mean over all elements of (a - b)^2.
    Id mse_mean(Id a, Id b) {
        require_same_shape(vals_[a], vals_[b], "mse_mean");
        const size_t n = vals_[a].v.size();
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double d = vals_[a].v[i] - vals_[b].v[i];
            total += d * d;
        }
        Mat out(1, 1);
        out.v[0] = n > 0 ? total / static_cast<double>(n) : 0.0;
        return push(std::move(out), needs(a, b), [a, b, n, this](Tape& t) {
            if (n == 0) return;
            const double g = 2.0 * t.grads_[cur_].v[0] / static_cast<double>(n);
            const Mat& av = t.vals_[a];
            const Mat& bv = t.vals_[b];
            if (t.needs_grad(a)) {
                Mat& ga = t.grad(a);
                for (size_t i = 0; i < n; ++i) ga.v[i] += g * (av.v[i] - bv.v[i]);
            }
            if (t.needs_grad(b)) {
                Mat& gb = t.grad(b);
                for (size_t i = 0; i < n; ++i) gb.v[i] -= g * (av.v[i] - bv.v[i]);
            }
        });
    }

    Id weighted_sum(std::vector<Id> scalars, std::vector<double> weights) {
        if (scalars.size() != weights.size()) throw ShapeMismatch("weighted_sum: sizes");
        double total = 0.0;
        bool any = false;
        for (size_t i = 0; i < scalars.size(); ++i) {
            const Mat& s = vals_[scalars[i]];
            if (s.rows != 1 || s.cols != 1) throw ShapeMismatch("weighted_sum: scalar input");
            total += weights[i] * s.v[0];
            any = any || needs_grad(scalars[i]);
        }
        Mat out(1, 1);
        out.v[0] = total;
        return push(std::move(out), any,
                    [scalars = std::move(scalars), weights = std::move(weights), this](Tape& t) {
                        const double g = t.grads_[cur_].v[0];
                        for (size_t i = 0; i < scalars.size(); ++i) {
                            if (t.needs_grad(scalars[i])) t.grad(scalars[i]).v[0] += g * weights[i];
                        }
                    });
    }

private:
    std::vector<Mat> vals_;
    std::vector<Mat> grads_;
    std::vector<uint8_t> has_grad_;
    std::vector<uint8_t> needs_;
    std::vector<std::function<void(Tape&)>> backs_;
    Id cur_ = -1;  // node being pushed; captured by backward closures

    bool needs(Id a) const { return needs_[a] != 0; }
    bool needs(Id a, Id b) const { return needs_[a] != 0 || needs_[b] != 0; }

    static void acc(Mat& dst, const Mat& src) {
        for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
    }

    static void rope_apply(Mat& m, const std::vector<std::pair<int, int>>& coords, int n_heads,
                           double theta, double sign) {
        const int head_dim = m.cols / n_heads;
        const int pairs = head_dim / 2;
        const int per_axis = pairs / 2;
        for (int r = 0; r < m.rows; ++r) {
            double* row = m.row_ptr(r);
            for (int h = 0; h < n_heads; ++h) {
                double* hd = row + h * head_dim;
                for (int j = 0; j < pairs; ++j) {
                    const int axis = j < per_axis ? 0 : 1;
                    const int jj = j < per_axis ? j : j - per_axis;
                    const double coord = axis == 0 ? coords[r].first : coords[r].second;
                    const double freq = std::pow(theta, -static_cast<double>(jj) / per_axis);
                    const double angle = sign * coord * freq;
                    const double c = std::cos(angle), s = std::sin(angle);
                    const double x0 = hd[2 * j], x1 = hd[2 * j + 1];
                    hd[2 * j] = x0 * c - x1 * s;
                    hd[2 * j + 1] = x0 * s + x1 * c;
                }
            }
        }
    }

    template <class F>
    Id push(Mat&& val, bool needs_grad_flag, F&& back) {
        vals_.push_back(std::move(val));
        grads_.emplace_back();
        has_grad_.push_back(0);
        needs_.push_back(needs_grad_flag ? 1 : 0);
        if constexpr (std::is_same_v<std::decay_t<F>, std::nullptr_t>) {
            backs_.emplace_back(nullptr);
        } else {
            if (needs_grad_flag) {
                backs_.emplace_back(wrap(static_cast<Id>(vals_.size() - 1), std::forward<F>(back)));
            } else {
                backs_.emplace_back(nullptr);
            }
        }
        return static_cast<Id>(vals_.size() - 1);
    }

    template <class F>
    std::function<void(Tape&)> wrap(Id id, F&& f) {
        return [id, f = std::forward<F>(f)](Tape& t) {
            t.cur_ = id;
            f(t);
        };
    }
};

}  // namespace ardiff
