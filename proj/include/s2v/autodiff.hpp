#pragma once

// Reverse-mode differentiation over a fixed primitive set. Nodes are pushed
// in evaluation order, so creation order is already a topological order and
// backward() is a single reverse sweep. No general control-flow tape.

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "s2v/tensor.hpp"

namespace s2v {

template <class S>
class Tape {
public:
    struct Node {
        Tensor<S> value;
        Tensor<S> grad;
        bool needs_grad = false;
        bool grad_alloc = false;
        std::function<void(Tape&, int)> backward; // accumulate into parents
    };

    int leaf(Tensor<S> v, bool needs_grad = true) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }
    int constant(Tensor<S> v) { return leaf(std::move(v), false); }

    const Tensor<S>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }

    const Tensor<S>& grad(int id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.grad_alloc) {
            static const Tensor<S> empty;
            if (n.value.numel() == 0) return empty;
            throw std::logic_error("grad requested before backward touched this node");
        }
        return n.grad;
    }

    bool has_grad(int id) const { return nodes_[static_cast<size_t>(id)].grad_alloc; }

    size_t size() const { return nodes_.size(); }

    // Generic node for ops defined outside this header (rope rotation).
    int custom(Tensor<S> value, std::vector<int> parents,
               std::function<void(Tape&, int)> backward) {
        bool ng = false;
        for (int p : parents) ng = ng || nodes_[static_cast<size_t>(p)].needs_grad;
        Node n;
        n.value = std::move(value);
        n.needs_grad = ng;
        if (ng) n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    Tensor<S>& grad_buf(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.grad_alloc) {
            n.grad = Tensor<S>(n.value.shape());
            n.grad_alloc = true;
        }
        return n.grad;
    }

    void accum_grad(int id, const Tensor<S>& g) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad) return;
        axpy(S(1), g, grad_buf(id));
    }

    // ---- primitives -------------------------------------------------------

    int matmul(int a, int b, bool ta = false, bool tb = false) {
        const Tensor<S>& av = value(a);
        const Tensor<S>& bv = value(b);
        if (av.rank() != 2 || bv.rank() != 2) {
            throw std::invalid_argument("tape matmul expects rank-2 operands, got " +
                                        shape_str(av.shape()) + " x " + shape_str(bv.shape()));
        }
        int64_t m = ta ? av.extent(1) : av.extent(0);
        int64_t k = ta ? av.extent(0) : av.extent(1);
        int64_t kb = tb ? bv.extent(1) : bv.extent(0);
        int64_t n = tb ? bv.extent(0) : bv.extent(1);
        if (k != kb) {
            throw std::invalid_argument("tape matmul inner extents disagree: " +
                                        shape_str(av.shape()) + (ta ? "^T" : "") + " x " +
                                        shape_str(bv.shape()) + (tb ? "^T" : ""));
        }
        Tensor<S> out({m, n});
        detail::gemm_rowmajor<S>(ta, tb, m, n, k, S(1), av.data(), av.extent(1), bv.data(),
                                 bv.extent(1), S(0), out.data(), n);
        return custom(std::move(out), {a, b}, [a, b, ta, tb, m, n, k](Tape& t, int self) {
            const Tensor<S>& gc = t.grad(self);
            const Tensor<S>& av2 = t.value(a);
            const Tensor<S>& bv2 = t.value(b);
            if (t.node(a).needs_grad) {
                Tensor<S>& ga = t.grad_buf(a);
                if (!ta && !tb) {
                    // dA += dC B^T
                    detail::gemm_rowmajor<S>(false, true, m, k, n, S(1), gc.data(), n, bv2.data(),
                                             n, S(1), ga.data(), k);
                } else if (!ta && tb) {
                    // C = A B^T : dA += dC B
                    detail::gemm_rowmajor<S>(false, false, m, k, n, S(1), gc.data(), n, bv2.data(),
                                             k, S(1), ga.data(), k);
                } else if (ta && !tb) {
                    // C = A^T B, A is (k, m): dA += B dC^T
                    detail::gemm_rowmajor<S>(false, true, k, m, n, S(1), bv2.data(), n, gc.data(),
                                             n, S(1), ga.data(), m);
                } else {
                    // C = A^T B^T, A is (k, m): dA += B^T dC^T
                    detail::gemm_rowmajor<S>(true, true, k, m, n, S(1), bv2.data(), k, gc.data(),
                                             n, S(1), ga.data(), m);
                }
            }
            if (t.node(b).needs_grad) {
                Tensor<S>& gb = t.grad_buf(b);
                if (!ta && !tb) {
                    // dB += A^T dC
                    detail::gemm_rowmajor<S>(true, false, k, n, m, S(1), av2.data(), k, gc.data(),
                                             n, S(1), gb.data(), n);
                } else if (!ta && tb) {
                    // C = A B^T, B is (n, k): dB += dC^T A
                    detail::gemm_rowmajor<S>(true, false, n, k, m, S(1), gc.data(), n, av2.data(),
                                             k, S(1), gb.data(), k);
                } else if (ta && !tb) {
                    // C = A^T B, A is (k, m): dB += A dC
                    detail::gemm_rowmajor<S>(false, false, k, n, m, S(1), av2.data(), m, gc.data(),
                                             n, S(1), gb.data(), n);
                } else {
                    // C = A^T B^T, B is (n, k): dB += dC^T A^T
                    detail::gemm_rowmajor<S>(true, true, n, k, m, S(1), gc.data(), n, av2.data(),
                                             m, S(1), gb.data(), k);
                }
            }
        });
    }

    int add(int a, int b) {
        Tensor<S> out = s2v::add(value(a), value(b));
        return custom(std::move(out), {a, b}, [a, b](Tape& t, int self) {
            t.accum_grad(a, t.grad(self));
            t.accum_grad(b, t.grad(self));
        });
    }

    int sub(int a, int b) {
        Tensor<S> out = s2v::sub(value(a), value(b));
        return custom(std::move(out), {a, b}, [a, b](Tape& t, int self) {
            t.accum_grad(a, t.grad(self));
            if (t.node(b).needs_grad) {
                const Tensor<S>& gc = t.grad(self);
                Tensor<S>& gb = t.grad_buf(b);
                axpy(S(-1), gc, gb);
            }
        });
    }

    int mul(int a, int b) {
        Tensor<S> out = s2v::mul(value(a), value(b));
        return custom(std::move(out), {a, b}, [a, b](Tape& t, int self) {
            const Tensor<S>& gc = t.grad(self);
            if (t.node(a).needs_grad) {
                Tensor<S>& ga = t.grad_buf(a);
                const Tensor<S>& bv = t.value(b);
                for (int64_t i = 0; i < gc.numel(); ++i) ga[i] += gc[i] * bv[i];
            }
            if (t.node(b).needs_grad) {
                Tensor<S>& gb = t.grad_buf(b);
                const Tensor<S>& av = t.value(a);
                for (int64_t i = 0; i < gc.numel(); ++i) gb[i] += gc[i] * av[i];
            }
        });
    }

    int scale(int a, S s) {
        Tensor<S> out = s2v::scale(value(a), s);
        return custom(std::move(out), {a}, [a, s](Tape& t, int self) {
            if (t.node(a).needs_grad) axpy(s, t.grad(self), t.grad_buf(a));
        });
    }

    // x: [N, D], v: D entries. out[i,j] = x[i,j] + v[j]
    int add_rowvec(int x, int v) {
        const Tensor<S>& xv = value(x);
        const Tensor<S>& vv = value(v);
        int64_t n = xv.extent(0), d = xv.extent(1);
        if (vv.numel() != d) {
            throw std::invalid_argument("add_rowvec: vector length " + std::to_string(vv.numel()) +
                                        " vs row width " + std::to_string(d));
        }
        Tensor<S> out({n, d});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] + vv[j];
        return custom(std::move(out), {x, v}, [x, v, n, d](Tape& t, int self) {
            const Tensor<S>& gc = t.grad(self);
            if (t.node(x).needs_grad) axpy(S(1), gc, t.grad_buf(x));
            if (t.node(v).needs_grad) {
                Tensor<S>& gv = t.grad_buf(v);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gv[j] += gc[i * d + j];
            }
        });
    }

    // out[i,j] = x[i,j] * (1 + s[j]) + b[j]; adaptive layer-norm modulation.
    int rowwise_affine(int x, int s, int b) {
        const Tensor<S>& xv = value(x);
        const Tensor<S>& sv = value(s);
        const Tensor<S>& bv = value(b);
        int64_t n = xv.extent(0), d = xv.extent(1);
        if (sv.numel() != d || bv.numel() != d) {
            throw std::invalid_argument("rowwise_affine: modulation width mismatch");
        }
        Tensor<S> out({n, d});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j)
                out[i * d + j] = xv[i * d + j] * (S(1) + sv[j]) + bv[j];
        return custom(std::move(out), {x, s, b}, [x, s, b, n, d](Tape& t, int self) {
            const Tensor<S>& gc = t.grad(self);
            const Tensor<S>& xv2 = t.value(x);
            const Tensor<S>& sv2 = t.value(s);
            if (t.node(x).needs_grad) {
                Tensor<S>& gx = t.grad_buf(x);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j)
                        gx[i * d + j] += gc[i * d + j] * (S(1) + sv2[j]);
            }
            if (t.node(s).needs_grad) {
                Tensor<S>& gs = t.grad_buf(s);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gs[j] += gc[i * d + j] * xv2[i * d + j];
            }
            if (t.node(b).needs_grad) {
                Tensor<S>& gb = t.grad_buf(b);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gb[j] += gc[i * d + j];
            }
        });
    }

    // out[i,j] = x[i,j] * g[j]; residual gates.
    int rowwise_scale(int x, int g) {
        const Tensor<S>& xv = value(x);
        const Tensor<S>& gv = value(g);
        int64_t n = xv.extent(0), d = xv.extent(1);
        if (gv.numel() != d) throw std::invalid_argument("rowwise_scale: gate width mismatch");
        Tensor<S> out({n, d});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] * gv[j];
        return custom(std::move(out), {x, g}, [x, g, n, d](Tape& t, int self) {
            const Tensor<S>& gc = t.grad(self);
            if (t.node(x).needs_grad) {
                Tensor<S>& gx = t.grad_buf(x);
                const Tensor<S>& gv2 = t.value(g);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gx[i * d + j] += gc[i * d + j] * gv2[j];
            }
            if (t.node(g).needs_grad) {
                Tensor<S>& gg = t.grad_buf(g);
                const Tensor<S>& xv2 = t.value(x);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gg[j] += gc[i * d + j] * xv2[i * d + j];
            }
        });
    }

    int softmax_lastaxis(int a) {
        Tensor<S> out = s2v::softmax_lastaxis(value(a));
        return custom(std::move(out), {a}, [a](Tape& t, int self) {
            if (!t.node(a).needs_grad) return;
            const Tensor<S>& y = t.value(self);
            const Tensor<S>& gy = t.grad(self);
            Tensor<S>& gx = t.grad_buf(a);
            int64_t cols = y.extent(y.rank() - 1);
            int64_t rows = y.numel() / cols;
            for (int64_t r = 0; r < rows; ++r) {
                const S* yr = y.data() + r * cols;
                const S* gr = gy.data() + r * cols;
                S* xr = gx.data() + r * cols;
                S inner = 0;
                for (int64_t c = 0; c < cols; ++c) inner += gr[c] * yr[c];
                for (int64_t c = 0; c < cols; ++c) xr[c] += yr[c] * (gr[c] - inner);
            }
        });
    }

    // Per-row standardization over the last axis, no learned affine.
    int layer_norm(int a, S eps = S(1e-5)) {
        const Tensor<S>& x = value(a);
        int64_t cols = x.extent(x.rank() - 1);
        int64_t rows = x.numel() / cols;
        Tensor<S> out(x.shape());
        Tensor<S> inv_std({rows});
        for (int64_t r = 0; r < rows; ++r) {
            const S* src = x.data() + r * cols;
            S* dst = out.data() + r * cols;
            S mu = 0;
            for (int64_t c = 0; c < cols; ++c) mu += src[c];
            mu /= static_cast<S>(cols);
            S var = 0;
            for (int64_t c = 0; c < cols; ++c) var += (src[c] - mu) * (src[c] - mu);
            var /= static_cast<S>(cols);
            S is = S(1) / std::sqrt(var + eps);
            inv_std[r] = is;
            for (int64_t c = 0; c < cols; ++c) dst[c] = (src[c] - mu) * is;
        }
        int out_id = custom(std::move(out), {a},
                            [a, cols, rows, istd = std::move(inv_std)](Tape& t, int self) {
            if (!t.node(a).needs_grad) return;
            const Tensor<S>& y = t.value(self);
            const Tensor<S>& gy = t.grad(self);
            Tensor<S>& gx = t.grad_buf(a);
            for (int64_t r = 0; r < rows; ++r) {
                const S* yr = y.data() + r * cols;
                const S* gr = gy.data() + r * cols;
                S* xr = gx.data() + r * cols;
                S mean_g = 0, mean_gy = 0;
                for (int64_t c = 0; c < cols; ++c) {
                    mean_g += gr[c];
                    mean_gy += gr[c] * yr[c];
                }
                mean_g /= static_cast<S>(cols);
                mean_gy /= static_cast<S>(cols);
                for (int64_t c = 0; c < cols; ++c) {
                    xr[c] += istd[r] * (gr[c] - mean_g - yr[c] * mean_gy);
                }
            }
        });
        return out_id;
    }

    // table: [V, D], ids into V. out: [M, D]
    int embedding(int table, std::vector<int64_t> ids) {
        const Tensor<S>& tv = value(table);
        if (tv.rank() != 2) throw std::invalid_argument("embedding table must be rank-2");
        int64_t vsize = tv.extent(0), d = tv.extent(1);
        for (int64_t id : ids) {
            if (id < 0 || id >= vsize) {
                throw std::invalid_argument("embedding id " + std::to_string(id) +
                                            " outside table of size " + std::to_string(vsize));
            }
        }
        int64_t m = static_cast<int64_t>(ids.size());
        Tensor<S> out({m, d});
        for (int64_t i = 0; i < m; ++i) {
            const S* row = tv.data() + ids[static_cast<size_t>(i)] * d;
            std::copy(row, row + d, out.data() + i * d);
        }
        return custom(std::move(out), {table}, [table, ids = std::move(ids), d](Tape& t, int self) {
            if (!t.node(table).needs_grad) return;
            const Tensor<S>& gc = t.grad(self);
            Tensor<S>& gt = t.grad_buf(table);
            for (size_t i = 0; i < ids.size(); ++i) {
                S* dst = gt.data() + ids[i] * d;
                const S* src = gc.data() + static_cast<int64_t>(i) * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }

    int slice_rows(int a, int64_t r0, int64_t r1) {
        const Tensor<S>& x = value(a);
        if (x.rank() != 2 || r0 < 0 || r1 > x.extent(0) || r0 > r1) {
            throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + ", " +
                                        std::to_string(r1) + ") for " + shape_str(x.shape()));
        }
        int64_t d = x.extent(1);
        Tensor<S> out({r1 - r0, d});
        std::copy(x.data() + r0 * d, x.data() + r1 * d, out.data());
        return custom(std::move(out), {a}, [a, r0, d](Tape& t, int self) {
            if (!t.node(a).needs_grad) return;
            const Tensor<S>& gc = t.grad(self);
            Tensor<S>& gx = t.grad_buf(a);
            for (int64_t i = 0; i < gc.numel(); ++i) gx[r0 * d + i] += gc[i];
        });
    }

    int concat_rows(const std::vector<int>& xs) {
        if (xs.empty()) throw std::invalid_argument("concat_rows: empty input list");
        int64_t d = value(xs[0]).extent(1);
        int64_t rows = 0;
        for (int x : xs) {
            if (value(x).rank() != 2 || value(x).extent(1) != d) {
                throw std::invalid_argument("concat_rows: width mismatch");
            }
            rows += value(x).extent(0);
        }
        Tensor<S> out({rows, d});
        int64_t off = 0;
        for (int x : xs) {
            const Tensor<S>& v = value(x);
            std::copy(v.data(), v.data() + v.numel(), out.data() + off);
            off += v.numel();
        }
        return custom(std::move(out), xs, [xs, d](Tape& t, int self) {
            const Tensor<S>& gc = t.grad(self);
            int64_t off2 = 0;
            for (int x : xs) {
                int64_t n = t.value(x).numel();
                if (t.node(x).needs_grad) {
                    Tensor<S>& gx = t.grad_buf(x);
                    for (int64_t i = 0; i < n; ++i) gx[i] += gc[off2 + i];
                }
                off2 += n;
            }
        });
    }

    int slice_cols(int a, int64_t c0, int64_t c1) {
        const Tensor<S>& x = value(a);
        if (x.rank() != 2 || c0 < 0 || c1 > x.extent(1) || c0 > c1) {
            throw std::invalid_argument("slice_cols: bad range for " + shape_str(x.shape()));
        }
        int64_t n = x.extent(0), d = x.extent(1), w = c1 - c0;
        Tensor<S> out({n, w});
        for (int64_t i = 0; i < n; ++i)
            std::copy(x.data() + i * d + c0, x.data() + i * d + c1, out.data() + i * w);
        return custom(std::move(out), {a}, [a, c0, n, d, w](Tape& t, int self) {
            if (!t.node(a).needs_grad) return;
            const Tensor<S>& gc = t.grad(self);
            Tensor<S>& gx = t.grad_buf(a);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < w; ++j) gx[i * d + c0 + j] += gc[i * w + j];
        });
    }

    int concat_cols(const std::vector<int>& xs) {
        if (xs.empty()) throw std::invalid_argument("concat_cols: empty input list");
        int64_t n = value(xs[0]).extent(0);
        int64_t d = 0;
        for (int x : xs) {
            if (value(x).rank() != 2 || value(x).extent(0) != n) {
                throw std::invalid_argument("concat_cols: row-count mismatch");
            }
            d += value(x).extent(1);
        }
        Tensor<S> out({n, d});
        int64_t off = 0;
        for (int x : xs) {
            const Tensor<S>& v = value(x);
            int64_t w = v.extent(1);
            for (int64_t i = 0; i < n; ++i)
                std::copy(v.data() + i * w, v.data() + (i + 1) * w, out.data() + i * d + off);
            off += w;
        }
        return custom(std::move(out), xs, [xs, n, d](Tape& t, int self) {
            const Tensor<S>& gc = t.grad(self);
            int64_t off2 = 0;
            for (int x : xs) {
                int64_t w = t.value(x).extent(1);
                if (t.node(x).needs_grad) {
                    Tensor<S>& gx = t.grad_buf(x);
                    for (int64_t i = 0; i < n; ++i)
                        for (int64_t j = 0; j < w; ++j) gx[i * w + j] += gc[i * d + off2 + j];
                }
                off2 += w;
            }
        });
    }

    int sum(int a) {
        Tensor<S> out = Tensor<S>::scalar(s2v::sum(value(a)));
        return custom(std::move(out), {a}, [a](Tape& t, int self) {
            if (!t.node(a).needs_grad) return;
            S g = t.grad(self)[0];
            Tensor<S>& gx = t.grad_buf(a);
            for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
        });
    }

    int mean(int a) {
        Tensor<S> out = Tensor<S>::scalar(s2v::mean(value(a)));
        int64_t n = value(a).numel();
        return custom(std::move(out), {a}, [a, n](Tape& t, int self) {
            if (!t.node(a).needs_grad) return;
            S g = t.grad(self)[0] / static_cast<S>(n);
            Tensor<S>& gx = t.grad_buf(a);
            for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
        });
    }

    // mean((a - b)^2) over every element.
    int mse(int a, int b) {
        const Tensor<S>& av = value(a);
        const Tensor<S>& bv = value(b);
        check_same_shape(av, bv, "mse");
        S acc = 0;
        for (int64_t i = 0; i < av.numel(); ++i) {
            S dlt = av[i] - bv[i];
            acc += dlt * dlt;
        }
        int64_t n = av.numel();
        Tensor<S> out = Tensor<S>::scalar(acc / static_cast<S>(n));
        return custom(std::move(out), {a, b}, [a, b, n](Tape& t, int self) {
            S g = t.grad(self)[0] * S(2) / static_cast<S>(n);
            const Tensor<S>& av2 = t.value(a);
            const Tensor<S>& bv2 = t.value(b);
            if (t.node(a).needs_grad) {
                Tensor<S>& ga = t.grad_buf(a);
                for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g * (av2[i] - bv2[i]);
            }
            if (t.node(b).needs_grad) {
                Tensor<S>& gb = t.grad_buf(b);
                for (int64_t i = 0; i < gb.numel(); ++i) gb[i] -= g * (av2[i] - bv2[i]);
            }
        });
    }

    int silu(int a) {
        const Tensor<S>& x = value(a);
        Tensor<S> out(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) {
            S sg = S(1) / (S(1) + std::exp(-x[i]));
            out[i] = x[i] * sg;
        }
        return custom(std::move(out), {a}, [a](Tape& t, int self) {
            if (!t.node(a).needs_grad) return;
            const Tensor<S>& gc = t.grad(self);
            const Tensor<S>& xv = t.value(a);
            Tensor<S>& gx = t.grad_buf(a);
            for (int64_t i = 0; i < gc.numel(); ++i) {
                S sg = S(1) / (S(1) + std::exp(-xv[i]));
                gx[i] += gc[i] * sg * (S(1) + xv[i] * (S(1) - sg));
            }
        });
    }

    void backward(int loss) {
        if (value(loss).numel() != 1) {
            throw std::invalid_argument("backward target must be scalar, got " +
                                        shape_str(value(loss).shape()));
        }
        grad_buf(loss)[0] = S(1);
        for (int i = loss; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.backward && n.grad_alloc) n.backward(*this, i);
        }
    }

    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

private:
    std::vector<Node> nodes_;
};

} // namespace s2v
