#pragma once

// Dense row-major tensors over float or double. Training runs in single
// precision; gradient checks and oracle comparisons instantiate double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef S2V_USE_CBLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int);
#endif

namespace s2v {

using Shape = std::vector<int64_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) {
        if (e < 0) throw std::invalid_argument("negative extent in shape " + shape_str(s));
        n *= e;
    }
    return n;
}

#ifdef S2V_USE_CBLAS
// BLAS threading is pinned to one thread; parallelism lives at the batch
// and run level where reduction order stays fixed.
inline void ensure_blas_single_thread() {
    static const bool done = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)done;
}
#endif

template <class S>
class Tensor {
    static_assert(std::is_floating_point_v<S>);

public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), S(0)) {}

    Tensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != shape_numel(shape_)) {
            throw std::invalid_argument("data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor full(Shape shape, S v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }
    static Tensor scalar(S v) { return Tensor({}, {v}); }

    const Shape& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    int64_t extent(int64_t axis) const { return shape_.at(static_cast<size_t>(axis)); }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    S& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const S& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    std::vector<S>& vec() { return data_; }
    const std::vector<S>& vec() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (S v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel()) {
            throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(s) +
                                        " changes element count");
        }
        Tensor t;
        t.shape_ = std::move(s);
        t.data_ = data_;
        return t;
    }

    template <class T>
    Tensor<T> cast() const {
        Tensor<T> out(shape_);
        for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<T>(data_[static_cast<size_t>(i)]);
        return out;
    }

private:
    Shape shape_;
    std::vector<S> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class S>
inline void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape(a, b, "add");
    Tensor<S> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape(a, b, "sub");
    Tensor<S> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
    return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape(a, b, "mul");
    Tensor<S> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
    return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S s) {
    Tensor<S> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
    return out;
}

template <class S>
void axpy(S alpha, const Tensor<S>& x, Tensor<S>& y) {
    check_same_shape(x, y, "axpy");
    for (int64_t i = 0; i < x.numel(); ++i) y[i] += alpha * x[i];
}

template <class S>
S dot(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape(a, b, "dot");
    S acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
    return acc;
}

template <class S>
S norm2(const Tensor<S>& a) {
    S acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) acc += a[i] * a[i];
    return std::sqrt(acc);
}

// ---------------------------------------------------------------------------
// matmul, rank 2..4 with broadcastable batch extents over the last two axes
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void gemm_rowmajor(bool ta, bool tb, int64_t m, int64_t n, int64_t k, S alpha,
                   const S* a, int64_t lda, const S* b, int64_t ldb, S beta, S* c, int64_t ldc) {
#ifdef S2V_USE_CBLAS
    ensure_blas_single_thread();
    if constexpr (std::is_same_v<S, float>) {
        cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                    static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                    static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
    } else {
        cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                    static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                    static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
    }
#else
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            S acc = 0;
            for (int64_t p = 0; p < k; ++p) {
                S av = ta ? a[p * lda + i] : a[i * lda + p];
                S bv = tb ? b[j * ldb + p] : b[p * ldb + j];
                acc += av * bv;
            }
            c[i * ldc + j] = alpha * acc + beta * c[i * ldc + j];
        }
    }
#endif
}

} // namespace detail

// 2-D core: C = op(A) op(B), where op is optional transpose.
template <class S>
void matmul2d_into(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n, bool ta, bool tb,
                   S beta = S(0)) {
    detail::gemm_rowmajor<S>(ta, tb, m, n, k, S(1), a, ta ? m : k, b, tb ? k : n, beta, c,
                             n);
}

// General matmul over the last two axes. Leading (batch) extents must be
// broadcastable: equal, or 1 on one side, or absent.
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() < 2 || a.rank() > 4 || b.rank() < 2 || b.rank() > 4) {
        throw std::invalid_argument("matmul: ranks must be 2..4, got " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    }
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    int64_t m = sa[sa.size() - 2], ka = sa[sa.size() - 1];
    int64_t kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
    if (ka != kb) {
        throw std::invalid_argument("matmul: inner extents disagree, " + shape_str(sa) + " x " +
                                    shape_str(sb));
    }

    Shape batch_a(sa.begin(), sa.end() - 2);
    Shape batch_b(sb.begin(), sb.end() - 2);
    size_t brank = std::max(batch_a.size(), batch_b.size());
    Shape batch(brank, 1);
    auto at = [&](const Shape& s, size_t i) -> int64_t {
        // right-aligned broadcast index
        if (i + s.size() < brank) return 1;
        return s[i + s.size() - brank];
    };
    for (size_t i = 0; i < brank; ++i) {
        int64_t ea = at(batch_a, i), eb = at(batch_b, i);
        if (ea != eb && ea != 1 && eb != 1) {
            throw std::invalid_argument("matmul: batch extents not broadcastable, " + shape_str(sa) +
                                        " x " + shape_str(sb));
        }
        batch[i] = std::max(ea, eb);
    }
    int64_t nbatch = shape_numel(batch);

    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor<S> out(out_shape);

    int64_t stride_a = m * ka;
    int64_t stride_b = ka * n;
    int64_t nbatch_a = shape_numel(batch_a);
    int64_t nbatch_b = shape_numel(batch_b);

    for (int64_t bi = 0; bi < nbatch; ++bi) {
        // decompose bi into batch coords, map into (possibly broadcast) inputs
        int64_t rem = bi, ia = 0, ib = 0;
        for (size_t d = 0; d < brank; ++d) {
            int64_t stride_rest = 1;
            for (size_t e = d + 1; e < brank; ++e) stride_rest *= batch[e];
            int64_t coord = rem / stride_rest;
            rem %= stride_rest;
            int64_t ea = at(batch_a, d), eb = at(batch_b, d);
            ia = ia * ea + (ea == 1 ? 0 : coord);
            ib = ib * eb + (eb == 1 ? 0 : coord);
        }
        (void)nbatch_a;
        (void)nbatch_b;
        matmul2d_into(a.data() + ia * stride_a, b.data() + ib * stride_b,
                      out.data() + bi * m * n, m, ka, n, false, false);
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax over the last axis, max-stabilized
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> softmax_lastaxis(const Tensor<S>& x) {
    if (x.rank() < 1 || x.extent(x.rank() - 1) < 1) {
        throw std::invalid_argument("softmax_lastaxis: empty last axis, shape " +
                                    shape_str(x.shape()));
    }
    int64_t cols = x.extent(x.rank() - 1);
    int64_t rows = x.numel() / cols;
    Tensor<S> out(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const S* src = x.data() + r * cols;
        S* dst = out.data() + r * cols;
        S mx = src[0];
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, src[c]);
        S sum = 0;
        for (int64_t c = 0; c < cols; ++c) {
            dst[c] = std::exp(src[c] - mx);
            sum += dst[c];
        }
        S inv = S(1) / sum;
        for (int64_t c = 0; c < cols; ++c) dst[c] *= inv;
    }
    return out;
}

template <class S>
S sum(const Tensor<S>& x) {
    S acc = 0;
    for (int64_t i = 0; i < x.numel(); ++i) acc += x[i];
    return acc;
}

template <class S>
S mean(const Tensor<S>& x) {
    if (x.numel() == 0) throw std::invalid_argument("mean of empty tensor");
    return sum(x) / static_cast<S>(x.numel());
}

} // namespace s2v
