// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with tape-based reverse-mode differentiation.
// Tensors are cheap handles onto shared storage; ops append a backward
// closure to the tape, and Tape::backward replays them in reverse order.
// Everything is templated on the scalar type: the artifact runs float32,
// the gradient-check oracles instantiate double.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "moct/errors.hpp"

namespace moct {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <typename T>
class TensorT {
  public:
    TensorT() = default;

    static TensorT zeros(Shape shape) {
        TensorT t;
        validate_shape(shape);
        const auto n = static_cast<size_t>(shape_numel(shape));
        t.s_ = std::make_shared<Storage>(Storage{std::move(shape), std::vector<T>(n, T(0)), {}});
        return t;
    }

    static TensorT full(Shape shape, T value) {
        TensorT t = zeros(std::move(shape));
        for (auto& v : t.s_->data) v = value;
        return t;
    }

    static TensorT scalar(T value) { return full({1}, value); }

    static TensorT from(Shape shape, std::vector<T> data) {
        validate_shape(shape);
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        TensorT t;
        t.s_ = std::make_shared<Storage>(Storage{std::move(shape), std::move(data), {}});
        return t;
    }

    bool defined() const { return s_ != nullptr; }
    const Shape& shape() const { return s_->shape; }
    int rank() const { return static_cast<int>(s_->shape.size()); }
    int dim(int i) const { return s_->shape[static_cast<size_t>(i < 0 ? rank() + i : i)]; }
    int64_t numel() const { return static_cast<int64_t>(s_->data.size()); }

    std::span<T> data() { return {s_->data.data(), s_->data.size()}; }
    std::span<const T> data() const { return {s_->data.data(), s_->data.size()}; }
    std::vector<T>& vec() { return s_->data; }
    const std::vector<T>& vec() const { return s_->data; }

    bool has_grad() const { return s_->grad.has_value(); }
    std::span<T> grad() {
        ensure_grad();
        return {s_->grad->data(), s_->grad->size()};
    }
    std::span<const T> grad() const { return {s_->grad->data(), s_->grad->size()}; }
    void ensure_grad() {
        if (!s_->grad) s_->grad.emplace(s_->data.size(), T(0));
    }
    void clear_grad() { s_->grad.reset(); }

    // Deep copy; the result owns fresh storage and no gradient.
    TensorT clone() const {
        TensorT t;
        t.s_ = std::make_shared<Storage>(Storage{s_->shape, s_->data, {}});
        return t;
    }

    bool same_storage(const TensorT& other) const { return s_ == other.s_; }

  private:
    struct Storage {
        Shape shape;
        std::vector<T> data;
        std::optional<std::vector<T>> grad;
    };

    static void validate_shape(const Shape& shape) {
        if (shape.empty()) throw ShapeError("tensor shape must be non-empty");
        for (int d : shape)
            if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }

    std::shared_ptr<Storage> s_;
};

// Ordered record of backward closures. Each op that participates in
// differentiation pushes one entry; backward() replays them last-to-first so
// every output gradient is fully accumulated before its producers read it.
template <typename T>
class TapeT {
  public:
    void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }

    bool empty() const { return records_.empty(); }
    size_t size() const { return records_.size(); }

    void backward(TensorT<T>& loss) {
        if (loss.numel() != 1)
            throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
        if (records_.empty()) throw ContractError("backward called on an empty tape");
        loss.grad()[0] = T(1);
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    }

    void clear() { records_.clear(); }

  private:
    std::vector<std::function<void()>> records_;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

namespace detail {

// Polynomial expf (cephes coefficients), accurate to ~2e-7 relative. The
// body is branch-light so the compiler can vectorize the elementwise loops
// that dominate softmax/gelu/cross-entropy time. Inputs below -87 underflow
// to exactly 0 (so additive -1e9 masks zero out cleanly); inputs are
// saturated at 88 to stay finite.
inline float fast_expf(float x) {
    const bool underflow = x < -87.0f;  // resolved by a select, keeps the loop vectorizable
    x = x < -87.0f ? -87.0f : x;
    x = x > 88.0f ? 88.0f : x;
    const float z = x * 1.44269504088896341f;  // x / ln 2
    const float n = std::floor(z + 0.5f);
    float r = x - n * 0.693359375f;  // ln 2, hi/lo split
    r -= n * -2.12194440e-4f;
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    const float e = 1.0f + r + (r * r) * p;
    uint32_t bits;
    std::memcpy(&bits, &e, 4);
    bits += static_cast<uint32_t>(static_cast<int32_t>(n)) << 23;  // scale by 2^n
    float out;
    std::memcpy(&out, &bits, 4);
    return underflow ? 0.0f : out;
}

// exp dispatch: the float path takes the polynomial, other precisions libm.
template <typename T>
inline T fexp(T x) {
    if constexpr (std::is_same_v<T, float>)
        return fast_expf(x);
    else
        return std::exp(x);
}

template <typename T>
inline T ftanh(T x) {
    x = x > T(15) ? T(15) : x;  // saturates to +-1 at float precision
    x = x < T(-15) ? T(-15) : x;
    const T e2 = fexp(T(2) * x);
    return (e2 - T(1)) / (e2 + T(1));
}

// out[m,n] += A[m,k] * B[k,n]
template <typename T>
void mm_nn(T* __restrict out, const T* a, const T* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<int64_t>(i) * k;
        T* orow = out + static_cast<int64_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const T ail = arow[l];
            if (ail == T(0)) continue;
            const T* brow = b + static_cast<int64_t>(l) * n;
            for (int j = 0; j < n; ++j) orow[j] += ail * brow[j];
        }
    }
}

// out[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void mm_nt(T* __restrict out, const T* a, const T* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<int64_t>(i) * k;
        T* orow = out + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + static_cast<int64_t>(j) * k;
            T acc = T(0);
            for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
            orow[j] += acc;
        }
    }
}

// out[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void mm_tn(T* __restrict out, const T* a, const T* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<int64_t>(i) * k;
        const T* brow = b + static_cast<int64_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const T ail = arow[l];
            if (ail == T(0)) continue;
            T* orow = out + static_cast<int64_t>(l) * n;
            for (int j = 0; j < n; ++j) orow[j] += ail * brow[j];
        }
    }
}

inline Shape leading_dims(const Shape& s, int drop) {
    return Shape(s.begin(), s.end() - drop);
}

}  // namespace detail

namespace ops {

// ---------------------------------------------------------------------------
// matmul
//
// Two layouts:
//   * b rank 2: a's leading dims are flattened, out = a · b (or a · b^T).
//   * b rank > 2: batched; a and b share identical leading dims.
// ---------------------------------------------------------------------------
template <typename T>
TensorT<T> matmul(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b, bool transpose_b = false) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul requires rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));

    const int bk = transpose_b ? b.dim(-1) : b.dim(-2);
    const int bn = transpose_b ? b.dim(-2) : b.dim(-1);
    const int ak = a.dim(-1);
    if (ak != bk)
        throw ShapeError("matmul dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                         (transpose_b ? " (b transposed)" : ""));

    const bool batched = b.rank() > 2;
    int batches = 1;
    int m = 0;
    Shape out_shape;
    if (batched) {
        if (a.rank() != b.rank())
            throw ShapeError("batched matmul rank mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
        for (int i = 0; i + 2 < a.rank(); ++i) {
            if (a.dim(i) != b.dim(i))
                throw ShapeError("batched matmul leading dims differ: " + shape_str(a.shape()) + " x " +
                                 shape_str(b.shape()));
            batches *= a.dim(i);
        }
        m = a.dim(-2);
        out_shape = detail::leading_dims(a.shape(), 2);
        out_shape.push_back(m);
        out_shape.push_back(bn);
    } else {
        m = static_cast<int>(a.numel() / ak);
        out_shape = detail::leading_dims(a.shape(), 1);
        out_shape.push_back(bn);
    }

    TensorT<T> out = TensorT<T>::zeros(out_shape);
    const int k = ak, n = bn;
    const int64_t a_stride = static_cast<int64_t>(m) * k;
    const int64_t b_stride = batched ? static_cast<int64_t>(k) * n : 0;
    const int64_t o_stride = static_cast<int64_t>(m) * n;

    const T* ap = a.data().data();
    const T* bp = b.data().data();
    T* op = out.data().data();
    for (int g = 0; g < batches; ++g) {
        if (transpose_b)
            detail::mm_nt(op + g * o_stride, ap + g * a_stride, bp + g * b_stride, m, k, n);
        else
            detail::mm_nn(op + g * o_stride, ap + g * a_stride, bp + g * b_stride, m, k, n);
    }

    if (tape) {
        TensorT<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, batches, m, k, n, a_stride, b_stride, o_stride, transpose_b]() mutable {
            const std::span<const T> g = oc.grad();
            ac.ensure_grad();
            bc.ensure_grad();
            T* ga = ac.grad().data();
            T* gb = bc.grad().data();
            const T* av = ac.data().data();
            const T* bv = bc.data().data();
            for (int gi = 0; gi < batches; ++gi) {
                const T* gout = g.data() + gi * o_stride;
                if (!transpose_b) {
                    // ga += g·b^T ; gb += a^T·g
                    detail::mm_nt(ga + gi * a_stride, gout, bv + gi * b_stride, m, n, k);
                    detail::mm_tn(gb + gi * b_stride, av + gi * a_stride, gout, m, k, n);
                } else {
                    // y = a·b^T: ga += g·b ; gb += g^T·a
                    detail::mm_nn(ga + gi * a_stride, gout, bv + gi * b_stride, m, n, k);
                    detail::mm_tn(gb + gi * b_stride, gout, av + gi * a_stride, m, n, k);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// add: equal shapes, or b broadcast over a's leading dims (bias add).
// ---------------------------------------------------------------------------
template <typename T>
TensorT<T> add(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
    const bool same = a.shape() == b.shape();
    const int64_t bn = b.numel();
    if (!same) {
        // b.shape must be a trailing suffix of a.shape
        const auto& as = a.shape();
        const auto& bs = b.shape();
        if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin()))
            throw ShapeError("add shape mismatch: " + shape_str(as) + " vs " + shape_str(bs));
    }
    TensorT<T> out = a.clone();
    T* op = out.data().data();
    const T* bp = b.data().data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) op[i] += bp[i % bn];

    if (tape) {
        TensorT<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, n, bn]() mutable {
            const std::span<const T> g = oc.grad();
            ac.ensure_grad();
            bc.ensure_grad();
            T* ga = ac.grad().data();
            T* gb = bc.grad().data();
            for (int64_t i = 0; i < n; ++i) {
                ga[i] += g[i];
                gb[i % bn] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> scale(TapeT<T>* tape, const TensorT<T>& x, T c) {
    TensorT<T> out = x.clone();
    for (auto& v : out.vec()) v *= c;
    if (tape) {
        TensorT<T> xc = x, oc = out;
        tape->record([xc, oc, c]() mutable {
            const std::span<const T> g = oc.grad();
            xc.ensure_grad();
            T* gx = xc.grad().data();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// gelu (tanh form): 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715 x^3)))
// ---------------------------------------------------------------------------
template <typename T>
TensorT<T> gelu(TapeT<T>* tape, const TensorT<T>& x) {
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const T* xp = x.data().data();
    T* op = out.data().data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) {
        const T v = xp[i];
        const T u = T(kC) * (v + T(kA) * v * v * v);
        op[i] = T(0.5) * v * (T(1) + detail::ftanh(u));
    }
    if (tape) {
        TensorT<T> xc = x, oc = out;
        tape->record([xc, oc, n]() mutable {
            const std::span<const T> g = oc.grad();
            xc.ensure_grad();
            T* gx = xc.grad().data();
            const T* xv = xc.data().data();
            for (int64_t i = 0; i < n; ++i) {
                const T v = xv[i];
                const T u = T(kC) * (v + T(kA) * v * v * v);
                const T t = detail::ftanh(u);
                const T du = T(kC) * (T(1) + T(3) * T(kA) * v * v);
                gx[i] += (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du) * g[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> sigmoid(TapeT<T>* tape, const TensorT<T>& x) {
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const T* xp = x.data().data();
    T* op = out.data().data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = T(1) / (T(1) + detail::fexp(-xp[i]));
    if (tape) {
        TensorT<T> xc = x, oc = out;
        tape->record([xc, oc, n]() mutable {
            const std::span<const T> g = oc.grad();
            xc.ensure_grad();
            T* gx = xc.grad().data();
            const T* y = oc.data().data();
            for (int64_t i = 0; i < n; ++i) gx[i] += y[i] * (T(1) - y[i]) * g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax along an axis, max-subtracted for stability.
// ---------------------------------------------------------------------------
template <typename T>
TensorT<T> softmax(TapeT<T>* tape, const TensorT<T>& x, int axis = -1) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw ShapeError("softmax axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    const int n = x.shape()[static_cast<size_t>(axis)];
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);

    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const T* xp = x.data().data();
    T* op = out.data().data();
    if (inner == 1) {
        // contiguous rows (the usual last-axis case); tight vectorizable loops
        for (int64_t o = 0; o < outer; ++o) {
            const T* row = xp + o * n;
            T* orow = op + o * n;
            T mx = row[0];
            for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
            T sum = T(0);
            for (int j = 0; j < n; ++j) {
                const T e = detail::fexp(row[j] - mx);
                orow[j] = e;
                sum += e;
            }
            const T inv = T(1) / sum;
            for (int j = 0; j < n; ++j) orow[j] *= inv;
        }
    } else {
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t in = 0; in < inner; ++in) {
                const int64_t base = o * n * inner + in;
                T mx = xp[base];
                for (int j = 1; j < n; ++j) mx = std::max(mx, xp[base + j * inner]);
                T sum = T(0);
                for (int j = 0; j < n; ++j) {
                    const T e = detail::fexp(xp[base + j * inner] - mx);
                    op[base + j * inner] = e;
                    sum += e;
                }
                const T inv = T(1) / sum;
                for (int j = 0; j < n; ++j) op[base + j * inner] *= inv;
            }
        }
    }
    if (tape) {
        TensorT<T> xc = x, oc = out;
        tape->record([xc, oc, outer, inner, n]() mutable {
            const std::span<const T> g = oc.grad();
            xc.ensure_grad();
            T* gx = xc.grad().data();
            const T* y = oc.data().data();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * n * inner + in;
                    T dot = T(0);
                    for (int j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
                    for (int j = 0; j < n; ++j) {
                        const int64_t idx = base + j * inner;
                        gx[idx] += y[idx] * (g[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis with learned gain/bias.
// ---------------------------------------------------------------------------
template <typename T>
TensorT<T> layer_norm(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias,
                      T eps = T(1e-5)) {
    const int h = x.dim(-1);
    if (gain.numel() != h || bias.numel() != h)
        throw ShapeError("layer_norm gain/bias must have " + std::to_string(h) + " elements");
    const int64_t rows = x.numel() / h;
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    std::vector<T> rstd(static_cast<size_t>(rows));
    std::vector<T> xhat(static_cast<size_t>(x.numel()));

    const T* xp = x.data().data();
    const T* gp = gain.data().data();
    const T* bp = bias.data().data();
    T* op = out.data().data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = xp + r * h;
        T mean = T(0);
        for (int j = 0; j < h; ++j) mean += row[j];
        mean /= T(h);
        T var = T(0);
        for (int j = 0; j < h; ++j) {
            const T d = row[j] - mean;
            var += d * d;
        }
        var /= T(h);
        const T rs = T(1) / std::sqrt(var + eps);
        rstd[static_cast<size_t>(r)] = rs;
        for (int j = 0; j < h; ++j) {
            const T xh = (row[j] - mean) * rs;
            xhat[static_cast<size_t>(r * h + j)] = xh;
            op[r * h + j] = xh * gp[j] + bp[j];
        }
    }
    if (tape) {
        TensorT<T> xc = x, gc = gain, bc = bias, oc = out;
        tape->record([xc, gc, bc, oc, rows, h, rstd = std::move(rstd), xhat = std::move(xhat)]() mutable {
            const std::span<const T> g = oc.grad();
            xc.ensure_grad();
            gc.ensure_grad();
            bc.ensure_grad();
            T* gx = xc.grad().data();
            T* gg = gc.grad().data();
            T* gb = bc.grad().data();
            const T* gv = gc.data().data();
            for (int64_t r = 0; r < rows; ++r) {
                const T* grow = g.data() + r * h;
                const T* xh = xhat.data() + r * h;
                T mean_dy = T(0), mean_dy_xhat = T(0);
                for (int j = 0; j < h; ++j) {
                    const T dy = grow[j] * gv[j];
                    mean_dy += dy;
                    mean_dy_xhat += dy * xh[j];
                    gg[j] += grow[j] * xh[j];
                    gb[j] += grow[j];
                }
                mean_dy /= T(h);
                mean_dy_xhat /= T(h);
                const T rs = rstd[static_cast<size_t>(r)];
                for (int j = 0; j < h; ++j) {
                    const T dy = grow[j] * gv[j];
                    gx[r * h + j] += rs * (dy - mean_dy - xh[j] * mean_dy_xhat);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// embedding: rows of table selected by token ids -> [batch, seq, width].
// ---------------------------------------------------------------------------
template <typename T>
TensorT<T> embedding(TapeT<T>* tape, const TensorT<T>& table, const std::vector<int>& ids, int batch, int seq) {
    if (table.rank() != 2) throw ShapeError("embedding table must be rank 2, got " + shape_str(table.shape()));
    if (static_cast<int64_t>(ids.size()) != static_cast<int64_t>(batch) * seq)
        throw ShapeError("embedding ids length " + std::to_string(ids.size()) + " != batch*seq");
    const int v = table.dim(0), h = table.dim(1);
    for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] < 0 || ids[i] >= v)
            throw IndexError("token id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                             " out of range [0," + std::to_string(v) + ")");
    TensorT<T> out = TensorT<T>::zeros({batch, seq, h});
    const T* tp = table.data().data();
    T* op = out.data().data();
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(tp + static_cast<int64_t>(ids[i]) * h, h, op + static_cast<int64_t>(i) * h);
    if (tape) {
        TensorT<T> tc = table, oc = out;
        tape->record([tc, oc, ids, h]() mutable {
            const std::span<const T> g = oc.grad();
            tc.ensure_grad();
            T* gt = tc.grad().data();
            for (size_t i = 0; i < ids.size(); ++i) {
                const T* grow = g.data() + static_cast<int64_t>(i) * h;
                T* trow = gt + static_cast<int64_t>(ids[i]) * h;
                for (int j = 0; j < h; ++j) trow[j] += grow[j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// cross_entropy: mean negative log-softmax probability of targets.
// logits [batch, seq, vocab], targets length batch*seq -> scalar.
// ---------------------------------------------------------------------------
template <typename T>
TensorT<T> cross_entropy(TapeT<T>* tape, const TensorT<T>& logits, const std::vector<int>& targets) {
    if (logits.rank() < 2) throw ShapeError("cross_entropy logits must have rank >= 2");
    const int v = logits.dim(-1);
    const int64_t rows = logits.numel() / v;
    if (static_cast<int64_t>(targets.size()) != rows)
        throw ShapeError("cross_entropy expects " + std::to_string(rows) + " targets, got " +
                         std::to_string(targets.size()));
    for (size_t i = 0; i < targets.size(); ++i)
        if (targets[i] < 0 || targets[i] >= v)
            throw IndexError("target id " + std::to_string(targets[i]) + " at position " + std::to_string(i) +
                             " out of range [0," + std::to_string(v) + ")");

    const T* lp = logits.data().data();
    std::vector<T> lse(static_cast<size_t>(rows));
    double total = 0.0;  // accumulate the mean in double for stability
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = lp + r * v;
        T mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (int j = 0; j < v; ++j) sum += detail::fexp(row[j] - mx);
        const T l = mx + std::log(sum);
        lse[static_cast<size_t>(r)] = l;
        total += static_cast<double>(l - row[targets[static_cast<size_t>(r)]]);
    }
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(rows)));
    if (tape) {
        TensorT<T> lc = logits, oc = out;
        tape->record([lc, oc, targets, rows, v, lse = std::move(lse)]() mutable {
            const T g = oc.grad()[0];
            lc.ensure_grad();
            T* gl = lc.grad().data();
            const T* lv = lc.data().data();
            const T scale = g / T(rows);
            for (int64_t r = 0; r < rows; ++r) {
                const T* row = lv + r * v;
                T* grow = gl + r * v;
                const T l = lse[static_cast<size_t>(r)];
                for (int j = 0; j < v; ++j) grow[j] += detail::fexp(row[j] - l) * scale;
                grow[targets[static_cast<size_t>(r)]] -= scale;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// head split/merge: [B,S,H*d] <-> [B,H,S,d]
// ---------------------------------------------------------------------------
template <typename T>
TensorT<T> split_heads(TapeT<T>* tape, const TensorT<T>& x, int heads) {
    if (x.rank() != 3) throw ShapeError("split_heads expects [batch, seq, hidden], got " + shape_str(x.shape()));
    const int b = x.dim(0), s = x.dim(1), h = x.dim(2);
    if (h % heads != 0) throw ShapeError("hidden " + std::to_string(h) + " not divisible by heads");
    const int d = h / heads;
    TensorT<T> out = TensorT<T>::zeros({b, heads, s, d});
    const T* xp = x.data().data();
    T* op = out.data().data();
    for (int bi = 0; bi < b; ++bi)
        for (int si = 0; si < s; ++si)
            for (int hi = 0; hi < heads; ++hi)
                std::copy_n(xp + ((static_cast<int64_t>(bi) * s + si) * h) + hi * d, d,
                            op + (((static_cast<int64_t>(bi) * heads + hi) * s) + si) * d);
    if (tape) {
        TensorT<T> xc = x, oc = out;
        tape->record([xc, oc, b, s, h, heads, d]() mutable {
            const std::span<const T> g = oc.grad();
            xc.ensure_grad();
            T* gx = xc.grad().data();
            for (int bi = 0; bi < b; ++bi)
                for (int si = 0; si < s; ++si)
                    for (int hi = 0; hi < heads; ++hi) {
                        const T* grow = g.data() + (((static_cast<int64_t>(bi) * heads + hi) * s) + si) * d;
                        T* xrow = gx + ((static_cast<int64_t>(bi) * s + si) * h) + hi * d;
                        for (int j = 0; j < d; ++j) xrow[j] += grow[j];
                    }
        });
    }
    return out;
}

template <typename T>
TensorT<T> merge_heads(TapeT<T>* tape, const TensorT<T>& x) {
    if (x.rank() != 4) throw ShapeError("merge_heads expects [batch, heads, seq, dim], got " + shape_str(x.shape()));
    const int b = x.dim(0), heads = x.dim(1), s = x.dim(2), d = x.dim(3);
    TensorT<T> out = TensorT<T>::zeros({b, s, heads * d});
    const int h = heads * d;
    const T* xp = x.data().data();
    T* op = out.data().data();
    for (int bi = 0; bi < b; ++bi)
        for (int hi = 0; hi < heads; ++hi)
            for (int si = 0; si < s; ++si)
                std::copy_n(xp + (((static_cast<int64_t>(bi) * heads + hi) * s) + si) * d, d,
                            op + ((static_cast<int64_t>(bi) * s + si) * h) + hi * d);
    if (tape) {
        TensorT<T> xc = x, oc = out;
        tape->record([xc, oc, b, s, h, heads, d]() mutable {
            const std::span<const T> g = oc.grad();
            xc.ensure_grad();
            T* gx = xc.grad().data();
            for (int bi = 0; bi < b; ++bi)
                for (int hi = 0; hi < heads; ++hi)
                    for (int si = 0; si < s; ++si) {
                        const T* grow = g.data() + ((static_cast<int64_t>(bi) * s + si) * h) + hi * d;
                        T* xrow = gx + (((static_cast<int64_t>(bi) * heads + hi) * s) + si) * d;
                        for (int j = 0; j < d; ++j) xrow[j] += grow[j];
                    }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// causal_mask: additive -1e9 above the diagonal of the last two axes.
// ---------------------------------------------------------------------------
template <typename T>
TensorT<T> causal_mask(TapeT<T>* tape, const TensorT<T>& scores) {
    if (scores.rank() < 2 || scores.dim(-1) != scores.dim(-2))
        throw ShapeError("causal_mask expects square trailing dims, got " + shape_str(scores.shape()));
    const int s = scores.dim(-1);
    const int64_t mats = scores.numel() / (static_cast<int64_t>(s) * s);
    TensorT<T> out = scores.clone();
    T* op = out.data().data();
    const T neg = T(-1e9);
    for (int64_t mi = 0; mi < mats; ++mi) {
        T* mat = op + mi * s * s;
        for (int i = 0; i < s; ++i)
            for (int j = i + 1; j < s; ++j) mat[static_cast<int64_t>(i) * s + j] += neg;
    }
    if (tape) {
        TensorT<T> xc = scores, oc = out;
        tape->record([xc, oc]() mutable {
            const std::span<const T> g = oc.grad();
            xc.ensure_grad();
            T* gx = xc.grad().data();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// fusion: w * x + (1 - w) * y with a [1]-shaped weight tensor, computed as
// y + w * (x - y) so that equal inputs pass through exactly for any w.
// ---------------------------------------------------------------------------
template <typename T>
TensorT<T> fusion(TapeT<T>* tape, const TensorT<T>& moe_out, const TensorT<T>& shared_out, const TensorT<T>& w) {
    if (moe_out.shape() != shared_out.shape())
        throw ShapeError("fusion shape mismatch: " + shape_str(moe_out.shape()) + " vs " +
                         shape_str(shared_out.shape()));
    if (w.numel() != 1) throw ShapeError("fusion weight must be a single scalar");
    const T wv = w.data()[0];
    const int64_t n = moe_out.numel();
    TensorT<T> out = TensorT<T>::zeros(moe_out.shape());
    const T* xp = moe_out.data().data();
    const T* yp = shared_out.data().data();
    T* op = out.data().data();
    if (wv == T(1)) {
        std::copy_n(xp, n, op);
    } else {
        for (int64_t i = 0; i < n; ++i) op[i] = yp[i] + wv * (xp[i] - yp[i]);
    }
    if (tape) {
        TensorT<T> xc = moe_out, yc = shared_out, wc = w, oc = out;
        tape->record([xc, yc, wc, oc, n]() mutable {
            const std::span<const T> g = oc.grad();
            xc.ensure_grad();
            yc.ensure_grad();
            wc.ensure_grad();
            const T wv = wc.data()[0];
            T* gx = xc.grad().data();
            T* gy = yc.grad().data();
            const T* xv = xc.data().data();
            const T* yv = yc.data().data();
            T gw = T(0);
            for (int64_t i = 0; i < n; ++i) {
                gx[i] += wv * g[i];
                gy[i] += (T(1) - wv) * g[i];
                gw += g[i] * (xv[i] - yv[i]);
            }
            wc.grad()[0] += gw;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// topk_renorm: zero out non-selected columns per row and renormalize the kept
// entries to sum to 1. mask is row-major [rows, cols] of 0/1.
// ---------------------------------------------------------------------------
template <typename T>
TensorT<T> topk_renorm(TapeT<T>* tape, const TensorT<T>& probs, const std::vector<uint8_t>& mask) {
    const int cols = probs.dim(-1);
    const int rows = static_cast<int>(probs.numel() / cols);
    if (static_cast<int64_t>(mask.size()) != probs.numel())
        throw ShapeError("topk_renorm mask size mismatch");
    TensorT<T> out = TensorT<T>::zeros(probs.shape());
    std::vector<T> rowsum(static_cast<size_t>(rows), T(0));
    const T* pp = probs.data().data();
    T* op = out.data().data();
    for (int r = 0; r < rows; ++r) {
        T s = T(0);
        for (int c = 0; c < cols; ++c)
            if (mask[static_cast<size_t>(r) * cols + c]) s += pp[static_cast<int64_t>(r) * cols + c];
        rowsum[static_cast<size_t>(r)] = s;
        for (int c = 0; c < cols; ++c)
            if (mask[static_cast<size_t>(r) * cols + c])
                op[static_cast<int64_t>(r) * cols + c] = pp[static_cast<int64_t>(r) * cols + c] / s;
    }
    if (tape) {
        TensorT<T> pc = probs, oc = out;
        tape->record([pc, oc, mask, rows, cols, rowsum = std::move(rowsum)]() mutable {
            const std::span<const T> g = oc.grad();
            pc.ensure_grad();
            T* gp = pc.grad().data();
            const T* y = oc.data().data();
            for (int r = 0; r < rows; ++r) {
                const T s = rowsum[static_cast<size_t>(r)];
                T dot = T(0);
                for (int c = 0; c < cols; ++c) {
                    const int64_t i = static_cast<int64_t>(r) * cols + c;
                    if (mask[static_cast<size_t>(i)]) dot += g[i] * y[i];
                }
                for (int c = 0; c < cols; ++c) {
                    const int64_t i = static_cast<int64_t>(r) * cols + c;
                    if (mask[static_cast<size_t>(i)]) gp[i] += (g[i] - dot) / s;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// gather/scatter rows for sparse expert dispatch. x is treated as
// [tokens, width] with tokens = numel / last dim.
// ---------------------------------------------------------------------------
template <typename T>
TensorT<T> gather_rows(TapeT<T>* tape, const TensorT<T>& x, const std::vector<int>& rows) {
    const int h = x.dim(-1);
    const int64_t n_rows = x.numel() / h;
    for (int r : rows)
        if (r < 0 || r >= n_rows) throw IndexError("gather_rows index " + std::to_string(r) + " out of range");
    TensorT<T> out = TensorT<T>::zeros({static_cast<int>(rows.size()), h});
    const T* xp = x.data().data();
    T* op = out.data().data();
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy_n(xp + static_cast<int64_t>(rows[i]) * h, h, op + static_cast<int64_t>(i) * h);
    if (tape) {
        TensorT<T> xc = x, oc = out;
        tape->record([xc, oc, rows, h]() mutable {
            const std::span<const T> g = oc.grad();
            xc.ensure_grad();
            T* gx = xc.grad().data();
            for (size_t i = 0; i < rows.size(); ++i) {
                const T* grow = g.data() + static_cast<int64_t>(i) * h;
                T* xrow = gx + static_cast<int64_t>(rows[i]) * h;
                for (int j = 0; j < h; ++j) xrow[j] += grow[j];
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> scatter_rows(TapeT<T>* tape, const TensorT<T>& src, const std::vector<int>& rows, const Shape& out_shape) {
    const int h = src.dim(-1);
    if (out_shape.back() != h) throw ShapeError("scatter_rows width mismatch");
    TensorT<T> out = TensorT<T>::zeros(out_shape);
    const int64_t n_rows = out.numel() / h;
    if (static_cast<int64_t>(rows.size()) != src.numel() / h)
        throw ShapeError("scatter_rows row count mismatch");
    const T* sp = src.data().data();
    T* op = out.data().data();
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= n_rows)
            throw IndexError("scatter_rows index " + std::to_string(rows[i]) + " out of range");
        std::copy_n(sp + static_cast<int64_t>(i) * h, h, op + static_cast<int64_t>(rows[i]) * h);
    }
    if (tape) {
        TensorT<T> sc = src, oc = out;
        tape->record([sc, oc, rows, h]() mutable {
            const std::span<const T> g = oc.grad();
            sc.ensure_grad();
            T* gs = sc.grad().data();
            for (size_t i = 0; i < rows.size(); ++i) {
                const T* grow = g.data() + static_cast<int64_t>(rows[i]) * h;
                T* srow = gs + static_cast<int64_t>(i) * h;
                for (int j = 0; j < h; ++j) srow[j] += grow[j];
            }
        });
    }
    return out;
}

// Picks w[rows[i], col] into a [n] vector (per-token routing weights).
// Leading dims of w are flattened into rows.
template <typename T>
TensorT<T> gather_weights(TapeT<T>* tape, const TensorT<T>& w, const std::vector<int>& rows, int col) {
    const int cols = w.dim(-1);
    TensorT<T> out = TensorT<T>::zeros({static_cast<int>(rows.size())});
    const T* wp = w.data().data();
    T* op = out.data().data();
    for (size_t i = 0; i < rows.size(); ++i) op[i] = wp[static_cast<int64_t>(rows[i]) * cols + col];
    if (tape) {
        TensorT<T> wc = w, oc = out;
        tape->record([wc, oc, rows, cols, col]() mutable {
            const std::span<const T> g = oc.grad();
            wc.ensure_grad();
            T* gw = wc.grad().data();
            for (size_t i = 0; i < rows.size(); ++i) gw[static_cast<int64_t>(rows[i]) * cols + col] += g[i];
        });
    }
    return out;
}

// y[r,:] = x[r,:] * s[r]
template <typename T>
TensorT<T> scale_rows(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& s) {
    if (x.rank() != 2 || s.rank() != 1 || s.numel() != x.dim(0))
        throw ShapeError("scale_rows expects [n,h] and [n], got " + shape_str(x.shape()) + " and " +
                         shape_str(s.shape()));
    const int n = x.dim(0), h = x.dim(1);
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const T* xp = x.data().data();
    const T* sp = s.data().data();
    T* op = out.data().data();
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < h; ++j) op[static_cast<int64_t>(r) * h + j] = xp[static_cast<int64_t>(r) * h + j] * sp[r];
    if (tape) {
        TensorT<T> xc = x, sc = s, oc = out;
        tape->record([xc, sc, oc, n, h]() mutable {
            const std::span<const T> g = oc.grad();
            xc.ensure_grad();
            sc.ensure_grad();
            T* gx = xc.grad().data();
            T* gs = sc.grad().data();
            const T* xv = xc.data().data();
            const T* sv = sc.data().data();
            for (int r = 0; r < n; ++r) {
                T acc = T(0);
                for (int j = 0; j < h; ++j) {
                    const int64_t i = static_cast<int64_t>(r) * h + j;
                    gx[i] += g[i] * sv[r];
                    acc += g[i] * xv[i];
                }
                gs[r] += acc;
            }
        });
    }
    return out;
}

// Tape entry that only materializes zero gradients for the given tensors.
// Used for experts that received no tokens in a step: their true gradient is
// zero and the optimizer contract requires it to exist.
template <typename T>
void record_zero_grad(TapeT<T>* tape, std::vector<TensorT<T>> tensors) {
    if (!tape) return;
    tape->record([tensors = std::move(tensors)]() mutable {
        for (auto& t : tensors) t.ensure_grad();
    });
}

}  // namespace ops

// Spec-level entry point: validates and runs the reverse sweep.
template <typename T>
void backward(TensorT<T>& loss, TapeT<T>& tape) {
    tape.backward(loss);
}

}  // namespace moct
