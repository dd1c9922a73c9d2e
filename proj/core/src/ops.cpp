#include "dsu/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

namespace dsu::ops {

namespace {

using std::int64_t;

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype())
        throw ShapeError(std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) +
                         " vs " + dtype_name(b.dtype()) + ")");
}

// --------------------------------------------------------------------------
// GEMM, row-major. C is accumulated into (callers zero it first).
// --------------------------------------------------------------------------

template <typename T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C) {
    for (int i = 0; i < M; ++i) {
        const T* a = A + static_cast<int64_t>(i) * K;
        T* c = C + static_cast<int64_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const T av = a[k];
            const T* b = B + static_cast<int64_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C) {
    for (int i = 0; i < M; ++i) {
        const T* a = A + static_cast<int64_t>(i) * K;
        T* c = C + static_cast<int64_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const T* b = B + static_cast<int64_t>(j) * K;
            T acc = 0;
            for (int k = 0; k < K; ++k) acc += a[k] * b[k];
            c[j] += acc;
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C) {
    for (int k = 0; k < K; ++k) {
        const T* a = A + static_cast<int64_t>(k) * M;
        const T* b = B + static_cast<int64_t>(k) * N;
        for (int i = 0; i < M; ++i) {
            const T av = a[i];
            T* c = C + static_cast<int64_t>(i) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

template <typename T>
std::span<const T> data_of(const Tensor& t);
template <>
std::span<const float> data_of<float>(const Tensor& t) { return t.f32(); }
template <>
std::span<const double> data_of<double>(const Tensor& t) { return t.f64(); }

template <typename T>
std::span<T> data_of(Tensor& t);
template <>
std::span<float> data_of<float>(Tensor& t) { return t.f32(); }
template <>
std::span<double> data_of<double>(Tensor& t) { return t.f64(); }

// --------------------------------------------------------------------------
// Elementwise with broadcast
// --------------------------------------------------------------------------

struct BcastPlan {
    detail::BcastKind kind;
    int64_t tail = 1; // Trailing: elements of `a` per element of `b`
    int64_t c = 1;    // Channel: channel count
    int64_t rest = 1; // Channel: elements per (batch, channel) slab
};

BcastPlan make_plan(const std::vector<int>& as, const std::vector<int>& bs) {
    BcastPlan p{detail::broadcast_kind(as, bs)};
    if (p.kind == detail::BcastKind::Trailing) {
        p.tail = 1;
        for (std::size_t d = bs.size(); d < as.size(); ++d) p.tail *= as[d];
    } else if (p.kind == detail::BcastKind::Channel) {
        p.c = as[1];
        for (std::size_t d = 2; d < as.size(); ++d) p.rest *= as[d];
    }
    return p;
}

inline int64_t map_index(const BcastPlan& p, int64_t i) {
    switch (p.kind) {
        case detail::BcastKind::None: return i;
        case detail::BcastKind::Trailing: return i / p.tail;
        case detail::BcastKind::Channel: return (i / p.rest) % p.c;
    }
    return i;
}

template <typename T>
void ewise_kernel(Ewise op, const T* a, const T* b, T* out, int64_t n, const BcastPlan& p) {
    switch (op) {
        case Ewise::Add:
            for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[map_index(p, i)];
            break;
        case Ewise::Sub:
            for (int64_t i = 0; i < n; ++i) out[i] = a[i] - b[map_index(p, i)];
            break;
        case Ewise::Mul:
            for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[map_index(p, i)];
            break;
        case Ewise::Div:
            for (int64_t i = 0; i < n; ++i) out[i] = a[i] / b[map_index(p, i)];
            break;
    }
}

// --------------------------------------------------------------------------
// Reduction machinery
// --------------------------------------------------------------------------

struct ReducePlan {
    std::vector<int> in_shape;
    std::vector<int> out_shape;     // reduced axes removed, [1] if empty
    std::array<bool, 4> reduced{};  // per input dim
    std::array<int64_t, 4> out_stride{}; // contribution of non-reduced dims
    int64_t red_n = 1;
};

ReducePlan make_reduce_plan(const std::vector<int>& shape, const std::vector<int>& axes) {
    if (axes.empty()) throw ShapeError("reduce: empty axis set");
    ReducePlan p;
    p.in_shape = shape;
    const int nd = static_cast<int>(shape.size());
    for (int ax : axes) {
        if (ax < 0 || ax >= nd)
            throw ShapeError("reduce: axis " + std::to_string(ax) + " out of range for " +
                             shape_str(shape));
        if (p.reduced[static_cast<std::size_t>(ax)])
            throw ShapeError("reduce: duplicate axis " + std::to_string(ax));
        p.reduced[static_cast<std::size_t>(ax)] = true;
        p.red_n *= shape[static_cast<std::size_t>(ax)];
    }
    for (int d = 0; d < nd; ++d)
        if (!p.reduced[static_cast<std::size_t>(d)]) p.out_shape.push_back(shape[static_cast<std::size_t>(d)]);
    if (p.out_shape.empty()) p.out_shape = {1};
    // strides of the output, walked in input-dim order
    int64_t stride = 1;
    for (int d = nd - 1; d >= 0; --d) {
        if (!p.reduced[static_cast<std::size_t>(d)]) {
            p.out_stride[static_cast<std::size_t>(d)] = stride;
            stride *= shape[static_cast<std::size_t>(d)];
        }
    }
    return p;
}

// Calls fn(in_index, out_index) over all input elements.
template <typename Fn>
void for_each_mapped(const ReducePlan& p, Fn&& fn) {
    const int nd = static_cast<int>(p.in_shape.size());
    const int64_t n = shape_numel(p.in_shape);
    std::array<int64_t, 4> coord{};
    int64_t out_idx = 0;
    for (int64_t i = 0; i < n; ++i) {
        fn(i, out_idx);
        for (int d = nd - 1; d >= 0; --d) {
            const auto du = static_cast<std::size_t>(d);
            ++coord[du];
            if (!p.reduced[du]) out_idx += p.out_stride[du];
            if (coord[du] < p.in_shape[du]) break;
            if (!p.reduced[du]) out_idx -= p.out_stride[du] * p.in_shape[du];
            coord[du] = 0;
        }
    }
}

template <typename T>
Tensor reduce_impl(Reduction op, const Tensor& x, const ReducePlan& plan, Divisor divisor) {
    const auto xs = data_of<T>(x);
    Tensor mean_t = Tensor::zeros(plan.out_shape, x.dtype());
    auto ms = data_of<T>(mean_t);
    for_each_mapped(plan, [&](int64_t i, int64_t o) { ms[o] += xs[i]; });
    const T inv_n = static_cast<T>(1.0 / static_cast<double>(plan.red_n));
    for (auto& v : ms) v *= inv_n;
    if (op == Reduction::Mean) return mean_t;

    int64_t div = plan.red_n;
    if (divisor == Divisor::NMinus1) {
        if (plan.red_n < 2)
            throw NumericalError("variance: divisor N-1 needs at least two elements");
        div = plan.red_n - 1;
    }
    Tensor var_t = Tensor::zeros(plan.out_shape, x.dtype());
    auto vs = data_of<T>(var_t);
    for_each_mapped(plan, [&](int64_t i, int64_t o) {
        const T d = xs[i] - ms[o];
        vs[o] += d * d;
    });
    const T inv_div = static_cast<T>(1.0 / static_cast<double>(div));
    for (auto& v : vs) v *= inv_div;
    return var_t;
}

// --------------------------------------------------------------------------
// Convolution
// --------------------------------------------------------------------------

struct ConvDims {
    int B, Cin, H, W, Cout, k, OH, OW;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    if (x.ndim() != 4 || w.ndim() != 4)
        throw ShapeError("conv2d: expected 4-D input and weight, got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    if (w.dim(2) != w.dim(3)) throw ShapeError("conv2d: kernel must be square");
    if (x.dim(1) != w.dim(1))
        throw ShapeError("conv2d: input channels " + std::to_string(x.dim(1)) +
                         " do not match weight channels " + std::to_string(w.dim(1)));
    if (bias.ndim() != 1 || bias.dim(0) != w.dim(0))
        throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) +
                         " does not match output channels " + std::to_string(w.dim(0)));
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
    ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), 0, 0};
    if (d.H + 2 * pad < d.k || d.W + 2 * pad < d.k)
        throw ShapeError("conv2d: kernel " + std::to_string(d.k) + " larger than padded input " +
                         shape_str(x.shape()) + " with pad " + std::to_string(pad));
    d.OH = (d.H + 2 * pad - d.k) / stride + 1;
    d.OW = (d.W + 2 * pad - d.k) / stride + 1;
    return d;
}

template <typename T>
void im2col(const T* img, const ConvDims& d, int stride, int pad, T* col) {
    // col is [Cin*k*k, OH*OW]
    for (int ic = 0; ic < d.Cin; ++ic) {
        for (int ky = 0; ky < d.k; ++ky) {
            for (int kx = 0; kx < d.k; ++kx) {
                T* row = col + (static_cast<int64_t>(ic) * d.k * d.k + ky * d.k + kx) *
                                   (static_cast<int64_t>(d.OH) * d.OW);
                for (int oy = 0; oy < d.OH; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    T* dst = row + static_cast<int64_t>(oy) * d.OW;
                    if (iy < 0 || iy >= d.H) {
                        std::fill(dst, dst + d.OW, T(0));
                        continue;
                    }
                    const T* src = img + (static_cast<int64_t>(ic) * d.H + iy) * d.W;
                    for (int ox = 0; ox < d.OW; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        dst[ox] = (ix >= 0 && ix < d.W) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, const ConvDims& d, int stride, int pad, T* img) {
    for (int ic = 0; ic < d.Cin; ++ic) {
        for (int ky = 0; ky < d.k; ++ky) {
            for (int kx = 0; kx < d.k; ++kx) {
                const T* row = col + (static_cast<int64_t>(ic) * d.k * d.k + ky * d.k + kx) *
                                         (static_cast<int64_t>(d.OH) * d.OW);
                for (int oy = 0; oy < d.OH; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= d.H) continue;
                    T* dst = img + (static_cast<int64_t>(ic) * d.H + iy) * d.W;
                    const T* src = row + static_cast<int64_t>(oy) * d.OW;
                    for (int ox = 0; ox < d.OW; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < d.W) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
Tensor conv2d_impl(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad,
                   const ConvDims& d) {
    Tensor out = Tensor::zeros({d.B, d.Cout, d.OH, d.OW}, x.dtype());
    const auto xs = data_of<T>(x);
    const auto ws = data_of<T>(w);
    const auto bs = data_of<T>(bias);
    auto os = data_of<T>(out);
    const int64_t ohow = static_cast<int64_t>(d.OH) * d.OW;
    const int64_t ckk = static_cast<int64_t>(d.Cin) * d.k * d.k;
    std::vector<T> col(static_cast<std::size_t>(ckk * ohow));
    for (int b = 0; b < d.B; ++b) {
        im2col(xs.data() + static_cast<int64_t>(b) * d.Cin * d.H * d.W, d, stride, pad, col.data());
        T* ob = os.data() + static_cast<int64_t>(b) * d.Cout * ohow;
        gemm_nn(d.Cout, static_cast<int>(ohow), static_cast<int>(ckk), ws.data(), col.data(), ob);
        for (int oc = 0; oc < d.Cout; ++oc) {
            T* row = ob + static_cast<int64_t>(oc) * ohow;
            const T bv = bs[static_cast<std::size_t>(oc)];
            for (int64_t i = 0; i < ohow; ++i) row[i] += bv;
        }
    }
    return out;
}

} // namespace

// --------------------------------------------------------------------------
// Public kernels
// --------------------------------------------------------------------------

namespace detail {

BcastKind broadcast_kind(const std::vector<int>& as, const std::vector<int>& bs) {
    if (as == bs) return BcastKind::None;
    if (bs.size() < as.size() && std::equal(bs.begin(), bs.end(), as.begin()))
        return BcastKind::Trailing;
    if (bs.size() == 1 && as.size() >= 2 && bs[0] == as[1]) return BcastKind::Channel;
    throw ShapeError("elementwise: shape " + shape_str(bs) + " is not broadcastable over " +
                     shape_str(as));
}

} // namespace detail

Tensor elementwise(Ewise op, const Tensor& a, const Tensor& b) {
    require_same_dtype(a, b, "elementwise");
    const BcastPlan plan = make_plan(a.shape(), b.shape());
    if (op == Ewise::Div) {
        const double floor = division_floor(b.dtype());
        int64_t violations = 0, first = -1;
        for (int64_t i = 0; i < b.numel(); ++i) {
            if (std::abs(b.at(i)) < floor) {
                if (violations == 0) first = i;
                ++violations;
            }
        }
        if (violations > 0)
            throw NumericalError("division domain: " + std::to_string(violations) +
                                 " denominator(s) below " + std::to_string(floor) +
                                 ", first at flat index " + std::to_string(first));
    }
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    if (a.dtype() == Dtype::Float32)
        ewise_kernel(op, a.f32().data(), b.f32().data(), out.f32().data(), a.numel(), plan);
    else
        ewise_kernel(op, a.f64().data(), b.f64().data(), out.f64().data(), a.numel(), plan);
    out.check_finite("elementwise");
    return out;
}

Tensor reduce(Reduction op, const Tensor& x, const std::vector<int>& axes, Divisor divisor) {
    const ReducePlan plan = make_reduce_plan(x.shape(), axes);
    Tensor out = x.dtype() == Dtype::Float32 ? reduce_impl<float>(op, x, plan, divisor)
                                             : reduce_impl<double>(op, x, plan, divisor);
    out.check_finite("reduce");
    return out;
}

Tensor add_scalar(const Tensor& a, double s) {
    Tensor out = a;
    const int64_t n = out.numel();
    if (out.dtype() == Dtype::Float32) {
        const float sf = static_cast<float>(s);
        for (auto& v : out.f32()) v += sf;
    } else {
        for (auto& v : out.f64()) v += s;
    }
    (void)n;
    out.check_finite("add_scalar");
    return out;
}

Tensor mul_scalar(const Tensor& a, double s) {
    Tensor out = a;
    if (out.dtype() == Dtype::Float32) {
        const float sf = static_cast<float>(s);
        for (auto& v : out.f32()) v *= sf;
    } else {
        for (auto& v : out.f64()) v *= s;
    }
    out.check_finite("mul_scalar");
    return out;
}

Tensor sqrt(const Tensor& x) {
    Tensor out = x;
    if (out.dtype() == Dtype::Float32)
        for (auto& v : out.f32()) v = std::sqrt(v);
    else
        for (auto& v : out.f64()) v = std::sqrt(v);
    out.check_finite("sqrt");
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    if (out.dtype() == Dtype::Float32)
        for (auto& v : out.f32()) v = v > 0.0f ? v : 0.0f;
    else
        for (auto& v : out.f64()) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor clamp_min(const Tensor& x, double floor) {
    Tensor out = x;
    if (out.dtype() == Dtype::Float32) {
        const float f = static_cast<float>(floor);
        for (auto& v : out.f32()) v = v > f ? v : f;
    } else {
        for (auto& v : out.f64()) v = v > floor ? v : floor;
    }
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    require_same_dtype(x, w, "conv2d");
    require_same_dtype(x, bias, "conv2d");
    const ConvDims d = conv_dims(x, w, bias, stride, pad);
    Tensor out = x.dtype() == Dtype::Float32 ? conv2d_impl<float>(x, w, bias, stride, pad, d)
                                             : conv2d_impl<double>(x, w, bias, stride, pad, d);
    out.check_finite("conv2d");
    return out;
}

Tensor avg_pool(const Tensor& x, int kernel, int stride) {
    if (x.ndim() != 4) throw ShapeError("avg_pool: expected 4-D input");
    if (kernel < 1 || stride < 1) throw ShapeError("avg_pool: kernel and stride must be >= 1");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (kernel > H || kernel > W)
        throw ShapeError("avg_pool: kernel larger than input " + shape_str(x.shape()));
    const int OH = (H - kernel) / stride + 1, OW = (W - kernel) / stride + 1;
    Tensor out = Tensor::zeros({B, C, OH, OW}, x.dtype());
    const double inv = 1.0 / (kernel * kernel);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    double acc = 0;
                    for (int ky = 0; ky < kernel; ++ky)
                        for (int kx = 0; kx < kernel; ++kx) {
                            const int64_t idx =
                                ((static_cast<int64_t>(b) * C + c) * H + oy * stride + ky) * W +
                                ox * stride + kx;
                            acc += x.at(idx);
                        }
                    out.set(((static_cast<int64_t>(b) * C + c) * OH + oy) * OW + ox, acc * inv);
                }
    out.check_finite("avg_pool");
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.ndim() != 4) throw ShapeError("global_avg_pool: expected 4-D input");
    return reduce(Reduction::Mean, x, {2, 3});
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_same_dtype(x, w, "linear");
    require_same_dtype(x, bias, "linear");
    if (x.ndim() != 2 || w.ndim() != 2 || bias.ndim() != 1)
        throw ShapeError("linear: expected x [B,F], w [F,O], bias [O]");
    if (x.dim(1) != w.dim(0) || bias.dim(0) != w.dim(1))
        throw ShapeError("linear: incompatible shapes " + shape_str(x.shape()) + " x " +
                         shape_str(w.shape()) + " + " + shape_str(bias.shape()));
    const int B = x.dim(0), F = x.dim(1), O = w.dim(1);
    Tensor out = Tensor::zeros({B, O}, x.dtype());
    if (x.dtype() == Dtype::Float32)
        gemm_nn(B, O, F, x.f32().data(), w.f32().data(), out.f32().data());
    else
        gemm_nn(B, O, F, x.f64().data(), w.f64().data(), out.f64().data());
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o) {
            const int64_t i = static_cast<int64_t>(b) * O + o;
            out.set(i, out.at(i) + bias.at(o));
        }
    out.check_finite("linear");
    return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
    if (x.ndim() < 1) throw ShapeError("gather_rows: undefined input");
    const int B = x.dim(0);
    const int64_t row_len = x.numel() / B;
    std::vector<int> out_shape = x.shape();
    out_shape[0] = static_cast<int>(rows.size());
    Tensor out = Tensor::zeros(out_shape, x.dtype());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] < 0 || rows[r] >= B)
            throw ShapeError("gather_rows: row " + std::to_string(rows[r]) + " out of range");
        for (int64_t i = 0; i < row_len; ++i)
            out.set(static_cast<int64_t>(r) * row_len + i,
                    x.at(static_cast<int64_t>(rows[r]) * row_len + i));
    }
    return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2) throw ShapeError("softmax_cross_entropy: expected [B,K] logits");
    const int B = logits.dim(0), K = logits.dim(1);
    if (static_cast<int>(labels.size()) != B)
        throw ShapeError("softmax_cross_entropy: label count " + std::to_string(labels.size()) +
                         " does not match batch " + std::to_string(B));
    double loss = 0;
    for (int b = 0; b < B; ++b) {
        if (labels[static_cast<std::size_t>(b)] < 0 || labels[static_cast<std::size_t>(b)] >= K)
            throw ShapeError("softmax_cross_entropy: label out of range");
        double m = logits.at(static_cast<int64_t>(b) * K);
        for (int k = 1; k < K; ++k) m = std::max(m, logits.at(static_cast<int64_t>(b) * K + k));
        double se = 0;
        for (int k = 0; k < K; ++k) se += std::exp(logits.at(static_cast<int64_t>(b) * K + k) - m);
        loss += m + std::log(se) - logits.at(static_cast<int64_t>(b) * K + labels[static_cast<std::size_t>(b)]);
    }
    Tensor out = Tensor::full({1}, loss / B, logits.dtype());
    out.check_finite("softmax_cross_entropy");
    return out;
}

Tensor sum(const Tensor& x) {
    double acc = 0;
    if (x.dtype() == Dtype::Float32) {
        float facc = 0;
        for (float v : x.f32()) facc += v;
        acc = facc;
    } else {
        for (double v : x.f64()) acc += v;
    }
    Tensor out = Tensor::full({1}, acc, x.dtype());
    out.check_finite("sum");
    return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    if (logits.ndim() != 2) throw ShapeError("argmax_rows: expected [B,K]");
    const int B = logits.dim(0), K = logits.dim(1);
    std::vector<int> out(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        int best = 0;
        double bv = logits.at(static_cast<int64_t>(b) * K);
        for (int k = 1; k < K; ++k) {
            const double v = logits.at(static_cast<int64_t>(b) * K + k);
            if (v > bv) {
                bv = v;
                best = k;
            }
        }
        out[static_cast<std::size_t>(b)] = best;
    }
    return out;
}

// --------------------------------------------------------------------------
// Backward helpers
// --------------------------------------------------------------------------

namespace detail {

Tensor reduce_broadcast_grad(const Tensor& g, BcastKind kind, const std::vector<int>& b_shape) {
    if (kind == BcastKind::None) return g;
    Tensor out = Tensor::zeros(b_shape, g.dtype());
    BcastPlan plan{kind};
    if (kind == BcastKind::Trailing) {
        plan.tail = g.numel() / shape_numel(b_shape);
    } else {
        plan.c = g.dim(1);
        plan.rest = 1;
        for (int d = 2; d < g.ndim(); ++d) plan.rest *= g.dim(d);
    }
    const int64_t n = g.numel();
    for (int64_t i = 0; i < n; ++i) {
        const int64_t j = map_index(plan, i);
        out.set(j, out.at(j) + g.at(i));
    }
    return out;
}

Tensor expand_reduce_grad(const Tensor& g, const std::vector<int>& x_shape,
                          const std::vector<int>& axes, double scale) {
    const ReducePlan plan = make_reduce_plan(x_shape, axes);
    Tensor out = Tensor::zeros(x_shape, g.dtype());
    if (g.dtype() == Dtype::Float32) {
        auto os = out.f32();
        const auto gs = g.f32();
        const float sf = static_cast<float>(scale);
        for_each_mapped(plan, [&](int64_t i, int64_t o) { os[i] = gs[o] * sf; });
    } else {
        auto os = out.f64();
        const auto gs = g.f64();
        for_each_mapped(plan, [&](int64_t i, int64_t o) { os[i] = gs[o] * scale; });
    }
    return out;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gout, int stride,
                          int pad) {
    const ConvDims d = conv_dims(x, w, Tensor::zeros({w.dim(0)}, w.dtype()), stride, pad);
    ConvGrads g{Tensor::zeros(x.shape(), x.dtype()), Tensor::zeros(w.shape(), w.dtype()),
                Tensor::zeros({d.Cout}, x.dtype())};
    const int64_t ohow = static_cast<int64_t>(d.OH) * d.OW;
    const int64_t ckk = static_cast<int64_t>(d.Cin) * d.k * d.k;

    auto run = [&](auto tag) {
        using T = decltype(tag);
        const auto xs = data_of<T>(x);
        const auto ws = data_of<T>(w);
        const auto gs = data_of<T>(gout);
        auto gxs = data_of<T>(g.gx);
        auto gws = data_of<T>(g.gw);
        auto gbs = data_of<T>(g.gb);
        std::vector<T> col(static_cast<std::size_t>(ckk * ohow));
        std::vector<T> gcol(static_cast<std::size_t>(ckk * ohow));
        for (int b = 0; b < d.B; ++b) {
            const T* gob = gs.data() + static_cast<int64_t>(b) * d.Cout * ohow;
            // bias: sum over spatial and batch
            for (int oc = 0; oc < d.Cout; ++oc) {
                T acc = 0;
                const T* row = gob + static_cast<int64_t>(oc) * ohow;
                for (int64_t i = 0; i < ohow; ++i) acc += row[i];
                gbs[static_cast<std::size_t>(oc)] += acc;
            }
            im2col(xs.data() + static_cast<int64_t>(b) * d.Cin * d.H * d.W, d, stride, pad,
                   col.data());
            // gw += gout_b [Cout, OHOW] * col^T [OHOW, ckk]
            gemm_nt(d.Cout, static_cast<int>(ckk), static_cast<int>(ohow), gob, col.data(),
                    gws.data());
            // gcol = w^T [ckk, Cout] * gout_b [Cout, OHOW]
            std::fill(gcol.begin(), gcol.end(), T(0));
            gemm_tn(static_cast<int>(ckk), static_cast<int>(ohow), d.Cout, ws.data(), gob,
                    gcol.data());
            col2im(gcol.data(), d, stride, pad,
                   gxs.data() + static_cast<int64_t>(b) * d.Cin * d.H * d.W);
        }
    };
    if (x.dtype() == Dtype::Float32)
        run(float{});
    else
        run(double{});
    return g;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& gout) {
    const int B = x.dim(0), F = x.dim(1), O = w.dim(1);
    LinearGrads g{Tensor::zeros(x.shape(), x.dtype()), Tensor::zeros(w.shape(), w.dtype()),
                  Tensor::zeros({O}, x.dtype())};
    auto run = [&](auto tag) {
        using T = decltype(tag);
        gemm_nt(B, F, O, data_of<T>(gout).data(), data_of<T>(w).data(), data_of<T>(g.gx).data());
        gemm_tn(F, O, B, data_of<T>(x).data(), data_of<T>(gout).data(), data_of<T>(g.gw).data());
        auto gbs = data_of<T>(g.gb);
        const auto gs = data_of<T>(gout);
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < O; ++o) gbs[static_cast<std::size_t>(o)] += gs[static_cast<int64_t>(b) * O + o];
    };
    if (x.dtype() == Dtype::Float32)
        run(float{});
    else
        run(double{});
    return g;
}

Tensor avg_pool_backward(const Tensor& gout, const std::vector<int>& x_shape, int kernel,
                         int stride) {
    const int B = x_shape[0], C = x_shape[1], H = x_shape[2], W = x_shape[3];
    const int OH = gout.dim(2), OW = gout.dim(3);
    Tensor gx = Tensor::zeros(x_shape, gout.dtype());
    const double inv = 1.0 / (kernel * kernel);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    const double gv =
                        gout.at(((static_cast<int64_t>(b) * C + c) * OH + oy) * OW + ox) * inv;
                    for (int ky = 0; ky < kernel; ++ky)
                        for (int kx = 0; kx < kernel; ++kx) {
                            const int64_t idx =
                                ((static_cast<int64_t>(b) * C + c) * H + oy * stride + ky) * W +
                                ox * stride + kx;
                            gx.set(idx, gx.at(idx) + gv);
                        }
                }
    return gx;
}

Tensor global_avg_pool_backward(const Tensor& gout, const std::vector<int>& x_shape) {
    return expand_reduce_grad(gout, x_shape, {2, 3},
                              1.0 / (static_cast<double>(x_shape[2]) * x_shape[3]));
}

Tensor gather_rows_backward(const Tensor& gout, const std::vector<int>& rows) {
    // rows here index into the ORIGINAL tensor; scatter-add handles repeats.
    std::vector<int> x_shape = gout.shape();
    int max_row = 0;
    for (int r : rows) max_row = std::max(max_row, r);
    x_shape[0] = max_row + 1;
    Tensor gx = Tensor::zeros(x_shape, gout.dtype());
    const int64_t row_len = gout.numel() / gout.dim(0);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (int64_t i = 0; i < row_len; ++i) {
            const int64_t dst = static_cast<int64_t>(rows[r]) * row_len + i;
            gx.set(dst, gx.at(dst) + gout.at(static_cast<int64_t>(r) * row_len + i));
        }
    return gx;
}

Tensor softmax_ce_backward(const Tensor& logits, const std::vector<int>& labels, double gout) {
    const int B = logits.dim(0), K = logits.dim(1);
    Tensor gx = Tensor::zeros(logits.shape(), logits.dtype());
    const double scale = gout / B;
    for (int b = 0; b < B; ++b) {
        double m = logits.at(static_cast<int64_t>(b) * K);
        for (int k = 1; k < K; ++k) m = std::max(m, logits.at(static_cast<int64_t>(b) * K + k));
        double se = 0;
        for (int k = 0; k < K; ++k) se += std::exp(logits.at(static_cast<int64_t>(b) * K + k) - m);
        for (int k = 0; k < K; ++k) {
            const double p = std::exp(logits.at(static_cast<int64_t>(b) * K + k) - m) / se;
            const double onehot = (k == labels[static_cast<std::size_t>(b)]) ? 1.0 : 0.0;
            gx.set(static_cast<int64_t>(b) * K + k, (p - onehot) * scale);
        }
    }
    return gx;
}

void accumulate(Tensor& into, const Tensor& g) {
    if (into.shape() != g.shape() || into.dtype() != g.dtype())
        throw ShapeError("accumulate: mismatched gradient shapes " + shape_str(into.shape()) +
                         " vs " + shape_str(g.shape()));
    if (into.dtype() == Dtype::Float32) {
        auto is = into.f32();
        const auto gs = g.f32();
        for (std::size_t i = 0; i < is.size(); ++i) is[i] += gs[i];
    } else {
        auto is = into.f64();
        const auto gs = g.f64();
        for (std::size_t i = 0; i < is.size(); ++i) is[i] += gs[i];
    }
}

} // namespace detail
} // namespace dsu::ops
