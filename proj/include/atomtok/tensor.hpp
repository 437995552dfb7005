#pragma once

// Reverse-mode automatic differentiation over a fixed op set: elementwise
// arithmetic and activations, matmul, depthwise 1D convolution, layer norm,
// sequence flip, reductions, and the pooling/upsampling pair used for token
// compression. Graphs are define-by-run and rebuilt per forward pass.
//
// A Tensor is a value-semantic handle: copies share the underlying buffer.
// Leaves created with requires_grad keep their graph node (and accumulated
// gradient) alive across forward passes; intermediate nodes die with the
// graph. A graph is confined to one thread; parameter tensors may be shared
// read-only across threads via shadow() (same data, private gradient).

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#ifdef ATOMTOK_HAVE_EIGEN
#include <Eigen/Dense>
#endif

#include "atomtok/fastmath.hpp"

namespace atomtok {

inline bool& autograd_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    NoGradGuard() : prev_(autograd_enabled()) { autograd_enabled() = false; }
    ~NoGradGuard() { autograd_enabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename T>
struct Node {
    std::vector<T> grad;
    int64_t size = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backprop;  // accumulates this->grad into parents

    explicit Node(int64_t n) : size(n) {}

    void ensure_grad() {
        if (static_cast<int64_t>(grad.size()) != size) grad.assign(size, T(0));
    }
};

template <typename T>
class Tensor {
public:
    std::vector<int64_t> shape;
    std::shared_ptr<std::vector<T>> data;
    bool requires_grad = false;
    std::shared_ptr<Node<T>> node;

    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false) {
        Tensor t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<T>>(numel_of(t.shape), T(0));
        if (requires_grad) t.make_leaf();
        return t;
    }

    static Tensor from(std::vector<int64_t> shape, std::vector<T> values, bool requires_grad = false) {
        if (numel_of(shape) != static_cast<int64_t>(values.size()))
            throw std::invalid_argument("tensor: data length does not match shape");
        Tensor t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<T>>(std::move(values));
        if (requires_grad) t.make_leaf();
        return t;
    }

    static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    void make_leaf() {
        requires_grad = true;
        node = std::make_shared<Node<T>>(numel());
    }

    // Same data buffer, fresh node/gradient. Used for read-only parameter
    // sharing across threads.
    Tensor shadow() const {
        Tensor t;
        t.shape = shape;
        t.data = data;
        if (requires_grad) t.make_leaf();
        return t;
    }

    Tensor clone_data() const {
        Tensor t;
        t.shape = shape;
        t.data = std::make_shared<std::vector<T>>(*data);
        return t;
    }

    int64_t numel() const { return numel_of(shape); }
    int64_t dim(size_t i) const { return shape.at(i); }
    size_t ndim() const { return shape.size(); }

    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }
    T& at(int64_t i) { return (*data)[i]; }
    T at(int64_t i) const { return (*data)[i]; }

    T value() const {
        if (numel() != 1) throw std::invalid_argument("value(): tensor is not scalar");
        return (*data)[0];
    }

    bool has_grad() const { return node && node->grad.size() == data->size(); }
    const std::vector<T>& grad() const {
        if (!node) throw std::runtime_error("grad(): tensor has no node");
        return node->grad;
    }
    std::vector<T>& grad_mut() {
        if (!node) throw std::runtime_error("grad_mut(): tensor has no node");
        node->ensure_grad();
        return node->grad;
    }
    void zero_grad() {
        if (node) node->grad.assign(numel(), T(0));
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return n;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

template <typename T>
std::shared_ptr<Node<T>> attach_node(Tensor<T>& out, std::initializer_list<const Tensor<T>*> parents) {
    if (!autograd_enabled()) return nullptr;
    bool any = false;
    for (const auto* p : parents)
        if (p && p->node) any = true;
    if (!any) return nullptr;
    auto n = std::make_shared<Node<T>>(out.numel());
    for (const auto* p : parents)
        if (p && p->node) n->parents.push_back(p->node);
    out.node = n;
    out.requires_grad = true;
    return n;
}

template <typename T>
void shape_check(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape != b.shape) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops. Broadcasting is restricted to exact shape match or
// a scalar (1-element) operand on either side.
// ---------------------------------------------------------------------------

enum class BinOp { add, sub, mul };

template <typename T>
Tensor<T> binary_elementwise(BinOp op, const Tensor<T>& a, const Tensor<T>& b) {
    const bool a_scalar = a.numel() == 1;
    const bool b_scalar = b.numel() == 1;
    if (!a_scalar && !b_scalar) detail::shape_check(a, b, "elementwise");

    const auto& out_shape = a_scalar && !b_scalar ? b.shape : a.shape;
    const int64_t n = Tensor<T>::numel_of(out_shape);
    Tensor<T> out;
    out.shape = out_shape;
    out.data = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.data->data();
    for (int64_t i = 0; i < n; ++i) {
        const T x = pa[a_scalar ? 0 : i];
        const T y = pb[b_scalar ? 0 : i];
        po[i] = op == BinOp::add ? x + y : (op == BinOp::sub ? x - y : x * y);
    }

    if (auto node = detail::attach_node(out, {&a, &b})) {
        auto an = a.node;
        auto bn = b.node;
        auto adata = a.data;
        auto bdata = b.data;
        Node<T>* self = node.get();
        node->backprop = [op, self, an, bn, adata, bdata, a_scalar, b_scalar, n]() {
            const auto& g = self->grad;
            if (an) {
                an->ensure_grad();
                for (int64_t i = 0; i < n; ++i) {
                    T gi = g[i];
                    if (op == BinOp::mul) gi *= (*bdata)[b_scalar ? 0 : i];
                    an->grad[a_scalar ? 0 : i] += gi;
                }
            }
            if (bn) {
                bn->ensure_grad();
                for (int64_t i = 0; i < n; ++i) {
                    T gi = g[i];
                    if (op == BinOp::sub)
                        gi = -gi;
                    else if (op == BinOp::mul)
                        gi *= (*adata)[a_scalar ? 0 : i];
                    bn->grad[b_scalar ? 0 : i] += gi;
                }
            }
        };
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(BinOp::add, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(BinOp::sub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(BinOp::mul, a, b);
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_elementwise(const Tensor<T>& a, Fwd fwd, Bwd bwd_factor_from_xy) {
    const int64_t n = a.numel();
    Tensor<T> out;
    out.shape = a.shape;
    out.data = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
    const T* pa = a.ptr();
    T* po = out.data->data();
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);

    if (auto node = detail::attach_node(out, {&a})) {
        auto an = a.node;
        auto adata = a.data;
        auto odata = out.data;
        Node<T>* self = node.get();
        node->backprop = [self, an, adata, odata, bwd_factor_from_xy, n]() {
            an->ensure_grad();
            const auto& g = self->grad;
            for (int64_t i = 0; i < n; ++i)
                an->grad[i] += g[i] * bwd_factor_from_xy((*adata)[i], (*odata)[i]);
        };
    }
    return out;
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& a) {
    return unary_elementwise(
        a, [](T x) { return fm::tanh_(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp_op(const Tensor<T>& a) {
    return unary_elementwise(
        a, [](T x) { return fm::exp_(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
    return unary_elementwise(
        a, [](T x) { return fm::silu_(x); },
        [](T x, T) {
            const T s = fm::sigmoid_(x);
            return s * (T(1) + x * (T(1) - s));
        });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
    return unary_elementwise(
        a, [](T x) { return fm::softplus_(x); }, [](T x, T) { return fm::sigmoid_(x); });
}

// Exact forward; the derivative guard only engages within rounding distance
// of zero, where sqrt is not differentiable anyway.
template <typename T>
Tensor<T> sqrt_op(const Tensor<T>& a) {
    return unary_elementwise(
        a, [](T x) { return std::sqrt(x); },
        [](T, T y) { return T(0.5) / std::max(y, T(1e-12)); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    return unary_elementwise(
        a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return scale(a, T(-1));
}

// ---------------------------------------------------------------------------
// Reductions and bias broadcast.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a) {
    const int64_t n = a.numel();
    T acc = 0;
    const T* pa = a.ptr();
    for (int64_t i = 0; i < n; ++i) acc += pa[i];
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (auto node = detail::attach_node(out, {&a})) {
        auto an = a.node;
        Node<T>* self = node.get();
        node->backprop = [self, an, n]() {
            an->ensure_grad();
            const T g = self->grad[0];
            for (int64_t i = 0; i < n; ++i) an->grad[i] += g;
        };
    }
    return out;
}

// x[m x n] + b[n], broadcast over rows. Used for bias terms.
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& b) {
    if (x.ndim() != 2 || b.ndim() != 1 || x.dim(1) != b.dim(0))
        throw std::invalid_argument("add_rowvec: shapes " + x.shape_str() + " vs " + b.shape_str());
    const int64_t m = x.dim(0), n = x.dim(1);
    Tensor<T> out;
    out.shape = x.shape;
    out.data = std::make_shared<std::vector<T>>(static_cast<size_t>(m * n));
    const T* px = x.ptr();
    const T* pb = b.ptr();
    T* po = out.data->data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) po[i * n + j] = px[i * n + j] + pb[j];

    if (auto node = detail::attach_node(out, {&x, &b})) {
        auto xn = x.node;
        auto bn = b.node;
        Node<T>* self = node.get();
        node->backprop = [self, xn, bn, m, n]() {
            const auto& g = self->grad;
            if (xn) {
                xn->ensure_grad();
                for (int64_t i = 0; i < m * n; ++i) xn->grad[i] += g[i];
            }
            if (bn) {
                bn->ensure_grad();
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) bn->grad[j] += g[i * n + j];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matmul.
// ---------------------------------------------------------------------------

namespace detail {

// C[m x n] (+)= A[m x k] * B[k x n]; row-major buffers.
template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n, bool accumulate) {
#ifdef ATOMTOK_HAVE_EIGEN
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> a(A, m, k), b(B, k, n);
    Eigen::Map<Mat> c(C, m, n);
    if (accumulate)
        c.noalias() += a * b;
    else
        c.noalias() = a * b;
#else
    if (!accumulate) std::fill(C, C + m * n, T(0));
    for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
            const T a = A[i * k + p];
            if (a == T(0)) continue;
            const T* brow = B + p * n;
            T* crow = C + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
#endif
}

// C[m x n] += A[m x k] * B^T where B is [n x k].
template <typename T>
void gemm_nt(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n) {
#ifdef ATOMTOK_HAVE_EIGEN
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> a(A, m, k), b(B, n, k);
    Eigen::Map<Mat> c(C, m, n);
    c.noalias() += a * b.transpose();
#else
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            T acc = 0;
            for (int64_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
            C[i * n + j] += acc;
        }
#endif
}

// C[k x n] += A^T * B where A is [m x k], B is [m x n].
template <typename T>
void gemm_tn(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n) {
#ifdef ATOMTOK_HAVE_EIGEN
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> a(A, m, k), b(B, m, n);
    Eigen::Map<Mat> c(C, k, n);
    c.noalias() += a.transpose() * b;
#else
    for (int64_t p = 0; p < m; ++p)
        for (int64_t i = 0; i < k; ++i) {
            const T a = A[p * k + i];
            if (a == T(0)) continue;
            for (int64_t j = 0; j < n; ++j) C[i * n + j] += a * B[p * n + j];
        }
#endif
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: dimension mismatch " + a.shape_str() + " vs " + b.shape_str());
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out;
    out.shape = {m, n};
    out.data = std::make_shared<std::vector<T>>(static_cast<size_t>(m * n));
    detail::gemm_nn(a.ptr(), b.ptr(), out.data->data(), m, k, n, false);

    if (auto node = detail::attach_node(out, {&a, &b})) {
        auto an = a.node;
        auto bn = b.node;
        auto adata = a.data;
        auto bdata = b.data;
        Node<T>* self = node.get();
        node->backprop = [self, an, bn, adata, bdata, m, k, n]() {
            const T* g = self->grad.data();
            if (an) {
                an->ensure_grad();
                detail::gemm_nt(g, bdata->data(), an->grad.data(), m, n, k);
            }
            if (bn) {
                bn->ensure_grad();
                detail::gemm_tn(adata->data(), g, bn->grad.data(), m, k, n);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Depthwise 1D convolution over [seq x ch] with one kernel column per
// channel. Output length equals input length under both padding modes:
// causal left-pads w-1 zeros, same splits the pad (left = (w-1)/2).
// ---------------------------------------------------------------------------

enum class ConvPad { causal, same };

template <typename T>
Tensor<T> conv1d_depthwise(const Tensor<T>& x, const Tensor<T>& kernel, ConvPad pad) {
    if (x.ndim() != 2 || kernel.ndim() != 2 || kernel.dim(1) != x.dim(1))
        throw std::invalid_argument("conv1d: shapes " + x.shape_str() + " vs kernel " + kernel.shape_str());
    const int64_t seq = x.dim(0), ch = x.dim(1), w = kernel.dim(0);
    if (w < 1 || w > seq)
        throw std::invalid_argument("conv1d: kernel width " + std::to_string(w) +
                                    " invalid for sequence length " + std::to_string(seq));
    const int64_t off = (pad == ConvPad::causal) ? w - 1 : (w - 1) / 2;

    Tensor<T> out;
    out.shape = x.shape;
    out.data = std::make_shared<std::vector<T>>(static_cast<size_t>(seq * ch), T(0));
    const T* px = x.ptr();
    const T* pk = kernel.ptr();
    T* po = out.data->data();
    for (int64_t t = 0; t < seq; ++t) {
        for (int64_t j = 0; j < w; ++j) {
            const int64_t s = t - off + j;
            if (s < 0 || s >= seq) continue;
            const T* xrow = px + s * ch;
            const T* krow = pk + j * ch;
            T* orow = po + t * ch;
            for (int64_t c = 0; c < ch; ++c) orow[c] += krow[c] * xrow[c];
        }
    }

    if (auto node = detail::attach_node(out, {&x, &kernel})) {
        auto xn = x.node;
        auto kn = kernel.node;
        auto xdata = x.data;
        auto kdata = kernel.data;
        Node<T>* self = node.get();
        node->backprop = [self, xn, kn, xdata, kdata, seq, ch, w, off]() {
            const T* g = self->grad.data();
            if (xn) {
                xn->ensure_grad();
                T* gx = xn->grad.data();
                const T* pk = kdata->data();
                for (int64_t t = 0; t < seq; ++t)
                    for (int64_t j = 0; j < w; ++j) {
                        const int64_t s = t - off + j;
                        if (s < 0 || s >= seq) continue;
                        const T* grow = g + t * ch;
                        const T* krow = pk + j * ch;
                        T* xrow = gx + s * ch;
                        for (int64_t c = 0; c < ch; ++c) xrow[c] += krow[c] * grow[c];
                    }
            }
            if (kn) {
                kn->ensure_grad();
                T* gk = kn->grad.data();
                const T* px = xdata->data();
                for (int64_t t = 0; t < seq; ++t)
                    for (int64_t j = 0; j < w; ++j) {
                        const int64_t s = t - off + j;
                        if (s < 0 || s >= seq) continue;
                        const T* grow = g + t * ch;
                        const T* xrow = px + s * ch;
                        T* krow = gk + j * ch;
                        for (int64_t c = 0; c < ch; ++c) krow[c] += xrow[c] * grow[c];
                    }
            }
        };
    }
    return out;
}

// Strided depthwise convolution used as the pooling half of token
// compression: width == stride == k, right-padded with zeros so every input
// position lands in exactly one window. Output length is ceil(seq / k).
template <typename T>
Tensor<T> pool_conv1d(const Tensor<T>& x, const Tensor<T>& kernel) {
    if (x.ndim() != 2 || kernel.ndim() != 2 || kernel.dim(1) != x.dim(1))
        throw std::invalid_argument("pool_conv1d: shapes " + x.shape_str() + " vs " + kernel.shape_str());
    const int64_t seq = x.dim(0), ch = x.dim(1), k = kernel.dim(0);
    const int64_t out_len = (seq + k - 1) / k;

    Tensor<T> out;
    out.shape = {out_len, ch};
    out.data = std::make_shared<std::vector<T>>(static_cast<size_t>(out_len * ch), T(0));
    const T* px = x.ptr();
    const T* pk = kernel.ptr();
    T* po = out.data->data();
    for (int64_t t = 0; t < out_len; ++t)
        for (int64_t j = 0; j < k; ++j) {
            const int64_t s = t * k + j;
            if (s >= seq) break;
            for (int64_t c = 0; c < ch; ++c) po[t * ch + c] += pk[j * ch + c] * px[s * ch + c];
        }

    if (auto node = detail::attach_node(out, {&x, &kernel})) {
        auto xn = x.node;
        auto kn = kernel.node;
        auto xdata = x.data;
        auto kdata = kernel.data;
        Node<T>* self = node.get();
        node->backprop = [self, xn, kn, xdata, kdata, seq, ch, k, out_len]() {
            const T* g = self->grad.data();
            if (xn) {
                xn->ensure_grad();
                for (int64_t t = 0; t < out_len; ++t)
                    for (int64_t j = 0; j < k; ++j) {
                        const int64_t s = t * k + j;
                        if (s >= seq) break;
                        for (int64_t c = 0; c < ch; ++c)
                            xn->grad[s * ch + c] += (*kdata)[j * ch + c] * g[t * ch + c];
                    }
            }
            if (kn) {
                kn->ensure_grad();
                for (int64_t t = 0; t < out_len; ++t)
                    for (int64_t j = 0; j < k; ++j) {
                        const int64_t s = t * k + j;
                        if (s >= seq) break;
                        for (int64_t c = 0; c < ch; ++c)
                            kn->grad[j * ch + c] += (*xdata)[s * ch + c] * g[t * ch + c];
                    }
            }
        };
    }
    return out;
}

// Rows [begin, end) of a rank-2 tensor; backward scatters into the slice.
template <typename T>
Tensor<T> row_slice(const Tensor<T>& x, int64_t begin, int64_t end) {
    if (x.ndim() != 2 || begin < 0 || end > x.dim(0) || begin >= end)
        throw std::invalid_argument("row_slice: bad range for " + x.shape_str());
    const int64_t n = x.dim(1), rows = end - begin;
    Tensor<T> out;
    out.shape = {rows, n};
    out.data = std::make_shared<std::vector<T>>(x.data->begin() + begin * n, x.data->begin() + end * n);
    if (auto node = detail::attach_node(out, {&x})) {
        auto xn = x.node;
        Node<T>* self = node.get();
        node->backprop = [self, xn, begin, rows, n]() {
            xn->ensure_grad();
            for (int64_t i = 0; i < rows * n; ++i) xn->grad[begin * n + i] += self->grad[i];
        };
    }
    return out;
}

// Nearest-neighbour upsampling by factor k, truncated to out_len rows.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int64_t k, int64_t out_len) {
    if (x.ndim() != 2) throw std::invalid_argument("upsample_nearest: rank-2 input required");
    const int64_t n = x.dim(0), ch = x.dim(1);
    if (out_len > n * k) throw std::invalid_argument("upsample_nearest: out_len exceeds n*k");
    Tensor<T> out;
    out.shape = {out_len, ch};
    out.data = std::make_shared<std::vector<T>>(static_cast<size_t>(out_len * ch));
    const T* px = x.ptr();
    T* po = out.data->data();
    for (int64_t t = 0; t < out_len; ++t) {
        const T* xrow = px + (t / k) * ch;
        for (int64_t c = 0; c < ch; ++c) po[t * ch + c] = xrow[c];
    }
    if (auto node = detail::attach_node(out, {&x})) {
        auto xn = x.node;
        Node<T>* self = node.get();
        node->backprop = [self, xn, k, out_len, ch]() {
            xn->ensure_grad();
            const T* g = self->grad.data();
            for (int64_t t = 0; t < out_len; ++t)
                for (int64_t c = 0; c < ch; ++c) xn->grad[(t / k) * ch + c] += g[t * ch + c];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Layer norm over the channel axis of [seq x ch].
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    if (x.ndim() != 2 || gamma.ndim() != 1 || beta.ndim() != 1 || gamma.dim(0) != x.dim(1) ||
        beta.dim(0) != x.dim(1))
        throw std::invalid_argument("layernorm: shapes " + x.shape_str() + ", " + gamma.shape_str() + ", " +
                                    beta.shape_str());
    if (!(eps > T(0))) throw std::invalid_argument("layernorm: eps must be positive");
    const int64_t m = x.dim(0), n = x.dim(1);

    Tensor<T> out;
    out.shape = x.shape;
    out.data = std::make_shared<std::vector<T>>(static_cast<size_t>(m * n));
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(m * n));
    auto inv_sigma = std::make_shared<std::vector<T>>(static_cast<size_t>(m));

    const T* px = x.ptr();
    const T* pg = gamma.ptr();
    const T* pb = beta.ptr();
    T* po = out.data->data();
    for (int64_t i = 0; i < m; ++i) {
        const T* row = px + i * n;
        T mean = 0;
        for (int64_t j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<T>(n);
        T var = 0;
        for (int64_t j = 0; j < n; ++j) {
            const T d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<T>(n);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_sigma)[i] = is;
        for (int64_t j = 0; j < n; ++j) {
            const T h = (row[j] - mean) * is;
            (*xhat)[i * n + j] = h;
            po[i * n + j] = h * pg[j] + pb[j];
        }
    }

    if (auto node = detail::attach_node(out, {&x, &gamma, &beta})) {
        auto xn = x.node;
        auto gn = gamma.node;
        auto bn = beta.node;
        auto gdata = gamma.data;
        Node<T>* self = node.get();
        node->backprop = [self, xn, gn, bn, gdata, xhat, inv_sigma, m, n]() {
            const T* g = self->grad.data();
            const T* h = xhat->data();
            if (gn) gn->ensure_grad();
            if (bn) bn->ensure_grad();
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    if (gn) gn->grad[j] += g[i * n + j] * h[i * n + j];
                    if (bn) bn->grad[j] += g[i * n + j];
                }
            }
            if (xn) {
                xn->ensure_grad();
                const T* pg = gdata->data();
                for (int64_t i = 0; i < m; ++i) {
                    T sum_gg = 0, sum_ggh = 0;
                    for (int64_t j = 0; j < n; ++j) {
                        const T gg = g[i * n + j] * pg[j];
                        sum_gg += gg;
                        sum_ggh += gg * h[i * n + j];
                    }
                    const T inv_n = T(1) / static_cast<T>(n);
                    for (int64_t j = 0; j < n; ++j) {
                        const T gg = g[i * n + j] * pg[j];
                        xn->grad[i * n + j] +=
                            (gg - inv_n * sum_gg - h[i * n + j] * inv_n * sum_ggh) * (*inv_sigma)[i];
                    }
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sequence flip along axis 0 of [seq x ch]. Involution; backward is a flip.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> flip_sequence(const Tensor<T>& x) {
    if (x.ndim() != 2) throw std::invalid_argument("flip_sequence: rank-2 input required");
    const int64_t m = x.dim(0), n = x.dim(1);
    Tensor<T> out;
    out.shape = x.shape;
    out.data = std::make_shared<std::vector<T>>(static_cast<size_t>(m * n));
    const T* px = x.ptr();
    T* po = out.data->data();
    for (int64_t i = 0; i < m; ++i) std::copy(px + i * n, px + (i + 1) * n, po + (m - 1 - i) * n);

    if (auto node = detail::attach_node(out, {&x})) {
        auto xn = x.node;
        Node<T>* self = node.get();
        node->backprop = [self, xn, m, n]() {
            xn->ensure_grad();
            const T* g = self->grad.data();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) xn->grad[(m - 1 - i) * n + j] += g[i * n + j];
        };
    }
    return out;
}

// Straight-through rounding: forward rounds to the nearest integer
// (ties-to-even via nearbyint under the default rounding mode), backward
// passes the gradient through unchanged.
template <typename T>
Tensor<T> st_round(const Tensor<T>& x) {
    const int64_t n = x.numel();
    Tensor<T> out;
    out.shape = x.shape;
    out.data = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
    const T* px = x.ptr();
    T* po = out.data->data();
    for (int64_t i = 0; i < n; ++i) po[i] = std::nearbyint(px[i]);

    if (auto node = detail::attach_node(out, {&x})) {
        auto xn = x.node;
        Node<T>* self = node.get();
        node->backprop = [self, xn, n]() {
            xn->ensure_grad();
            for (int64_t i = 0; i < n; ++i) xn->grad[i] += self->grad[i];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backward pass: reverse-topological accumulation from a scalar loss.
// ---------------------------------------------------------------------------

template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + loss.shape_str());
    if (!loss.node) return;  // constant loss: nothing reachable

    // Iterative post-order DFS.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.emplace_back(loss.node.get(), 0);
    visited.insert(loss.node.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node->ensure_grad();
    loss.node->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        n->ensure_grad();  // nodes with no incoming gradient contribute zeros
        if (n->backprop) n->backprop();
    }
}

// ---------------------------------------------------------------------------
// Finite-difference oracle. Central differences per coordinate against the
// gradients produced by backward(). Returns the worst relative error, where
// the per-coordinate denominator is floored at 1e-6 of the largest gradient
// magnitude so that negligible coordinates do not dominate the report.
// Intended for the 64-bit instantiation.
// ---------------------------------------------------------------------------

template <typename T>
T finite_difference_check(const std::function<Tensor<T>()>& loss_fn, std::vector<Tensor<T>> params,
                          T eps = T(1e-5)) {
    for (auto& p : params) p.zero_grad();
    Tensor<T> loss = loss_fn();
    backward(loss);

    std::vector<std::vector<T>> analytic;
    T max_grad = 0;
    for (auto& p : params) {
        p.node->ensure_grad();
        analytic.push_back(p.grad());
        for (T g : analytic.back()) max_grad = std::max(max_grad, std::abs(g));
    }
    const T floor = std::max(T(1e-6) * max_grad, T(1e-12));

    T worst = 0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        for (int64_t i = 0; i < p.numel(); ++i) {
            const T saved = p.at(i);
            const T step = eps * (T(1) + std::abs(saved));
            p.at(i) = saved + step;
            const T fp = [&] { NoGradGuard g; return loss_fn().value(); }();
            p.at(i) = saved - step;
            const T fmn = [&] { NoGradGuard g; return loss_fn().value(); }();
            p.at(i) = saved;
            if (!std::isfinite(fp) || !std::isfinite(fmn))
                throw std::runtime_error("finite_difference_check: non-finite value at parameter " +
                                         std::to_string(pi) + " coordinate " + std::to_string(i));
            const T fd = (fp - fmn) / (2 * step);
            const T ad = analytic[pi][i];
            const T denom = std::max({std::abs(fd), std::abs(ad), floor});
            const T rel = (fd == ad) ? T(0) : std::abs(fd - ad) / denom;
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace atomtok
