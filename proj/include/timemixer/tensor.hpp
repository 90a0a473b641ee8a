#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#ifdef TIMEMIXER_USE_BLAS
#include <cblas.h>
#ifdef OPENBLAS_VERSION
extern "C" void openblas_set_num_threads(int);
#endif
#endif

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "timemixer/rng.hpp"

namespace timemixer {

using Shape = std::vector<std::int64_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    // `track` marks participation in gradient flow; `leaf` marks a tensor the
    // user created with requires_grad, whose grad buffer persists and
    // accumulates across backward passes. Interior node grads are scratch for
    // a single backward pass.
    bool track = false;
    bool leaf = false;
    std::vector<double> grad;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::vector<double>& grad_buf() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

using NodePtr = std::shared_ptr<TensorNode>;

inline void blas_init() {
#if defined(TIMEMIXER_USE_BLAS) && defined(OPENBLAS_VERSION)
    // single-threaded BLAS keeps summation order fixed run to run
    static const bool once = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)once;
#endif
}

/// Training churns through megabyte-scale activation and gradient buffers
/// every step; with glibc defaults those exceed the mmap threshold, so each
/// step pays mmap/munmap plus kernel page-zeroing. Keeping allocations on
/// the retained heap roughly halves the per-step wall time.
inline void allocator_tuning() {
#ifdef __GLIBC__
    static const bool once = [] {
        mallopt(M_MMAP_MAX, 0);
        mallopt(M_TRIM_THRESHOLD, -1);
        return true;
    }();
    (void)once;
#endif
}

/// Row-major C = alpha * op(A) * op(B) + beta * C, with op in {identity, transpose}.
inline void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
                 double alpha, const double* a, const double* b, double beta, double* c) {
#ifdef TIMEMIXER_USE_BLAS
    blas_init();
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), alpha, a, static_cast<int>(trans_a ? m : k), b,
                static_cast<int>(trans_b ? k : n), beta, c, static_cast<int>(n));
#else
    if (beta == 0.0) {
        std::fill(c, c + m * n, 0.0);
    } else if (beta != 1.0) {
        for (std::int64_t i = 0; i < m * n; ++i) c[i] *= beta;
    }
    auto at = [&](std::int64_t i, std::int64_t p) { return trans_a ? a[p * m + i] : a[i * k + p]; };
    auto bt = [&](std::int64_t p, std::int64_t j) { return trans_b ? b[j * k + p] : b[p * n + j]; };
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = alpha * at(i, p);
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * bt(p, j);
        }
    }
#endif
}

}  // namespace detail

class Tape;

/// Dense n-dimensional array of 64-bit floats with optional participation in
/// reverse-mode differentiation. Tensors are value-semantic handles onto a
/// shared node; data is immutable after creation except for the grad buffer
/// and explicit parameter updates through mutable_data().
class Tensor {
public:
    Tensor() = default;

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        if (n != static_cast<std::int64_t>(data.size()))
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        auto node = std::make_shared<detail::TensorNode>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        node->track = requires_grad;
        node->leaf = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return from_data(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                         requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return from_data(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value),
                         requires_grad);
    }

    static Tensor scalar(double value) { return from_data({1}, {value}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
    std::int64_t numel() const { return node_->numel(); }

    /// Dimension size, with negative indices counting from the back.
    std::int64_t dim(std::int64_t i) const {
        const auto r = rank();
        if (i < 0) i += r;
        if (i < 0 || i >= r)
            throw ShapeError("axis " + std::to_string(i) + " out of range for " +
                             shape_str(shape()));
        return node_->shape[static_cast<std::size_t>(i)];
    }

    const std::vector<double>& data() const { return node_->data; }

    /// Direct write access, used by the optimizer for in-place parameter
    /// updates between tape recordings. Never call while a tape referencing
    /// this tensor is still pending a backward pass.
    std::vector<double>& mutable_data() { return node_->data; }

    bool requires_grad() const { return node_ && node_->track; }
    bool is_leaf() const { return node_ && node_->leaf; }
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (!has_grad()) throw std::logic_error("tensor has no gradient");
        return node_->grad;
    }
    void zero_grad() {
        if (node_) node_->grad.clear();
    }

    double item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->data[0];
    }

    bool all_finite() const {
        for (double v : node_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    detail::NodePtr node() const { return node_; }

private:
    explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
    friend class Tape;
    friend Tensor make_tracked(Shape, std::vector<double>, bool);

    detail::NodePtr node_;
};

inline void check_finite(const Tensor& t, const std::string& what) {
    if (!t.all_finite()) throw NumericError("non-finite values in " + what);
}

/// Recording of differentiable operations in execution order. Every entry
/// captures the nodes it needs; backward() replays entries exactly once in
/// reverse record order, accumulating into leaf gradients and clearing the
/// interior scratch when done, so a replayed forward+backward reproduces the
/// same gradients and repeated backward calls accumulate.
class Tape {
public:
    struct Entry {
        std::vector<detail::NodePtr> outputs;
        std::function<void()> backprop;
    };

    Tape() { detail::allocator_tuning(); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape() {
        if (active_ == this) active_ = nullptr;
    }

    /// RAII activation; ops record onto the innermost active tape.
    class Scope {
    public:
        explicit Scope(Tape& t) : prev_(active_) { active_ = &t; }
        ~Scope() { active_ = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    static Tape* active() { return active_; }

    void record(std::vector<detail::NodePtr> outputs, std::function<void()> backprop) {
        entries_.push_back({std::move(outputs), std::move(backprop)});
    }

    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    /// Reverse sweep from a scalar loss recorded on this tape.
    void backward(const Tensor& loss) {
        if (!loss.defined() || loss.numel() != 1)
            throw ShapeError("backward requires a scalar loss");
        auto ln = loss.node();
        if (!ln->track) throw std::logic_error("backward on a tensor outside the recorded graph");
        ln->grad_buf()[0] += 1.0;
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            bool any = false;
            for (const auto& out : it->outputs)
                if (!out->grad.empty()) {
                    any = true;
                    break;
                }
            if (any) it->backprop();
        }
        // interior grads are scratch; leaves keep their accumulation
        for (auto& e : entries_)
            for (auto& out : e.outputs)
                if (!out->leaf) out->grad.clear();
    }

private:
    static thread_local Tape* active_;
    std::vector<Entry> entries_;
};

inline thread_local Tape* Tape::active_ = nullptr;

/// Backward through the currently active tape (the usual entry point).
inline void backward(const Tensor& loss) {
    Tape* t = Tape::active();
    if (t == nullptr) throw std::logic_error("backward called with no active tape");
    t->backward(loss);
}

namespace detail {

inline bool should_track(std::initializer_list<const Tensor*> inputs) {
    if (Tape::active() == nullptr) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

inline Tensor make_output(Shape shape, std::vector<double> data, bool track) {
    Tensor out = Tensor::from_data(std::move(shape), std::move(data), false);
    out.node()->track = track;
    out.node()->leaf = false;
    return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    const bool track = detail::should_track({&a, &b});
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    Tensor y = detail::make_output(a.shape(), std::move(out), track);
    if (track) {
        auto an = a.node(), bn = b.node(), yn = y.node();
        Tape::active()->record({yn}, [an, bn, yn] {
            const auto& g = yn->grad;
            if (an->track) {
                auto& ga = an->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bn->track) {
                auto& gb = bn->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return y;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    const bool track = detail::should_track({&a, &b});
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    Tensor y = detail::make_output(a.shape(), std::move(out), track);
    if (track) {
        auto an = a.node(), bn = b.node(), yn = y.node();
        Tape::active()->record({yn}, [an, bn, yn] {
            const auto& g = yn->grad;
            if (an->track) {
                auto& ga = an->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bn->track) {
                auto& gb = bn->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return y;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    const bool track = detail::should_track({&a, &b});
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    Tensor y = detail::make_output(a.shape(), std::move(out), track);
    if (track) {
        auto an = a.node(), bn = b.node(), yn = y.node();
        Tape::active()->record({yn}, [an, bn, yn] {
            const auto& g = yn->grad;
            if (an->track) {
                auto& ga = an->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->data[i];
            }
            if (bn->track) {
                auto& gb = bn->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->data[i];
            }
        });
    }
    return y;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "div");
    const bool track = detail::should_track({&a, &b});
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
    Tensor y = detail::make_output(a.shape(), std::move(out), track);
    if (track) {
        auto an = a.node(), bn = b.node(), yn = y.node();
        Tape::active()->record({yn}, [an, bn, yn] {
            const auto& g = yn->grad;
            if (an->track) {
                auto& ga = an->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bn->data[i];
            }
            if (bn->track) {
                auto& gb = bn->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i)
                    gb[i] -= g[i] * an->data[i] / (bn->data[i] * bn->data[i]);
            }
        });
    }
    return y;
}

inline Tensor mul_scalar(const Tensor& a, double c) {
    const bool track = detail::should_track({&a});
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    Tensor y = detail::make_output(a.shape(), std::move(out), track);
    if (track) {
        auto an = a.node(), yn = y.node();
        Tape::active()->record({yn}, [an, yn, c] {
            const auto& g = yn->grad;
            auto& ga = an->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
    }
    return y;
}

inline Tensor div_scalar(const Tensor& a, double c) {
    const bool track = detail::should_track({&a});
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / c;
    Tensor y = detail::make_output(a.shape(), std::move(out), track);
    if (track) {
        auto an = a.node(), yn = y.node();
        Tape::active()->record({yn}, [an, yn, c] {
            const auto& g = yn->grad;
            auto& ga = an->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / c;
        });
    }
    return y;
}

inline Tensor add_scalar(const Tensor& a, double c) {
    const bool track = detail::should_track({&a});
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
    Tensor y = detail::make_output(a.shape(), std::move(out), track);
    if (track) {
        auto an = a.node(), yn = y.node();
        Tape::active()->record({yn}, [an, yn] {
            const auto& g = yn->grad;
            auto& ga = an->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return y;
}

inline Tensor abs(const Tensor& a) {
    const bool track = detail::should_track({&a});
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a.data()[i]);
    Tensor y = detail::make_output(a.shape(), std::move(out), track);
    if (track) {
        auto an = a.node(), yn = y.node();
        // subgradient 0 at the kink
        Tape::active()->record({yn}, [an, yn] {
            const auto& g = yn->grad;
            auto& ga = an->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double x = an->data[i];
                ga[i] += g[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
            }
        });
    }
    return y;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }

// ---------------------------------------------------------------------------
// GELU (exact, erf-based form; applied consistently forward and backward)
// ---------------------------------------------------------------------------

inline Tensor gelu(const Tensor& a) {
    const bool track = detail::should_track({&a});
    std::vector<double> out(a.data().size());
    constexpr double inv_sqrt2 = 0.7071067811865475244008443621048490;
    // the forward keeps the erf-based cdf around for the backward pass, so
    // the reverse sweep only pays for the exp
    std::shared_ptr<std::vector<double>> cdf;
    if (track) cdf = std::make_shared<std::vector<double>>(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.data()[i];
        const double c = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        if (track) (*cdf)[i] = c;
        out[i] = x * c;
    }
    Tensor y = detail::make_output(a.shape(), std::move(out), track);
    if (track) {
        auto an = a.node(), yn = y.node();
        Tape::active()->record({yn}, [an, yn, cdf] {
            const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
            const auto& g = yn->grad;
            auto& ga = an->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double x = an->data[i];
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                ga[i] += g[i] * ((*cdf)[i] + x * pdf);
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Broadcast add: bias shape must be a suffix of the input shape
// ---------------------------------------------------------------------------

inline Tensor broadcast_add(const Tensor& x, const Tensor& bias) {
    const auto& xs = x.shape();
    const auto& bs = bias.shape();
    if (bs.size() > xs.size() ||
        !std::equal(bs.rbegin(), bs.rend(), xs.rbegin()))
        throw ShapeError("broadcast_add: bias shape " + shape_str(bs) +
                         " is not a suffix of input shape " + shape_str(xs));
    const std::int64_t inner = shape_numel(bs);
    const std::int64_t chunks = x.numel() / inner;
    const bool track = detail::should_track({&x, &bias});
    std::vector<double> out(x.data().size());
    for (std::int64_t c = 0; c < chunks; ++c) {
        const double* px = x.data().data() + c * inner;
        double* po = out.data() + c * inner;
        for (std::int64_t j = 0; j < inner; ++j) po[j] = px[j] + bias.data()[j];
    }
    Tensor y = detail::make_output(xs, std::move(out), track);
    if (track) {
        auto xn = x.node(), bn = bias.node(), yn = y.node();
        Tape::active()->record({yn}, [xn, bn, yn, inner, chunks] {
            const auto& g = yn->grad;
            if (xn->track) {
                auto& gx = xn->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (bn->track) {
                auto& gb = bn->grad_buf();
                for (std::int64_t c = 0; c < chunks; ++c)
                    for (std::int64_t j = 0; j < inner; ++j) gb[j] += g[c * inner + j];
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Matrix product over the last two axes, batched over leading axes.
// a: [..., n, k] x b: [k, m] -> [..., n, m]
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() != 2)
        throw ShapeError("matmul: need a rank>=2 lhs and rank-2 rhs, got " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::int64_t k = a.dim(-1);
    if (k != b.dim(0))
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::int64_t m = b.dim(1);
    const std::int64_t rows = a.numel() / k;  // leading axes and n collapsed
    Shape out_shape = a.shape();
    out_shape.back() = m;
    const bool track = detail::should_track({&a, &b});
    std::vector<double> out(static_cast<std::size_t>(rows * m));
    detail::gemm(false, false, rows, m, k, 1.0, a.data().data(), b.data().data(), 0.0, out.data());
    Tensor y = detail::make_output(std::move(out_shape), std::move(out), track);
    if (track) {
        auto an = a.node(), bn = b.node(), yn = y.node();
        Tape::active()->record({yn}, [an, bn, yn, rows, m, k] {
            const double* g = yn->grad.data();
            if (an->track) {
                // dA = dY * B^T
                detail::gemm(false, true, rows, k, m, 1.0, g, bn->data.data(), 1.0,
                             an->grad_buf().data());
            }
            if (bn->track) {
                // dB = A^T * dY, summed over all collapsed rows
                detail::gemm(true, false, k, m, rows, 1.0, an->data.data(), g, 1.0,
                             bn->grad_buf().data());
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
    const bool track = detail::should_track({&a});
    Tensor y = detail::make_output(std::move(new_shape), a.data(), track);
    if (track) {
        auto an = a.node(), yn = y.node();
        Tape::active()->record({yn}, [an, yn] {
            const auto& g = yn->grad;
            auto& ga = an->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return y;
}

namespace detail {

// outer/mid/inner decomposition of an axis for stride arithmetic
struct AxisSplit {
    std::int64_t outer = 1, axis = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::int64_t axis) {
    AxisSplit r;
    const auto rank = static_cast<std::int64_t>(s.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank)
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    for (std::int64_t i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
    r.axis = s[static_cast<std::size_t>(axis)];
    for (std::int64_t i = axis + 1; i < rank; ++i) r.inner *= s[static_cast<std::size_t>(i)];
    return r;
}

}  // namespace detail

/// Swap two axes (copying). The last-two-axes case is the workhorse for
/// temporal linear layers.
inline Tensor transpose(const Tensor& a, std::int64_t ax1, std::int64_t ax2) {
    const auto r = a.rank();
    if (ax1 < 0) ax1 += r;
    if (ax2 < 0) ax2 += r;
    if (ax1 < 0 || ax1 >= r || ax2 < 0 || ax2 >= r)
        throw ShapeError("transpose: axis out of range for " + shape_str(a.shape()));
    if (ax1 == ax2) return a;
    if (ax1 > ax2) std::swap(ax1, ax2);
    Shape out_shape = a.shape();
    std::swap(out_shape[static_cast<std::size_t>(ax1)], out_shape[static_cast<std::size_t>(ax2)]);

    const auto& s = a.shape();
    std::int64_t outer = 1, mid = 1, inner = 1;
    for (std::int64_t i = 0; i < ax1; ++i) outer *= s[static_cast<std::size_t>(i)];
    for (std::int64_t i = ax1 + 1; i < ax2; ++i) mid *= s[static_cast<std::size_t>(i)];
    for (std::int64_t i = ax2 + 1; i < r; ++i) inner *= s[static_cast<std::size_t>(i)];
    const std::int64_t d1 = s[static_cast<std::size_t>(ax1)];
    const std::int64_t d2 = s[static_cast<std::size_t>(ax2)];

    auto permute = [=](const double* src, double* dst) {
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i1 = 0; i1 < d1; ++i1)
                for (std::int64_t mm = 0; mm < mid; ++mm)
                    for (std::int64_t i2 = 0; i2 < d2; ++i2) {
                        const double* sp =
                            src + (((o * d1 + i1) * mid + mm) * d2 + i2) * inner;
                        double* dp = dst + (((o * d2 + i2) * mid + mm) * d1 + i1) * inner;
                        for (std::int64_t in = 0; in < inner; ++in) dp[in] = sp[in];
                    }
    };

    const bool track = detail::should_track({&a});
    std::vector<double> out(a.data().size());
    permute(a.data().data(), out.data());
    Tensor y = detail::make_output(std::move(out_shape), std::move(out), track);
    if (track) {
        auto an = a.node(), yn = y.node();
        auto unpermute = [=](const double* src, double* dst) {
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i1 = 0; i1 < d1; ++i1)
                    for (std::int64_t mm = 0; mm < mid; ++mm)
                        for (std::int64_t i2 = 0; i2 < d2; ++i2) {
                            const double* sp =
                                src + (((o * d2 + i2) * mid + mm) * d1 + i1) * inner;
                            double* dp =
                                dst + (((o * d1 + i1) * mid + mm) * d2 + i2) * inner;
                            for (std::int64_t in = 0; in < inner; ++in) dp[in] += sp[in];
                        }
        };
        Tape::active()->record({yn}, [an, yn, unpermute] {
            unpermute(yn->grad.data(), an->grad_buf().data());
        });
    }
    return y;
}

inline Tensor slice(const Tensor& a, std::int64_t axis, std::int64_t start, std::int64_t len) {
    const auto sp = detail::split_axis(a.shape(), axis);
    if (axis < 0) axis += a.rank();
    if (start < 0 || len <= 0 || start + len > sp.axis)
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") invalid for axis length " +
                         std::to_string(sp.axis));
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(axis)] = len;
    const bool track = detail::should_track({&a});
    std::vector<double> out(static_cast<std::size_t>(sp.outer * len * sp.inner));
    for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t t = 0; t < len; ++t) {
            const double* src = a.data().data() + (o * sp.axis + start + t) * sp.inner;
            double* dst = out.data() + (o * len + t) * sp.inner;
            std::copy(src, src + sp.inner, dst);
        }
    Tensor y = detail::make_output(std::move(out_shape), std::move(out), track);
    if (track) {
        auto an = a.node(), yn = y.node();
        Tape::active()->record({yn}, [an, yn, sp, start, len] {
            auto& ga = an->grad_buf();
            const auto& g = yn->grad;
            for (std::int64_t o = 0; o < sp.outer; ++o)
                for (std::int64_t t = 0; t < len; ++t) {
                    const double* src = g.data() + (o * len + t) * sp.inner;
                    double* dst = ga.data() + (o * sp.axis + start + t) * sp.inner;
                    for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
                }
        });
    }
    return y;
}

inline Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const auto r = parts.front().rank();
    if (axis < 0) axis += r;
    std::int64_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != r) throw ShapeError("concat: rank mismatch");
        for (std::int64_t i = 0; i < r; ++i)
            if (i != axis && p.dim(i) != parts.front().dim(i))
                throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                 shape_str(parts.front().shape()));
        total += p.dim(axis);
    }
    Shape out_shape = parts.front().shape();
    out_shape[static_cast<std::size_t>(axis)] = total;
    const auto sp_out = detail::split_axis(out_shape, axis);
    bool track = false;
    if (Tape::active() != nullptr)
        for (const auto& p : parts)
            if (p.requires_grad()) track = true;
    std::vector<double> out(static_cast<std::size_t>(sp_out.outer * total * sp_out.inner));
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const std::int64_t len = p.dim(axis);
        for (std::int64_t o = 0; o < sp_out.outer; ++o)
            for (std::int64_t t = 0; t < len; ++t) {
                const double* src = p.data().data() + (o * len + t) * sp_out.inner;
                double* dst = out.data() + (o * total + offset + t) * sp_out.inner;
                std::copy(src, src + sp_out.inner, dst);
            }
        offset += len;
    }
    Tensor y = detail::make_output(std::move(out_shape), std::move(out), track);
    if (track) {
        std::vector<detail::NodePtr> in_nodes;
        std::vector<std::int64_t> lens;
        for (const auto& p : parts) {
            in_nodes.push_back(p.node());
            lens.push_back(p.dim(axis));
        }
        auto yn = y.node();
        Tape::active()->record({yn}, [in_nodes, lens, yn, sp_out, total] {
            const auto& g = yn->grad;
            std::int64_t off = 0;
            for (std::size_t pi = 0; pi < in_nodes.size(); ++pi) {
                const std::int64_t len = lens[pi];
                if (in_nodes[pi]->track) {
                    auto& gi = in_nodes[pi]->grad_buf();
                    for (std::int64_t o = 0; o < sp_out.outer; ++o)
                        for (std::int64_t t = 0; t < len; ++t) {
                            const double* src =
                                g.data() + (o * total + off + t) * sp_out.inner;
                            double* dst = gi.data() + (o * len + t) * sp_out.inner;
                            for (std::int64_t i = 0; i < sp_out.inner; ++i) dst[i] += src[i];
                        }
                }
                off += len;
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    const bool track = detail::should_track({&a});
    double s = 0.0;
    for (double v : a.data()) s += v;
    Tensor y = detail::make_output({1}, {s}, track);
    if (track) {
        auto an = a.node(), yn = y.node();
        Tape::active()->record({yn}, [an, yn] {
            const double g = yn->grad[0];
            auto& ga = an->grad_buf();
            for (auto& v : ga) v += g;
        });
    }
    return y;
}

inline Tensor mean(const Tensor& a) {
    const bool track = detail::should_track({&a});
    double s = 0.0;
    for (double v : a.data()) s += v;
    const double n = static_cast<double>(a.numel());
    Tensor y = detail::make_output({1}, {s / n}, track);
    if (track) {
        auto an = a.node(), yn = y.node();
        Tape::active()->record({yn}, [an, yn, n] {
            const double g = yn->grad[0] / n;
            auto& ga = an->grad_buf();
            for (auto& v : ga) v += g;
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Average pooling along one axis. Trailing elements that do not fill a
// complete window are dropped, so for window == stride the output length is
// exactly floor(T / stride).
// ---------------------------------------------------------------------------

inline Tensor avg_pool1d(const Tensor& a, std::int64_t axis, std::int64_t window,
                         std::int64_t stride) {
    if (window <= 0 || stride <= 0) throw ShapeError("avg_pool1d: window and stride must be >= 1");
    const auto sp = detail::split_axis(a.shape(), axis);
    if (window > sp.axis)
        throw ShapeError("avg_pool1d: window " + std::to_string(window) +
                         " exceeds axis length " + std::to_string(sp.axis));
    const std::int64_t out_len = (sp.axis - window) / stride + 1;
    if (axis < 0) axis += a.rank();
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(axis)] = out_len;
    const bool track = detail::should_track({&a});
    std::vector<double> out(static_cast<std::size_t>(sp.outer * out_len * sp.inner), 0.0);
    const double inv_w = 1.0 / static_cast<double>(window);
    for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t t = 0; t < out_len; ++t) {
            double* dst = out.data() + (o * out_len + t) * sp.inner;
            for (std::int64_t w = 0; w < window; ++w) {
                const double* src = a.data().data() + (o * sp.axis + t * stride + w) * sp.inner;
                for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
            }
            for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] *= inv_w;
        }
    Tensor y = detail::make_output(std::move(out_shape), std::move(out), track);
    if (track) {
        auto an = a.node(), yn = y.node();
        Tape::active()->record({yn}, [an, yn, sp, out_len, window, stride, inv_w] {
            auto& ga = an->grad_buf();
            const auto& g = yn->grad;
            for (std::int64_t o = 0; o < sp.outer; ++o)
                for (std::int64_t t = 0; t < out_len; ++t) {
                    const double* src = g.data() + (o * out_len + t) * sp.inner;
                    for (std::int64_t w = 0; w < window; ++w) {
                        double* dst =
                            ga.data() + (o * sp.axis + t * stride + w) * sp.inner;
                        for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i] * inv_w;
                    }
                }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Centered moving average along one axis with replicate padding of
// (kernel-1)/2 copies of the boundary elements; output length equals input
// length. The adjoint distributes each output gradient uniformly over its
// window, folding padded positions back onto the boundary elements.
// ---------------------------------------------------------------------------

inline Tensor moving_average(const Tensor& a, std::int64_t axis, std::int64_t kernel) {
    if (kernel <= 0 || kernel % 2 == 0)
        throw ShapeError("moving_average: kernel must be odd and positive, got " +
                         std::to_string(kernel));
    const auto sp = detail::split_axis(a.shape(), axis);
    const std::int64_t pad = (kernel - 1) / 2;
    const std::int64_t T = sp.axis;
    const std::int64_t inner = sp.inner;
    const bool track = detail::should_track({&a});
    const double inv_k = 1.0 / static_cast<double>(kernel);
    std::vector<double> out(a.data().size());
    // sliding window as prefix-sum differences, O(T) per series; replicate
    // padding shows up as weighted boundary terms
    {
        std::vector<double> prefix(static_cast<std::size_t>(T + 1));
        for (std::int64_t o = 0; o < sp.outer; ++o)
            for (std::int64_t i = 0; i < inner; ++i) {
                const double* x = a.data().data() + o * T * inner + i;
                double* dst = out.data() + o * T * inner + i;
                prefix[0] = 0.0;
                for (std::int64_t t = 0; t < T; ++t)
                    prefix[static_cast<std::size_t>(t + 1)] =
                        prefix[static_cast<std::size_t>(t)] + x[t * inner];
                const double first = x[0], last = x[(T - 1) * inner];
                for (std::int64_t t = 0; t < T; ++t) {
                    const std::int64_t lo = std::max<std::int64_t>(0, t - pad);
                    const std::int64_t hi = std::min<std::int64_t>(T - 1, t + pad);
                    const double below = static_cast<double>(std::max<std::int64_t>(0, pad - t));
                    const double above =
                        static_cast<double>(std::max<std::int64_t>(0, t + pad - (T - 1)));
                    dst[t * inner] = (below * first +
                                      (prefix[static_cast<std::size_t>(hi + 1)] -
                                       prefix[static_cast<std::size_t>(lo)]) +
                                      above * last) *
                                     inv_k;
                }
            }
    }
    Tensor y = detail::make_output(a.shape(), std::move(out), track);
    if (track) {
        auto an = a.node(), yn = y.node();
        Tape::active()->record({yn}, [an, yn, sp, T, inner, pad, inv_k] {
            auto& ga = an->grad_buf();
            const auto& g = yn->grad;
            // adjoint of the clamped window mean: a zero-padded window sum of
            // the output gradient, plus the replicate-padding mass folded onto
            // the first and last elements
            std::vector<double> gs(static_cast<std::size_t>(T + 1));
            std::vector<double> gw(static_cast<std::size_t>(T + 1));
            for (std::int64_t o = 0; o < sp.outer; ++o)
                for (std::int64_t i = 0; i < inner; ++i) {
                    const double* gy = g.data() + o * T * inner + i;
                    double* gx = ga.data() + o * T * inner + i;
                    gs[0] = gw[0] = 0.0;
                    for (std::int64_t t = 0; t < T; ++t) {
                        const double v = gy[t * inner];
                        gs[static_cast<std::size_t>(t + 1)] =
                            gs[static_cast<std::size_t>(t)] + v;
                        gw[static_cast<std::size_t>(t + 1)] =
                            gw[static_cast<std::size_t>(t)] + static_cast<double>(t) * v;
                    }
                    for (std::int64_t j = 0; j < T; ++j) {
                        const std::int64_t lo = std::max<std::int64_t>(0, j - pad);
                        const std::int64_t hi = std::min<std::int64_t>(T - 1, j + pad);
                        gx[j * inner] += inv_k * (gs[static_cast<std::size_t>(hi + 1)] -
                                                  gs[static_cast<std::size_t>(lo)]);
                    }
                    // below-range copies hit x[0]: t <= pad contributes (pad - t)
                    const std::int64_t m = std::min<std::int64_t>(pad, T - 1);
                    gx[0] += inv_k * (static_cast<double>(pad) * gs[static_cast<std::size_t>(m + 1)] -
                                      gw[static_cast<std::size_t>(m + 1)]);
                    // above-range copies hit x[T-1]: t >= T-1-pad contributes
                    // (t + pad - T + 1)
                    const std::int64_t q = std::max<std::int64_t>(0, T - 1 - pad);
                    gx[(T - 1) * inner] +=
                        inv_k * (static_cast<double>(pad - T + 1) *
                                     (gs[static_cast<std::size_t>(T)] -
                                      gs[static_cast<std::size_t>(q)]) +
                                 (gw[static_cast<std::size_t>(T)] -
                                  gw[static_cast<std::size_t>(q)]));
                }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Dropout: inverted-scaling train-mode mask; the identity when rate == 0.
// ---------------------------------------------------------------------------

inline Tensor dropout(const Tensor& a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw std::invalid_argument("dropout rate must lie in [0,1), got " + std::to_string(rate));
    if (rate == 0.0) return a;
    const bool track = detail::should_track({&a});
    const double scale = 1.0 / (1.0 - rate);
    auto mask = std::make_shared<std::vector<double>>(a.data().size());
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double m = rng.uniform() >= rate ? scale : 0.0;
        (*mask)[i] = m;
        out[i] = a.data()[i] * m;
    }
    Tensor y = detail::make_output(a.shape(), std::move(out), track);
    if (track) {
        auto an = a.node(), yn = y.node();
        Tape::active()->record({yn}, [an, yn, mask] {
            const auto& g = yn->grad;
            auto& ga = an->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
        });
    }
    return y;
}

}  // namespace timemixer
