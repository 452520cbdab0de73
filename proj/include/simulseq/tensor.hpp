#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "simulseq/common.hpp"
#include "simulseq/mask.hpp"
#include "simulseq/rng.hpp"

namespace simulseq {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense tensor of doubles with reverse-mode autodiff. Rank 1 ({n}) and rank 2
// ({n,m}) cover everything this engine needs; scalars are shape {1}. A node
// produced by an op holds its parents and a closure that pushes grad to them;
// leaves (parameters, inputs) have neither. Ops skip all graph wiring when no
// input requires grad, so the same functions double as the inference path.
class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized like data once touched
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d, bool rg = false)
        : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
        if (static_cast<int64_t>(data.size()) != numel_of(shape))
            throw dim_error("Tensor: data length does not match shape " + shape_str(shape));
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw dim_error("Tensor: non-positive dimension in shape");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    bool is_scalar() const { return numel() == 1; }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const {
        if (shape.size() == 2) return shape[1];
        if (shape.size() == 1) return 1;
        throw dim_error("Tensor::cols on rank " + std::to_string(shape.size()));
    }
    double value() const {
        if (!is_scalar()) throw dim_error("Tensor::value: tensor is not scalar");
        return data[0];
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    }

    // Reverse-mode accumulation from a scalar root. Grads of repeated calls
    // add up; clearing is the optimizer's job.
    void backward();
};

// Scoped switch that disables graph construction (inference fast path).
struct NoGradGuard {
    bool prev;
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline TensorPtr make_tensor(std::vector<int> shape, std::vector<double> data, bool rg = false) {
    return std::make_shared<Tensor>(std::move(shape), std::move(data), rg);
}
inline TensorPtr zeros(std::vector<int> shape, bool rg = false) {
    auto n = Tensor::numel_of(shape);
    return std::make_shared<Tensor>(std::move(shape), std::vector<double>(n, 0.0), rg);
}
inline TensorPtr full(std::vector<int> shape, double v, bool rg = false) {
    auto n = Tensor::numel_of(shape);
    return std::make_shared<Tensor>(std::move(shape), std::vector<double>(n, v), rg);
}
inline TensorPtr scalar(double v, bool rg = false) {
    return std::make_shared<Tensor>(std::vector<int>{1}, std::vector<double>{v}, rg);
}

namespace detail {

inline bool& grad_enabled() {
    static thread_local bool enabled = true;
    return enabled;
}

inline void wire(const TensorPtr& out, std::vector<TensorPtr> parents, const char* name,
                 std::function<void(Tensor&)> fn) {
    out->op = name;
    if (!grad_enabled()) return;
    bool any = false;
    for (const auto& p : parents)
        if (p && p->requires_grad) any = true;
    if (!any) return;
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(fn);
}

// C(n x m) += or = A(n x k) * B(k x m)
inline void mm_nn(const double* A, const double* B, double* C, int n, int k, int m, bool acc) {
    if (!acc) std::fill(C, C + static_cast<size_t>(n) * m, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* a = A + static_cast<size_t>(i) * k;
        double* c = C + static_cast<size_t>(i) * m;
        for (int p = 0; p < k; ++p) {
            double av = a[p];
            if (av == 0.0) continue;
            const double* b = B + static_cast<size_t>(p) * m;
            for (int j = 0; j < m; ++j) c[j] += av * b[j];
        }
    }
}

// C(n x m) += or = A(n x k) * B(m x k)^T
inline void mm_nt(const double* A, const double* B, double* C, int n, int k, int m, bool acc) {
    for (int i = 0; i < n; ++i) {
        const double* a = A + static_cast<size_t>(i) * k;
        double* c = C + static_cast<size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            const double* b = B + static_cast<size_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += a[p] * b[p];
            if (acc)
                c[j] += s;
            else
                c[j] = s;
        }
    }
}

// C(k x m) += or = A(n x k)^T * B(n x m)
inline void mm_tn(const double* A, const double* B, double* C, int n, int k, int m, bool acc) {
    if (!acc) std::fill(C, C + static_cast<size_t>(k) * m, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* a = A + static_cast<size_t>(i) * k;
        const double* b = B + static_cast<size_t>(i) * m;
        for (int p = 0; p < k; ++p) {
            double av = a[p];
            if (av == 0.0) continue;
            double* c = C + static_cast<size_t>(p) * m;
            for (int j = 0; j < m; ++j) c[j] += av * b[j];
        }
    }
}

inline void require_matrix(const TensorPtr& t, const char* who) {
    if (t->shape.size() != 2) throw dim_error(std::string(who) + ": expected rank-2 tensor");
}
inline void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* who) {
    if (a->shape != b->shape)
        throw dim_error(std::string(who) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                        shape_str(b->shape));
}

}  // namespace detail

inline NoGradGuard::NoGradGuard() : prev(detail::grad_enabled()) {
    detail::grad_enabled() = false;
}
inline NoGradGuard::~NoGradGuard() { detail::grad_enabled() = prev; }

inline void Tensor::backward() {
    if (!is_scalar()) throw dim_error("backward: loss must be scalar, got " + shape_str(shape));
    if (!std::isfinite(data[0])) throw numeric_error("backward: loss is not finite");
    if (!requires_grad) return;

    // Topological order by iterative DFS.
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> seen;
    std::vector<std::pair<Tensor*, size_t>> stack{{this, 0}};
    seen.insert(this);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Tensor* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // Interior grads are per-pass scratch; only leaves accumulate across calls.
    for (auto* t : order)
        if (t->backward_fn) t->zero_grad();
    ensure_grad();
    grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

// ---------------------------------------------------------------------------
// Elementwise and scalar ops
// ---------------------------------------------------------------------------

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] + b->data[i];
    auto out = make_tensor(a->shape, std::move(d));
    detail::wire(out, {a, b}, "add", [a, b](Tensor& o) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) b->grad[i] += o.grad[i];
        }
    });
    return out;
}

inline TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] - b->data[i];
    auto out = make_tensor(a->shape, std::move(d));
    detail::wire(out, {a, b}, "sub", [a, b](Tensor& o) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) b->grad[i] -= o.grad[i];
        }
    });
    return out;
}

inline TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] * b->data[i];
    auto out = make_tensor(a->shape, std::move(d));
    detail::wire(out, {a, b}, "mul", [a, b](Tensor& o) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i] * b->data[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) b->grad[i] += o.grad[i] * a->data[i];
        }
    });
    return out;
}

inline TensorPtr mul_scalar(const TensorPtr& a, double c) {
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] * c;
    auto out = make_tensor(a->shape, std::move(d));
    detail::wire(out, {a}, "mul_scalar", [a, c](Tensor& o) {
        a->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i] * c;
    });
    return out;
}

inline TensorPtr add_scalar(const TensorPtr& a, double c) {
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] + c;
    auto out = make_tensor(a->shape, std::move(d));
    detail::wire(out, {a}, "add_scalar", [a](Tensor& o) {
        a->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
    });
    return out;
}

// Broadcast multiply by a 1-element tensor (keeps grad flowing to the scalar).
inline TensorPtr mul_scalar_t(const TensorPtr& a, const TensorPtr& s) {
    if (!s->is_scalar()) throw dim_error("mul_scalar_t: s must be scalar");
    double sv = s->data[0];
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] * sv;
    auto out = make_tensor(a->shape, std::move(d));
    detail::wire(out, {a, s}, "mul_scalar_t", [a, s, sv](Tensor& o) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i] * sv;
        }
        if (s->requires_grad) {
            s->ensure_grad();
            double acc = 0.0;
            for (size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * a->data[i];
            s->grad[0] += acc;
        }
    });
    return out;
}

inline TensorPtr sdiv(const TensorPtr& a, const TensorPtr& b) {
    if (!a->is_scalar() || !b->is_scalar()) throw dim_error("sdiv: scalar tensors expected");
    if (b->data[0] == 0.0) throw numeric_error("sdiv: division by zero");
    auto out = scalar(a->data[0] / b->data[0]);
    detail::wire(out, {a, b}, "sdiv", [a, b](Tensor& o) {
        double bv = b->data[0];
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad[0] += o.grad[0] / bv;
        }
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad[0] -= o.grad[0] * a->data[0] / (bv * bv);
        }
    });
    return out;
}

inline TensorPtr sum_all(const TensorPtr& a) {
    double s = 0.0;
    for (double v : a->data) s += v;
    auto out = scalar(s);
    detail::wire(out, {a}, "sum_all", [a](Tensor& o) {
        a->ensure_grad();
        for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += o.grad[0];
    });
    return out;
}

// Scalar dot with a constant coefficient table: sum_i c[i] * a[i].
inline TensorPtr weighted_sum(const TensorPtr& a, std::vector<double> coeff) {
    if (coeff.size() != a->data.size()) throw dim_error("weighted_sum: coefficient size mismatch");
    double s = 0.0;
    for (size_t i = 0; i < coeff.size(); ++i) s += coeff[i] * a->data[i];
    auto out = scalar(s);
    auto c = std::make_shared<std::vector<double>>(std::move(coeff));
    detail::wire(out, {a}, "weighted_sum", [a, c](Tensor& o) {
        a->ensure_grad();
        for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += o.grad[0] * (*c)[i];
    });
    return out;
}

inline TensorPtr relu(const TensorPtr& a) {
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
    auto out = make_tensor(a->shape, std::move(d));
    detail::wire(out, {a}, "relu", [a](Tensor& o) {
        a->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i)
            if (a->data[i] > 0.0) a->grad[i] += o.grad[i];
    });
    return out;
}

inline TensorPtr sigmoid(const TensorPtr& a) {
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = 1.0 / (1.0 + std::exp(-a->data[i]));
    auto out = make_tensor(a->shape, std::move(d));
    detail::wire(out, {a}, "sigmoid", [a](Tensor& o) {
        a->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            double y = o.data[i];
            a->grad[i] += o.grad[i] * y * (1.0 - y);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

inline TensorPtr matmul(const TensorPtr& A, const TensorPtr& B) {
    detail::require_matrix(A, "matmul");
    detail::require_matrix(B, "matmul");
    int n = A->shape[0], k = A->shape[1], m = B->shape[1];
    if (B->shape[0] != k)
        throw dim_error("matmul: inner dimensions disagree " + shape_str(A->shape) + " * " +
                        shape_str(B->shape));
    auto out = zeros({n, m});
    detail::mm_nn(A->data.data(), B->data.data(), out->data.data(), n, k, m, false);
    detail::wire(out, {A, B}, "matmul", [A, B, n, k, m](Tensor& o) {
        if (A->requires_grad) {
            A->ensure_grad();
            detail::mm_nt(o.grad.data(), B->data.data(), A->grad.data(), n, m, k, true);
        }
        if (B->requires_grad) {
            B->ensure_grad();
            detail::mm_tn(A->data.data(), o.grad.data(), B->grad.data(), n, k, m, true);
        }
    });
    return out;
}

// A (n x d) times B^T where B is (m x d).
inline TensorPtr matmul_nt(const TensorPtr& A, const TensorPtr& B) {
    detail::require_matrix(A, "matmul_nt");
    detail::require_matrix(B, "matmul_nt");
    int n = A->shape[0], d = A->shape[1], m = B->shape[0];
    if (B->shape[1] != d)
        throw dim_error("matmul_nt: inner dimensions disagree " + shape_str(A->shape) + " * " +
                        shape_str(B->shape) + "^T");
    auto out = zeros({n, m});
    detail::mm_nt(A->data.data(), B->data.data(), out->data.data(), n, d, m, false);
    detail::wire(out, {A, B}, "matmul_nt", [A, B, n, d, m](Tensor& o) {
        // dA = G * B ; dB = G^T * A
        if (A->requires_grad) {
            A->ensure_grad();
            detail::mm_nn(o.grad.data(), B->data.data(), A->grad.data(), n, m, d, true);
        }
        if (B->requires_grad) {
            B->ensure_grad();
            detail::mm_tn(o.grad.data(), A->data.data(), B->grad.data(), n, m, d, true);
        }
    });
    return out;
}

/// Affine map x*W + b with x (n x d), W (d x m), b (m).
inline TensorPtr linear(const TensorPtr& x, const TensorPtr& W, const TensorPtr& b) {
    detail::require_matrix(x, "linear");
    detail::require_matrix(W, "linear");
    int n = x->shape[0], d = x->shape[1], m = W->shape[1];
    if (W->shape[0] != d)
        throw dim_error("linear: x " + shape_str(x->shape) + " does not match W " +
                        shape_str(W->shape));
    if (b->shape != std::vector<int>{m})
        throw dim_error("linear: bias must have shape [" + std::to_string(m) + "]");
    auto out = zeros({n, m});
    detail::mm_nn(x->data.data(), W->data.data(), out->data.data(), n, d, m, false);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out->data[static_cast<size_t>(i) * m + j] += b->data[j];
    detail::wire(out, {x, W, b}, "linear", [x, W, b, n, d, m](Tensor& o) {
        if (x->requires_grad) {
            x->ensure_grad();
            detail::mm_nt(o.grad.data(), W->data.data(), x->grad.data(), n, m, d, true);
        }
        if (W->requires_grad) {
            W->ensure_grad();
            detail::mm_tn(x->data.data(), o.grad.data(), W->grad.data(), n, d, m, true);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) b->grad[j] += o.grad[static_cast<size_t>(i) * m + j];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

namespace detail {

inline void softmax_backward_rows(Tensor& o, const TensorPtr& a) {
    a->ensure_grad();
    int n = o.shape[0], m = o.shape[1];
    for (int i = 0; i < n; ++i) {
        const double* y = o.data.data() + static_cast<size_t>(i) * m;
        const double* g = o.grad.data() + static_cast<size_t>(i) * m;
        double dot = 0.0;
        for (int j = 0; j < m; ++j) dot += y[j] * g[j];
        double* da = a->grad.data() + static_cast<size_t>(i) * m;
        for (int j = 0; j < m; ++j) da[j] += y[j] * (g[j] - dot);
    }
}

}  // namespace detail

/// Row-wise softmax, stabilized by max subtraction. Rejects non-finite input.
inline TensorPtr softmax_rows(const TensorPtr& a) {
    detail::require_matrix(a, "softmax_rows");
    int n = a->shape[0], m = a->shape[1];
    std::vector<double> d(a->data.size());
    for (int i = 0; i < n; ++i) {
        const double* x = a->data.data() + static_cast<size_t>(i) * m;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < m; ++j) {
            if (!std::isfinite(x[j])) throw numeric_error("softmax_rows: non-finite input");
            mx = std::max(mx, x[j]);
        }
        double z = 0.0;
        double* y = d.data() + static_cast<size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (int j = 0; j < m; ++j) y[j] /= z;
    }
    auto out = make_tensor(a->shape, std::move(d));
    detail::wire(out, {a}, "softmax_rows",
                 [a](Tensor& o) { detail::softmax_backward_rows(o, a); });
    return out;
}

/// Softmax over the allowed entries of each row; masked entries get weight 0.
/// A fully masked row violates the attention contract.
inline TensorPtr masked_softmax_rows(const TensorPtr& a, const AttentionMask& mask) {
    detail::require_matrix(a, "masked_softmax_rows");
    int n = a->shape[0], m = a->shape[1];
    if (mask.rows != n || mask.cols != m)
        throw dim_error("masked_softmax_rows: mask shape mismatch");
    std::vector<double> d(a->data.size(), 0.0);
    for (int i = 0; i < n; ++i) {
        const double* x = a->data.data() + static_cast<size_t>(i) * m;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < m; ++j) {
            if (!mask.at(i, j)) continue;
            if (!std::isfinite(x[j])) throw numeric_error("masked_softmax_rows: non-finite input");
            mx = std::max(mx, x[j]);
        }
        if (mx == -std::numeric_limits<double>::infinity())
            throw dim_error("masked_softmax_rows: fully masked row " + std::to_string(i));
        double z = 0.0;
        double* y = d.data() + static_cast<size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            if (!mask.at(i, j)) continue;
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (int j = 0; j < m; ++j) y[j] /= z;
    }
    auto out = make_tensor(a->shape, std::move(d));
    // Masked outputs are exactly 0, so the unmasked softmax backward formula
    // already routes them zero gradient.
    detail::wire(out, {a}, "masked_softmax_rows",
                 [a](Tensor& o) { detail::softmax_backward_rows(o, a); });
    return out;
}

inline TensorPtr log_softmax_rows(const TensorPtr& a) {
    detail::require_matrix(a, "log_softmax_rows");
    int n = a->shape[0], m = a->shape[1];
    std::vector<double> d(a->data.size());
    for (int i = 0; i < n; ++i) {
        const double* x = a->data.data() + static_cast<size_t>(i) * m;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < m; ++j) {
            if (!std::isfinite(x[j])) throw numeric_error("log_softmax_rows: non-finite input");
            mx = std::max(mx, x[j]);
        }
        double z = 0.0;
        for (int j = 0; j < m; ++j) z += std::exp(x[j] - mx);
        double lz = mx + std::log(z);
        double* y = d.data() + static_cast<size_t>(i) * m;
        for (int j = 0; j < m; ++j) y[j] = x[j] - lz;
    }
    auto out = make_tensor(a->shape, std::move(d));
    detail::wire(out, {a}, "log_softmax_rows", [a](Tensor& o) {
        a->ensure_grad();
        int n = o.shape[0], m = o.shape[1];
        for (int i = 0; i < n; ++i) {
            const double* y = o.data.data() + static_cast<size_t>(i) * m;
            const double* g = o.grad.data() + static_cast<size_t>(i) * m;
            double gs = 0.0;
            for (int j = 0; j < m; ++j) gs += g[j];
            double* da = a->grad.data() + static_cast<size_t>(i) * m;
            for (int j = 0; j < m; ++j) da[j] += g[j] - std::exp(y[j]) * gs;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Normalization, dropout, embedding, slicing
// ---------------------------------------------------------------------------

inline TensorPtr layer_norm_rows(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                                 double eps = 1e-6) {
    detail::require_matrix(x, "layer_norm_rows");
    int n = x->shape[0], m = x->shape[1];
    if (gain->shape != std::vector<int>{m} || bias->shape != std::vector<int>{m})
        throw dim_error("layer_norm_rows: gain/bias must have shape [" + std::to_string(m) + "]");
    std::vector<double> d(x->data.size());
    auto xhat = std::make_shared<std::vector<double>>(x->data.size());
    auto inv_sigma = std::make_shared<std::vector<double>>(n);
    for (int i = 0; i < n; ++i) {
        const double* r = x->data.data() + static_cast<size_t>(i) * m;
        double mu = 0.0;
        for (int j = 0; j < m; ++j) mu += r[j];
        mu /= m;
        double var = 0.0;
        for (int j = 0; j < m; ++j) var += (r[j] - mu) * (r[j] - mu);
        var /= m;
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[i] = is;
        for (int j = 0; j < m; ++j) {
            double xh = (r[j] - mu) * is;
            (*xhat)[static_cast<size_t>(i) * m + j] = xh;
            d[static_cast<size_t>(i) * m + j] = xh * gain->data[j] + bias->data[j];
        }
    }
    auto out = make_tensor(x->shape, std::move(d));
    detail::wire(out, {x, gain, bias}, "layer_norm_rows",
                 [x, gain, bias, xhat, inv_sigma, n, m](Tensor& o) {
                     for (int i = 0; i < n; ++i) {
                         const double* g = o.grad.data() + static_cast<size_t>(i) * m;
                         const double* xh = xhat->data() + static_cast<size_t>(i) * m;
                         if (gain->requires_grad) {
                             gain->ensure_grad();
                             for (int j = 0; j < m; ++j) gain->grad[j] += g[j] * xh[j];
                         }
                         if (bias->requires_grad) {
                             bias->ensure_grad();
                             for (int j = 0; j < m; ++j) bias->grad[j] += g[j];
                         }
                         if (x->requires_grad) {
                             x->ensure_grad();
                             double* dx = x->grad.data() + static_cast<size_t>(i) * m;
                             double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                             for (int j = 0; j < m; ++j) {
                                 double dxh = g[j] * gain->data[j];
                                 mean_dxh += dxh;
                                 mean_dxh_xh += dxh * xh[j];
                             }
                             mean_dxh /= m;
                             mean_dxh_xh /= m;
                             double is = (*inv_sigma)[i];
                             for (int j = 0; j < m; ++j) {
                                 double dxh = g[j] * gain->data[j];
                                 dx[j] += is * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                             }
                         }
                     }
                 });
    return out;
}

// Inverted dropout; identity when not training or p == 0.
inline TensorPtr dropout(const TensorPtr& x, double p, Rng* rng, bool training) {
    if (!training || p <= 0.0) return x;
    if (p >= 1.0) throw config_error("dropout: rate must be < 1");
    if (!rng) throw config_error("dropout: rng required in training mode");
    double keep = 1.0 - p;
    auto mask = std::make_shared<std::vector<double>>(x->data.size());
    std::vector<double> d(x->data.size());
    for (size_t i = 0; i < d.size(); ++i) {
        double m = (rng->uniform() < keep) ? 1.0 / keep : 0.0;
        (*mask)[i] = m;
        d[i] = x->data[i] * m;
    }
    auto out = make_tensor(x->shape, std::move(d));
    detail::wire(out, {x}, "dropout", [x, mask](Tensor& o) {
        x->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) x->grad[i] += o.grad[i] * (*mask)[i];
    });
    return out;
}

// Embedding lookup: rows of table (V x d) by id.
inline TensorPtr gather_rows(const TensorPtr& table, const std::vector<int>& ids) {
    detail::require_matrix(table, "gather_rows");
    int V = table->shape[0], d = table->shape[1];
    int n = static_cast<int>(ids.size());
    if (n == 0) throw dim_error("gather_rows: empty id list");
    std::vector<double> out_d(static_cast<size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
        if (ids[i] < 0 || ids[i] >= V)
            throw dim_error("gather_rows: id " + std::to_string(ids[i]) + " out of range");
        std::copy_n(table->data.data() + static_cast<size_t>(ids[i]) * d, d,
                    out_d.data() + static_cast<size_t>(i) * d);
    }
    auto out = make_tensor({n, d}, std::move(out_d));
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    detail::wire(out, {table}, "gather_rows", [table, ids_copy, d](Tensor& o) {
        table->ensure_grad();
        for (size_t i = 0; i < ids_copy->size(); ++i) {
            const double* g = o.grad.data() + i * d;
            double* t = table->grad.data() + static_cast<size_t>((*ids_copy)[i]) * d;
            for (int j = 0; j < d; ++j) t[j] += g[j];
        }
    });
    return out;
}

inline TensorPtr slice_cols(const TensorPtr& x, int c0, int c1) {
    detail::require_matrix(x, "slice_cols");
    int n = x->shape[0], m = x->shape[1];
    if (c0 < 0 || c1 > m || c0 >= c1) throw dim_error("slice_cols: bad column range");
    int w = c1 - c0;
    std::vector<double> d(static_cast<size_t>(n) * w);
    for (int i = 0; i < n; ++i)
        std::copy_n(x->data.data() + static_cast<size_t>(i) * m + c0, w,
                    d.data() + static_cast<size_t>(i) * w);
    auto out = make_tensor({n, w}, std::move(d));
    detail::wire(out, {x}, "slice_cols", [x, c0, w, n, m](Tensor& o) {
        x->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const double* g = o.grad.data() + static_cast<size_t>(i) * w;
            double* dx = x->grad.data() + static_cast<size_t>(i) * m + c0;
            for (int j = 0; j < w; ++j) dx[j] += g[j];
        }
    });
    return out;
}

inline TensorPtr concat_cols(const TensorPtr& a, const TensorPtr& b) {
    detail::require_matrix(a, "concat_cols");
    detail::require_matrix(b, "concat_cols");
    int n = a->shape[0];
    if (b->shape[0] != n) throw dim_error("concat_cols: row count mismatch");
    int ma = a->shape[1], mb = b->shape[1];
    std::vector<double> d(static_cast<size_t>(n) * (ma + mb));
    for (int i = 0; i < n; ++i) {
        std::copy_n(a->data.data() + static_cast<size_t>(i) * ma, ma,
                    d.data() + static_cast<size_t>(i) * (ma + mb));
        std::copy_n(b->data.data() + static_cast<size_t>(i) * mb, mb,
                    d.data() + static_cast<size_t>(i) * (ma + mb) + ma);
    }
    auto out = make_tensor({n, ma + mb}, std::move(d));
    detail::wire(out, {a, b}, "concat_cols", [a, b, n, ma, mb](Tensor& o) {
        for (int i = 0; i < n; ++i) {
            const double* g = o.grad.data() + static_cast<size_t>(i) * (ma + mb);
            if (a->requires_grad) {
                a->ensure_grad();
                double* da = a->grad.data() + static_cast<size_t>(i) * ma;
                for (int j = 0; j < ma; ++j) da[j] += g[j];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                double* db = b->grad.data() + static_cast<size_t>(i) * mb;
                for (int j = 0; j < mb; ++j) db[j] += g[ma + j];
            }
        }
    });
    return out;
}

// Mean token-level NLL with one-hot targets; ignore_id rows are skipped.
inline TensorPtr cross_entropy_rows(const TensorPtr& logits, const std::vector<int>& targets,
                                    int ignore_id = -1) {
    detail::require_matrix(logits, "cross_entropy_rows");
    int n = logits->shape[0], V = logits->shape[1];
    if (static_cast<int>(targets.size()) != n)
        throw dim_error("cross_entropy_rows: target count does not match logit rows");
    auto probs = std::make_shared<std::vector<double>>(logits->data.size());
    int counted = 0;
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        int t = targets[i];
        if (t == ignore_id) continue;
        if (t < 0 || t >= V)
            throw dim_error("cross_entropy_rows: target id " + std::to_string(t) + " out of range");
        const double* x = logits->data.data() + static_cast<size_t>(i) * V;
        double mx = *std::max_element(x, x + V);
        double z = 0.0;
        double* p = probs->data() + static_cast<size_t>(i) * V;
        for (int j = 0; j < V; ++j) {
            p[j] = std::exp(x[j] - mx);
            z += p[j];
        }
        for (int j = 0; j < V; ++j) p[j] /= z;
        loss -= std::log(p[t]);
        ++counted;
    }
    if (counted == 0) throw data_error("cross_entropy_rows: no non-ignored target positions");
    auto out = scalar(loss / counted);
    auto tgt = std::make_shared<std::vector<int>>(targets);
    detail::wire(out, {logits}, "cross_entropy_rows",
                 [logits, tgt, probs, counted, ignore_id, V](Tensor& o) {
                     logits->ensure_grad();
                     double g = o.grad[0] / counted;
                     for (size_t i = 0; i < tgt->size(); ++i) {
                         int t = (*tgt)[i];
                         if (t == ignore_id) continue;
                         const double* p = probs->data() + i * V;
                         double* dl = logits->grad.data() + i * V;
                         for (int j = 0; j < V; ++j) dl[j] += g * p[j];
                         dl[t] -= g;
                     }
                 });
    return out;
}

// Plain argmax over a row of a matrix (inference helper, no grad).
inline int argmax_row(const Tensor& t, int row) {
    int m = t.cols();
    const double* x = t.data.data() + static_cast<size_t>(row) * m;
    return static_cast<int>(std::max_element(x, x + m) - x);
}

}  // namespace simulseq
