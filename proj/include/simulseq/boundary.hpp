#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "simulseq/common.hpp"
#include "simulseq/optim.hpp"
#include "simulseq/tensor.hpp"

namespace simulseq {

// ---------------------------------------------------------------------------
// Scalar integrate-and-fire scan
// ---------------------------------------------------------------------------

// Streaming accumulator: feed one weight per frame, fire when the running sum
// crosses the threshold. The firing frame's weight splits into a consumed part
// `within` and a carried `remainder`, so within + remainder equals the weight
// and each completed segment consumes exactly one threshold worth of mass.
// A weight may not cross more than one threshold per frame; the carry simply
// rides into the next frame (weights are sigmoid outputs < threshold, so this
// only matters for rescaled weights, where the delayed fire is harmless).
class IfAccumulator {
public:
    explicit IfAccumulator(double threshold = 1.0) : th_(threshold) {
        if (threshold <= 0.0) throw config_error("IfAccumulator: threshold must be positive");
        bs_.threshold = threshold;
    }

    // Returns true when this frame fired a boundary.
    bool push(double w) {
        ++frame_;
        acc_ += w;
        if (acc_ >= th_) {
            double r = acc_ - th_;
            bs_.frames.push_back(frame_);
            bs_.remainder.push_back(r);
            bs_.within.push_back(w - r);
            acc_ = r;
            return true;
        }
        return false;
    }

    // Stream-end rule: a residual of at least half a threshold becomes one
    // final boundary at the last frame (nothing carries past it); smaller
    // residuals are discarded. Returns true when a boundary was added.
    bool finalize(double last_weight) {
        if (frame_ == 0) return false;
        if (!bs_.frames.empty() && bs_.frames.back() == frame_) return false;
        if (acc_ >= 0.5 * th_) {
            bs_.frames.push_back(frame_);
            bs_.remainder.push_back(0.0);
            bs_.within.push_back(last_weight);
            bs_.tail_forced = true;
            acc_ = 0.0;
            return true;
        }
        return false;
    }

    double residual() const { return acc_; }
    int frames_seen() const { return frame_; }
    const BoundarySet& boundaries() const { return bs_; }
    BoundarySet take() { return std::move(bs_); }

private:
    double th_;
    double acc_ = 0.0;
    int frame_ = 0;
    BoundarySet bs_;
};

// Whole-sequence scan. With fire_tail the stream-end residual rule applies.
inline BoundarySet scan_boundaries(const std::vector<double>& w, double threshold,
                                   bool fire_tail = false) {
    IfAccumulator acc(threshold);
    for (double wi : w) acc.push(wi);
    if (fire_tail && !w.empty()) acc.finalize(w.back());
    return acc.take();
}

// ---------------------------------------------------------------------------
// Differentiable pieces
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> flat_weights(const TensorPtr& w) {
    if (w->shape.size() == 2 && w->shape[1] != 1)
        throw dim_error("weights: expected shape [n] or [n x 1], got " + shape_str(w->shape));
    return w->data;
}

}  // namespace detail

/// Gloss embeddings over encoder states: one row per boundary, each the
/// weighted sum of its segment's states. The firing frame contributes its
/// `within` part, the previous firing frame its carried `remainder`, interior
/// frames their full weight. `bs` must have been scanned from these weights.
inline TensorPtr gloss_embeddings(const TensorPtr& H, const TensorPtr& W, const BoundarySet& bs) {
    detail::require_matrix(H, "gloss_embeddings");
    int n = H->shape[0], d = H->shape[1];
    auto wv = detail::flat_weights(W);
    if (static_cast<int>(wv.size()) != n)
        throw dim_error("gloss_embeddings: weight count does not match frame count");
    bs.validate(n);
    int S = bs.count();
    if (S == 0) throw dim_error("gloss_embeddings: no boundaries fired");

    std::vector<double> ed(static_cast<size_t>(S) * d, 0.0);
    auto row = [&](int frame1) { return H->data.data() + static_cast<size_t>(frame1 - 1) * d; };
    for (int j = 0; j < S; ++j) {
        double* e = ed.data() + static_cast<size_t>(j) * d;
        int lo = j == 0 ? 0 : bs.frames[j - 1];  // previous firing frame (carry source)
        int hi = bs.frames[j];
        if (j > 0) {
            const double* h = row(lo);
            for (int c = 0; c < d; ++c) e[c] += bs.remainder[j - 1] * h[c];
        }
        for (int i = lo + 1; i < hi; ++i) {
            const double* h = row(i);
            for (int c = 0; c < d; ++c) e[c] += wv[static_cast<size_t>(i - 1)] * h[c];
        }
        const double* h = row(hi);
        for (int c = 0; c < d; ++c) e[c] += bs.within[j] * h[c];
    }
    auto out = make_tensor({S, d}, std::move(ed));

    auto bsc = std::make_shared<BoundarySet>(bs);
    auto wvc = std::make_shared<std::vector<double>>(std::move(wv));
    detail::wire(out, {H, W}, "gloss_embeddings", [H, W, bsc, wvc, n, d, S](Tensor& o) {
        const auto& b = bsc->frames;
        auto grow = [&](int j) { return o.grad.data() + static_cast<size_t>(j) * d; };
        auto hrow = [&](int frame1) { return H->data.data() + static_cast<size_t>(frame1 - 1) * d; };
        auto dot = [&](const double* a, const double* c) {
            double s = 0.0;
            for (int q = 0; q < d; ++q) s += a[q] * c[q];
            return s;
        };

        if (H->requires_grad) {
            H->ensure_grad();
            for (int j = 0; j < S; ++j) {
                const double* g = grow(j);
                int lo = j == 0 ? 0 : b[j - 1];
                int hi = b[j];
                for (int i = lo + 1; i < hi; ++i) {
                    double* dh = H->grad.data() + static_cast<size_t>(i - 1) * d;
                    double c = (*wvc)[static_cast<size_t>(i - 1)];
                    for (int q = 0; q < d; ++q) dh[q] += c * g[q];
                }
                double* dh = H->grad.data() + static_cast<size_t>(hi - 1) * d;
                double c = bsc->within[j];
                for (int q = 0; q < d; ++q) dh[q] += c * g[q];
                if (j + 1 < S) {
                    // this firing frame also carries remainder into segment j+1
                    const double* gn = grow(j + 1);
                    double rc = bsc->remainder[j];
                    for (int q = 0; q < d; ++q) dh[q] += rc * gn[q];
                }
            }
        }
        if (W->requires_grad) {
            W->ensure_grad();
            // Coefficients r_{j-1} and l_j are linear in the weights given the
            // boundary pattern: the carry into segment j responds to every
            // weight up to its firing frame, the consumed part with opposite
            // sign to every weight strictly before its own frame. Range adds
            // go through a difference array.
            std::vector<double> diff(static_cast<size_t>(n) + 1, 0.0);
            for (int j = 0; j < S; ++j) {
                const double* g = grow(j);
                if (j > 0) {
                    double a = dot(g, hrow(b[j - 1]));
                    diff[0] += a;
                    diff[static_cast<size_t>(b[j - 1])] -= a;
                }
                double bterm = dot(g, hrow(b[j]));
                bool forced = bsc->tail_forced && j == S - 1;
                if (forced) {
                    W->grad[static_cast<size_t>(b[j] - 1)] += bterm;
                } else if (b[j] > 1) {
                    diff[0] -= bterm;
                    diff[static_cast<size_t>(b[j] - 1)] += bterm;
                }
                int lo = j == 0 ? 0 : b[j - 1];
                for (int i = lo + 1; i < b[j]; ++i)
                    W->grad[static_cast<size_t>(i - 1)] += dot(g, hrow(i));
            }
            double run = 0.0;
            for (int i = 0; i < n; ++i) {
                run += diff[static_cast<size_t>(i)];
                W->grad[static_cast<size_t>(i)] += run;
            }
        }
    });
    return out;
}

/// Full integrate-and-fire pass: scan the weights, then build one embedding
/// per fired boundary. Differentiable in H and W; the boundary pattern itself
/// is data.
inline std::pair<BoundarySet, TensorPtr> integrate_and_fire(const TensorPtr& W, const TensorPtr& H,
                                                            double threshold = 1.0,
                                                            bool fire_tail = false) {
    auto bs = scan_boundaries(detail::flat_weights(W), threshold, fire_tail);
    TensorPtr E;
    if (!bs.empty()) E = gloss_embeddings(H, W, bs);
    return {std::move(bs), std::move(E)};
}

/// Rescale weights so their sum equals the target gloss length, which makes
/// the fire count match the gloss sequence (training only; the target length
/// is unknown at inference).
inline TensorPtr scale_weights_to_length(const TensorPtr& W, int target_len) {
    if (target_len <= 0) throw data_error("scale_weights_to_length: target length must be >= 1");
    auto total = sum_all(W);
    if (total->data[0] <= 0.0)
        throw numeric_error("scale_weights_to_length: weight sum is not positive");
    return mul_scalar_t(W, sdiv(scalar(static_cast<double>(target_len)), total));
}

/// Fixed-rate segmentation baseline: boundaries at floor(rate), floor(2*rate),
/// ... up to the stream length; a trailing partial segment fires nothing.
/// Remainder/within carry no meaning here (0 and full weight).
inline BoundarySet static_segment(int stream_len, double rate) {
    if (rate <= 0.0) throw config_error("static_segment: rate must be positive");
    BoundarySet bs;
    double acc = rate;
    int prev = 0;
    while (true) {
        int b = static_cast<int>(std::floor(acc));
        if (b > stream_len) break;
        if (b > prev) {
            bs.frames.push_back(b);
            bs.remainder.push_back(0.0);
            bs.within.push_back(1.0);
            prev = b;
        }
        acc += rate;
    }
    return bs;
}

// ---------------------------------------------------------------------------
// Weight predictor
// ---------------------------------------------------------------------------

// Residual two-layer MLP producing one (0,1) weight per frame:
// w = sigmoid((relu(H*W1 + B1) + H) * W2 + B2).
class BoundaryPredictor {
public:
    BoundaryPredictor() = default;
    BoundaryPredictor(int d, Rng& rng) {
        double s = 1.0 / std::sqrt(static_cast<double>(d));
        W1 = make_tensor({d, d}, random_vec(rng, static_cast<size_t>(d) * d, s), true);
        B1 = zeros({d}, true);
        W2 = make_tensor({d, 1}, random_vec(rng, static_cast<size_t>(d), s), true);
        B2 = zeros({1}, true);
    }

    TensorPtr forward(const TensorPtr& H) const {
        auto hidden = add(relu(linear(H, W1, B1)), H);
        return sigmoid(linear(hidden, W2, B2));
    }

    std::vector<Param> params(const std::string& prefix) {
        return {{prefix + ".W1", W1}, {prefix + ".B1", B1}, {prefix + ".W2", W2},
                {prefix + ".B2", B2}};
    }

    TensorPtr W1, B1, W2, B2;

private:
    static std::vector<double> random_vec(Rng& rng, size_t n, double scale) {
        std::vector<double> v(n);
        for (auto& x : v) x = rng.normal() * scale;
        return v;
    }
};

}  // namespace simulseq
