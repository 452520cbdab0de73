#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "simulseq/tensor.hpp"

namespace simulseq {

struct LossWeights {
    double ctc = 10.0;
    double if_ = 1.0;
    double soft = 0.6;
    double hard = 0.4;
};

namespace detail {

constexpr double kLogZero = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
    if (a == kLogZero) return b;
    if (b == kLogZero) return a;
    double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::fabs(a - b)));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CTC
// ---------------------------------------------------------------------------

/// CTC negative log-likelihood over log-probabilities (n x V rows already
/// log-softmaxed). Standard blank-interleaved forward DP in log space; the
/// backward pass recombines the stored alpha lattice with a suffix DP to get
/// per-cell path occupancies.
inline TensorPtr ctc_core(const TensorPtr& logp, const std::vector<int>& target, int blank_id) {
    detail::require_matrix(logp, "ctc_core");
    int n = logp->shape[0], V = logp->shape[1];
    if (blank_id < 0 || blank_id >= V) throw dim_error("ctc_core: blank id out of range");
    int U = static_cast<int>(target.size());
    for (int g : target) {
        if (g < 0 || g >= V) throw data_error("ctc_core: target id out of range");
        if (g == blank_id) throw data_error("ctc_core: blank inside target");
    }
    int repeats = 0;
    for (int i = 1; i < U; ++i)
        if (target[i] == target[i - 1]) ++repeats;
    if (n < U + repeats)
        throw data_error("ctc_core: target of length " + std::to_string(U) + " with " +
                         std::to_string(repeats) + " repeats not achievable in " +
                         std::to_string(n) + " frames");

    // Extended label sequence: blank, y1, blank, y2, ..., blank.
    int S = 2 * U + 1;
    std::vector<int> lab(S, blank_id);
    for (int i = 0; i < U; ++i) lab[2 * i + 1] = target[i];
    auto lp = [&](int t, int c) { return logp->data[static_cast<size_t>(t) * V + c]; };

    auto alpha = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * S,
                                                       detail::kLogZero);
    auto A = [&](int t, int s) -> double& { return (*alpha)[static_cast<size_t>(t) * S + s]; };
    A(0, 0) = lp(0, lab[0]);
    if (S > 1) A(0, 1) = lp(0, lab[1]);
    for (int t = 1; t < n; ++t) {
        for (int s = 0; s < S; ++s) {
            double a = A(t - 1, s);
            if (s >= 1) a = detail::log_add(a, A(t - 1, s - 1));
            if (s >= 2 && lab[s] != blank_id && lab[s] != lab[s - 2])
                a = detail::log_add(a, A(t - 1, s - 2));
            if (a != detail::kLogZero) A(t, s) = a + lp(t, lab[s]);
        }
    }
    double logP = A(n - 1, S - 1);
    if (S > 1) logP = detail::log_add(logP, A(n - 1, S - 2));
    if (logP == detail::kLogZero) throw numeric_error("ctc_core: zero-probability alignment");

    auto out = scalar(-logP);
    auto labp = std::make_shared<std::vector<int>>(std::move(lab));
    detail::wire(out, {logp}, "ctc_core", [logp, labp, alpha, n, V, S, blank_id, logP](Tensor& o) {
        logp->ensure_grad();
        const auto& lab = *labp;
        auto A = [&](int t, int s) { return (*alpha)[static_cast<size_t>(t) * S + s]; };
        auto lp = [&](int t, int c) { return logp->data[static_cast<size_t>(t) * V + c]; };
        // Suffix sums excluding the emission at the current frame, so that
        // alpha(t,s) + beta(t,s) covers each path's weight exactly once.
        std::vector<double> beta(S, detail::kLogZero), next(S);
        beta[S - 1] = 0.0;
        if (S > 1) beta[S - 2] = 0.0;
        double g0 = o.grad[0];
        for (int t = n - 1; t >= 0; --t) {
            double* dl = logp->grad.data() + static_cast<size_t>(t) * V;
            for (int s = 0; s < S; ++s) {
                double occ = A(t, s) + beta[s];
                if (occ != detail::kLogZero) dl[lab[s]] -= g0 * std::exp(occ - logP);
            }
            if (t == 0) break;
            for (int s = 0; s < S; ++s) {
                double b = beta[s] == detail::kLogZero ? detail::kLogZero
                                                       : beta[s] + lp(t, lab[s]);
                if (s + 1 < S && beta[s + 1] != detail::kLogZero)
                    b = detail::log_add(b, beta[s + 1] + lp(t, lab[s + 1]));
                if (s + 2 < S && lab[s + 2] != blank_id && lab[s + 2] != lab[s] &&
                    beta[s + 2] != detail::kLogZero)
                    b = detail::log_add(b, beta[s + 2] + lp(t, lab[s + 2]));
                next[s] = b;
            }
            beta.swap(next);
        }
    });
    return out;
}

/// CTC loss over raw per-frame logits (n x (vocab incl. blank)).
inline TensorPtr ctc_loss(const TensorPtr& logits, const std::vector<int>& target, int blank_id) {
    return ctc_core(log_softmax_rows(logits), target, blank_id);
}

// ---------------------------------------------------------------------------
// IF, hard CE, soft KD
// ---------------------------------------------------------------------------

/// Gloss cross-entropy plus squared length error. The length supervision uses
/// the raw (unscaled) weight sum; after training-time rescaling that sum would
/// be the target by construction and the term would teach nothing.
inline TensorPtr if_loss(const TensorPtr& gloss_logits, const std::vector<int>& gloss_targets,
                         const TensorPtr& unscaled_weights, int gloss_len) {
    if (gloss_logits->shape[0] != gloss_len ||
        static_cast<int>(gloss_targets.size()) != gloss_len)
        throw dim_error("if_loss: logit rows, targets and gloss length must agree");
    auto ce = cross_entropy_rows(gloss_logits, gloss_targets);
    auto diff = sub(sum_all(unscaled_weights), scalar(static_cast<double>(gloss_len)));
    return add(ce, mul(diff, diff));
}

/// Mean token negative log-likelihood with teacher forcing; pad excluded.
inline TensorPtr hard_ce(const TensorPtr& text_logits, const std::vector<int>& text_targets,
                         int pad_id) {
    return cross_entropy_rows(text_logits, text_targets, pad_id);
}

// Temperature softmax of one logits row (plain math, used for teacher targets).
inline std::vector<double> temperature_softmax(const std::vector<double>& logits, double gamma) {
    if (gamma <= 0.0) throw config_error("temperature_softmax: temperature must be positive");
    std::vector<double> p(logits.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : logits) mx = std::max(mx, x / gamma);
    double z = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(logits[i] / gamma - mx);
        z += p[i];
    }
    for (auto& x : p) x /= z;
    return p;
}

/// Word-level distillation: cross-entropy from the temperature-softened
/// teacher distribution to the temperature-softened student, averaged over
/// positions and scaled by temperature squared so gradient magnitudes match
/// the hard loss. Teacher logits are plain data.
inline TensorPtr soft_kd(const TensorPtr& student_logits,
                         const std::vector<std::vector<double>>& teacher_logits, double gamma) {
    if (gamma <= 0.0) throw config_error("soft_kd: temperature must be positive");
    detail::require_matrix(student_logits, "soft_kd");
    int m = student_logits->shape[0], V = student_logits->shape[1];
    if (static_cast<int>(teacher_logits.size()) != m)
        throw dim_error("soft_kd: teacher position count does not match student");
    std::vector<double> coeff(static_cast<size_t>(m) * V);
    for (int i = 0; i < m; ++i) {
        if (static_cast<int>(teacher_logits[static_cast<size_t>(i)].size()) != V)
            throw dim_error("soft_kd: teacher vocab width does not match student");
        auto p = temperature_softmax(teacher_logits[static_cast<size_t>(i)], gamma);
        std::copy(p.begin(), p.end(), coeff.begin() + static_cast<size_t>(i) * V);
    }
    auto slog = log_softmax_rows(mul_scalar(student_logits, 1.0 / gamma));
    auto xent = weighted_sum(slog, std::move(coeff));  // sum_i sum_c t_ic * log s_ic
    return mul_scalar(xent, -gamma * gamma / m);
}

/// Weighted sum of the four objectives. Terms disabled by the configuration
/// (no teacher, no CTC head, ...) are passed as null and simply dropped; a
/// NaN in any present component aborts with its name.
inline TensorPtr total_loss(const TensorPtr& ctc, const TensorPtr& if_, const TensorPtr& soft,
                            const TensorPtr& hard, const LossWeights& w) {
    auto check = [](const TensorPtr& t, const char* name) {
        if (t && !std::isfinite(t->value()))
            throw numeric_error(std::string("total_loss: non-finite ") + name + " component");
    };
    check(ctc, "ctc");
    check(if_, "if");
    check(soft, "soft");
    check(hard, "hard");
    TensorPtr total;
    auto take = [&](const TensorPtr& t, double lambda) {
        if (!t) return;
        auto term = mul_scalar(t, lambda);
        total = total ? add(total, term) : term;
    };
    take(ctc, w.ctc);
    take(if_, w.if_);
    take(soft, w.soft);
    take(hard, w.hard);
    if (!total) throw dim_error("total_loss: no loss components present");
    return total;
}

}  // namespace simulseq
