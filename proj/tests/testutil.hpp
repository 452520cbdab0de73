#pragma once

// Shared test helpers: deterministic random inputs, central finite-difference
// gradient checking, and reference oracles kept deliberately naive (scalar
// loops, exhaustive enumeration) so they cannot share bugs with the library.

#include <cmath>
#include <functional>
#include <vector>

#include "simulseq/simulseq.hpp"

namespace testutil {

using namespace simulseq;

// ---------------------------------------------------------------------------
// Random inputs
// ---------------------------------------------------------------------------

inline TensorPtr random_tensor(Rng& rng, std::vector<int> shape, bool requires_grad = true,
                               double scale = 1.0) {
    size_t n = 1;
    for (int s : shape) n *= static_cast<size_t>(s);
    std::vector<double> data(n);
    for (auto& v : data) v = scale * rng.normal();
    return make_tensor(std::move(shape), std::move(data), requires_grad);
}

inline std::vector<double> random_stream(Rng& rng, int frames, int dim, double scale = 1.0) {
    std::vector<double> v(static_cast<size_t>(frames) * dim);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

inline ModelConfig tiny_model_config(int feat_dim = 6, int d = 16, int heads = 2) {
    ModelConfig cfg;
    cfg.feat_dim = feat_dim;
    cfg.d = d;
    cfg.heads = heads;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.aux_layers = 1;
    cfg.ffn = 2 * d;
    cfg.gloss_vocab_size = 7;
    cfg.text_vocab_size = 11;
    cfg.k = 2;
    cfg.dropout_enc = 0.0;
    cfg.dropout_dec = 0.0;
    cfg.static_rate = 3.0;
    return cfg;
}

inline Sample random_sample(Rng& rng, const ModelConfig& cfg, int glosses = 3,
                            int seg_min = 2, int seg_max = 4) {
    Sample s;
    s.id = "t" + std::to_string(rng.uniform_int(0, 1 << 20));
    int frame = 0;
    for (int g = 0; g < glosses; ++g) {
        s.gloss.push_back(rng.uniform_int(1, cfg.gloss_vocab_size - 1));
        frame += rng.uniform_int(seg_min, seg_max);
        s.boundaries.push_back(frame);
    }
    for (int g : s.gloss) s.text.push_back(g + 2);  // same relabeling as the corpus
    s.frames = frame;
    s.feats = random_stream(rng, s.frames, cfg.feat_dim, 0.5);
    return s;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central finite-difference check. `loss_fn` must rebuild the scalar loss
/// from the leaves' current values on every call. Returns the max relative
/// error across every entry of every leaf. The denominator floor keeps
/// one-ULP difference noise on exactly-zero gradients (masked or unused
/// entries) from registering as error: below it the comparison is absolute.
inline double fd_max_rel_err(const std::vector<TensorPtr>& leaves,
                             const std::function<TensorPtr()>& loss_fn, double h = 1e-6,
                             double floor = 1e-4) {
    for (const auto& leaf : leaves) leaf->zero_grad();
    loss_fn()->backward();
    double worst = 0.0;
    for (const auto& leaf : leaves) {
        for (size_t i = 0; i < leaf->data.size(); ++i) {
            double keep = leaf->data[i];
            leaf->data[i] = keep + h;
            double up = loss_fn()->value();
            leaf->data[i] = keep - h;
            double down = loss_fn()->value();
            leaf->data[i] = keep;
            double numeric = (up - down) / (2.0 * h);
            double analytic = leaf->grad.empty() ? 0.0 : leaf->grad[i];
            double denom = std::max({std::abs(numeric), std::abs(analytic), floor});
            worst = std::max(worst, std::abs(numeric - analytic) / denom);
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Integrate-and-fire oracle: one scalar accumulator, no batching tricks.
// ---------------------------------------------------------------------------

struct IfOracleResult {
    std::vector<int> frames;  // 1-based
    std::vector<double> remainder, within;
    bool tail_forced = false;
};

inline IfOracleResult if_oracle(const std::vector<double>& w, double threshold, bool fire_tail) {
    IfOracleResult out;
    double acc = 0.0;
    int last_fire = 0;
    for (size_t i = 0; i < w.size(); ++i) {
        acc += w[i];
        if (acc >= threshold) {
            double r = acc - threshold;
            out.frames.push_back(static_cast<int>(i) + 1);
            out.remainder.push_back(r);
            out.within.push_back(w[i] - r);
            acc = r;
            last_fire = static_cast<int>(i) + 1;
        }
    }
    if (fire_tail && !w.empty() && last_fire != static_cast<int>(w.size()) &&
        acc >= 0.5 * threshold) {
        out.frames.push_back(static_cast<int>(w.size()));
        out.remainder.push_back(0.0);
        out.within.push_back(w.back());
        out.tail_forced = true;
    }
    return out;
}

/// Eq-5 gloss embeddings, written as the paper states them: carried remainder
/// times the previous boundary frame, whole interior weights, within-part at
/// the firing frame.
inline std::vector<double> gloss_embedding_oracle(const std::vector<double>& h, int d,
                                                  const std::vector<double>& w,
                                                  const IfOracleResult& fire) {
    std::vector<double> e(fire.frames.size() * static_cast<size_t>(d), 0.0);
    for (size_t j = 0; j < fire.frames.size(); ++j) {
        auto addrow = [&](int frame1, double coeff) {  // frame1 is 1-based
            for (int c = 0; c < d; ++c)
                e[j * static_cast<size_t>(d) + static_cast<size_t>(c)] +=
                    coeff * h[static_cast<size_t>(frame1 - 1) * d + static_cast<size_t>(c)];
        };
        int lo = j == 0 ? 1 : fire.frames[j - 1] + 1;  // first interior frame
        if (j > 0) addrow(fire.frames[j - 1], fire.remainder[j - 1]);
        for (int i = lo; i < fire.frames[j]; ++i) addrow(i, w[static_cast<size_t>(i) - 1]);
        addrow(fire.frames[j], fire.within[j]);
    }
    return e;
}

// ---------------------------------------------------------------------------
// CTC oracle: exhaustive path enumeration over all |G+1|^n frame labelings.
// ---------------------------------------------------------------------------

inline std::vector<int> ctc_collapse(const std::vector<int>& path, int blank) {
    std::vector<int> out;
    int prev = blank;
    for (int p : path) {
        if (p != blank && p != prev) out.push_back(p);
        prev = p;
    }
    return out;
}

/// -log P(target) by summing the probability of every frame labeling whose
/// collapse equals the target. `probs` is n x V, already normalized.
inline double ctc_oracle(const std::vector<double>& probs, int n, int vocab,
                         const std::vector<int>& target, int blank) {
    double total = 0.0;
    std::vector<int> path(static_cast<size_t>(n), 0);
    while (true) {
        if (ctc_collapse(path, blank) == target) {
            double p = 1.0;
            for (int t = 0; t < n; ++t)
                p *= probs[static_cast<size_t>(t) * vocab + static_cast<size_t>(path[static_cast<size_t>(t)])];
            total += p;
        }
        int pos = n - 1;
        while (pos >= 0 && path[static_cast<size_t>(pos)] == vocab - 1) path[static_cast<size_t>(pos--)] = 0;
        if (pos < 0) break;
        ++path[static_cast<size_t>(pos)];
    }
    return -std::log(total);
}

// ---------------------------------------------------------------------------
// Attention-pair oracle: literally count query-key pairs.
// ---------------------------------------------------------------------------

inline int64_t pair_count_oracle(const std::string& strategy, const std::vector<int>& bounds,
                                 int n) {
    int64_t pairs = 0;
    if (strategy == "not_reencode") {
        for (int q = 1; q <= n; ++q) pairs += q;
        return pairs;
    }
    int prev = 0;
    for (size_t j = 0; j < bounds.size(); ++j) {
        int b = bounds[j];
        int qlo = strategy == "reencode_once" ? prev + 1 : 1;
        for (int q = qlo; q <= b; ++q) pairs += b;  // every query in the pass sees b keys
        prev = b;
    }
    for (int q = prev + 1; q <= n; ++q) pairs += q;  // causal tail
    return pairs;
}

}  // namespace testutil
