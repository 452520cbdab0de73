#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "simulseq/mask.hpp"
#include "simulseq/optim.hpp"
#include "simulseq/tensor.hpp"

namespace simulseq {

// Forward context threaded through module calls. Eval mode is the default;
// training mode enables dropout and requires an rng.
struct Ctx {
    bool training = false;
    double dropout = 0.0;
    Rng* rng = nullptr;
};

// Fixed sinusoidal positional encoding rows [pos0, pos0+count).
inline TensorPtr positional_rows(int pos0, int count, int d) {
    std::vector<double> v(static_cast<size_t>(count) * d);
    for (int p = 0; p < count; ++p) {
        double pos = static_cast<double>(pos0 + p);
        for (int c = 0; c < d; ++c) {
            double angle = pos / std::pow(10000.0, (2.0 * (c / 2)) / d);
            v[static_cast<size_t>(p) * d + c] = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return make_tensor({count, d}, std::move(v));
}

namespace detail {

inline std::vector<double> init_vec(Rng& rng, size_t n, double stddev) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal() * stddev;
    return v;
}

}  // namespace detail

struct LinearLayer {
    TensorPtr W, b;

    LinearLayer() = default;
    LinearLayer(int d_in, int d_out, Rng& rng) {
        W = make_tensor({d_in, d_out},
                        detail::init_vec(rng, static_cast<size_t>(d_in) * d_out,
                                         1.0 / std::sqrt(static_cast<double>(d_in))),
                        true);
        b = zeros({d_out}, true);
    }

    TensorPtr forward(const TensorPtr& x) const { return linear(x, W, b); }

    std::vector<Param> params(const std::string& prefix) {
        return {{prefix + ".W", W}, {prefix + ".b", b}};
    }
};

struct LayerNorm {
    TensorPtr gain, bias;

    LayerNorm() = default;
    explicit LayerNorm(int d) {
        gain = full({d}, 1.0, true);
        bias = zeros({d}, true);
    }

    TensorPtr forward(const TensorPtr& x) const { return layer_norm_rows(x, gain, bias); }

    std::vector<Param> params(const std::string& prefix) {
        return {{prefix + ".gain", gain}, {prefix + ".bias", bias}};
    }
};

// Scaled dot-product attention over h heads; the boolean mask decides which
// key positions each query row may see.
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(int d, int heads, Rng& rng)
        : d_(d), heads_(heads), wq_(d, d, rng), wk_(d, d, rng), wv_(d, d, rng), wo_(d, d, rng) {
        if (heads < 1 || d % heads != 0)
            throw config_error("MultiHeadAttention: width " + std::to_string(d) +
                               " not divisible by heads " + std::to_string(heads));
    }

    TensorPtr forward(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v,
                      const AttentionMask& mask) const {
        int dh = d_ / heads_;
        auto Q = wq_.forward(q);
        auto K = wk_.forward(k);
        auto V = wv_.forward(v);
        double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        TensorPtr merged;
        for (int h = 0; h < heads_; ++h) {
            auto Qh = slice_cols(Q, h * dh, (h + 1) * dh);
            auto Kh = slice_cols(K, h * dh, (h + 1) * dh);
            auto Vh = slice_cols(V, h * dh, (h + 1) * dh);
            auto attn = masked_softmax_rows(mul_scalar(matmul_nt(Qh, Kh), scale), mask);
            auto ctx = matmul(attn, Vh);
            merged = merged ? concat_cols(merged, ctx) : ctx;
        }
        return wo_.forward(merged);
    }

    std::vector<Param> params(const std::string& prefix) {
        std::vector<Param> p;
        for (auto& q : wq_.params(prefix + ".q")) p.push_back(q);
        for (auto& q : wk_.params(prefix + ".k")) p.push_back(q);
        for (auto& q : wv_.params(prefix + ".v")) p.push_back(q);
        for (auto& q : wo_.params(prefix + ".o")) p.push_back(q);
        return p;
    }

private:
    int d_ = 0, heads_ = 1;
    LinearLayer wq_, wk_, wv_, wo_;
};

class FeedForward {
public:
    FeedForward() = default;
    FeedForward(int d, int d_ff, Rng& rng) : in_(d, d_ff, rng), out_(d_ff, d, rng) {}

    TensorPtr forward(const TensorPtr& x) const { return out_.forward(relu(in_.forward(x))); }

    std::vector<Param> params(const std::string& prefix) {
        std::vector<Param> p;
        for (auto& q : in_.params(prefix + ".in")) p.push_back(q);
        for (auto& q : out_.params(prefix + ".out")) p.push_back(q);
        return p;
    }

private:
    LinearLayer in_, out_;
};

// Post-norm encoder layer: x -> LN(x + Drop(Attn)) -> LN(. + Drop(FFN)).
class EncoderLayer {
public:
    EncoderLayer() = default;
    EncoderLayer(int d, int heads, int d_ff, Rng& rng)
        : attn_(d, heads, rng), ffn_(d, d_ff, rng), ln1_(d), ln2_(d) {}

    TensorPtr forward(const TensorPtr& x, const AttentionMask& mask, const Ctx& ctx) const {
        auto a = ln1_.forward(
            add(x, dropout(attn_.forward(x, x, x, mask), ctx.dropout, ctx.rng, ctx.training)));
        return ln2_.forward(
            add(a, dropout(ffn_.forward(a), ctx.dropout, ctx.rng, ctx.training)));
    }

    // Output for the newest input row only. `q` must equal the last row of
    // `rows`; under a causal mask that row sees every row, so the full-width
    // single-row mask reproduces the batch arithmetic exactly.
    TensorPtr forward_last_row(const TensorPtr& q, const TensorPtr& rows, const Ctx& ctx) const {
        auto m = full_mask(1, rows->shape[0]);
        auto a = ln1_.forward(
            add(q, dropout(attn_.forward(q, rows, rows, m), ctx.dropout, ctx.rng, ctx.training)));
        return ln2_.forward(
            add(a, dropout(ffn_.forward(a), ctx.dropout, ctx.rng, ctx.training)));
    }

    std::vector<Param> params(const std::string& prefix) {
        std::vector<Param> p;
        for (auto& q : attn_.params(prefix + ".attn")) p.push_back(q);
        for (auto& q : ffn_.params(prefix + ".ffn")) p.push_back(q);
        for (auto& q : ln1_.params(prefix + ".ln1")) p.push_back(q);
        for (auto& q : ln2_.params(prefix + ".ln2")) p.push_back(q);
        return p;
    }

private:
    MultiHeadAttention attn_;
    FeedForward ffn_;
    LayerNorm ln1_, ln2_;
};

// Post-norm decoder layer with optional cross-attention (the auxiliary gloss
// decoder runs without it).
class DecoderLayer {
public:
    DecoderLayer() = default;
    DecoderLayer(int d, int heads, int d_ff, bool with_cross, Rng& rng)
        : with_cross_(with_cross), self_(d, heads, rng), ffn_(d, d_ff, rng), ln1_(d), ln3_(d) {
        if (with_cross_) {
            cross_ = MultiHeadAttention(d, heads, rng);
            ln2_ = LayerNorm(d);
        }
    }

    TensorPtr forward(const TensorPtr& y, const TensorPtr& memory, const AttentionMask& self_mask,
                      const AttentionMask& cross_mask, const Ctx& ctx) const {
        auto a = ln1_.forward(
            add(y, dropout(self_.forward(y, y, y, self_mask), ctx.dropout, ctx.rng, ctx.training)));
        if (with_cross_) {
            if (!memory) throw dim_error("DecoderLayer: cross-attention requires memory");
            a = ln2_.forward(add(
                a, dropout(cross_.forward(a, memory, memory, cross_mask), ctx.dropout, ctx.rng,
                           ctx.training)));
        }
        return ln3_.forward(add(a, dropout(ffn_.forward(a), ctx.dropout, ctx.rng, ctx.training)));
    }

    bool has_cross() const { return with_cross_; }

    std::vector<Param> params(const std::string& prefix) {
        std::vector<Param> p;
        for (auto& q : self_.params(prefix + ".self")) p.push_back(q);
        if (with_cross_)
            for (auto& q : cross_.params(prefix + ".cross")) p.push_back(q);
        for (auto& q : ffn_.params(prefix + ".ffn")) p.push_back(q);
        for (auto& q : ln1_.params(prefix + ".ln1")) p.push_back(q);
        if (with_cross_)
            for (auto& q : ln2_.params(prefix + ".ln2")) p.push_back(q);
        for (auto& q : ln3_.params(prefix + ".ln3")) p.push_back(q);
        return p;
    }

private:
    bool with_cross_ = false;
    MultiHeadAttention self_, cross_;
    FeedForward ffn_;
    LayerNorm ln1_, ln2_, ln3_;
};

// Encoder stack. Positional rows are added before the first layer when
// enabled; a zero-layer stack is then the identity plus positions.
class TransformerEncoder {
public:
    TransformerEncoder() = default;
    TransformerEncoder(int d, int heads, int d_ff, int layers, bool add_positional, Rng& rng)
        : d_(d), add_positional_(add_positional) {
        layers_.reserve(layers);
        for (int i = 0; i < layers; ++i) layers_.emplace_back(d, heads, d_ff, rng);
    }

    TensorPtr forward(const TensorPtr& x, const AttentionMask& mask, const Ctx& ctx) const {
        auto h = prepare(x, ctx);
        for (const auto& layer : layers_) h = layer.forward(h, mask, ctx);
        return h;
    }

    // Input-with-positions step, exposed for the incremental path.
    TensorPtr prepare(const TensorPtr& x, const Ctx& ctx, int pos0 = 0) const {
        auto h = add_positional_ ? add(x, positional_rows(pos0, x->shape[0], d_)) : x;
        return dropout(h, ctx.dropout, ctx.rng, ctx.training);
    }

    const std::vector<EncoderLayer>& layers() const { return layers_; }
    int width() const { return d_; }

    std::vector<Param> params(const std::string& prefix) {
        std::vector<Param> p;
        for (size_t i = 0; i < layers_.size(); ++i)
            for (auto& q : layers_[i].params(prefix + ".layer" + std::to_string(i)))
                p.push_back(q);
        return p;
    }

private:
    int d_ = 0;
    bool add_positional_ = true;
    std::vector<EncoderLayer> layers_;
};

// Decoder stack over already-embedded target rows.
class TransformerDecoder {
public:
    TransformerDecoder() = default;
    TransformerDecoder(int d, int heads, int d_ff, int layers, bool with_cross, bool add_positional,
                       Rng& rng)
        : d_(d), add_positional_(add_positional) {
        layers_.reserve(layers);
        for (int i = 0; i < layers; ++i) layers_.emplace_back(d, heads, d_ff, with_cross, rng);
    }

    TensorPtr forward(const TensorPtr& y, const TensorPtr& memory, const AttentionMask& self_mask,
                      const AttentionMask& cross_mask, const Ctx& ctx) const {
        auto h = add_positional_ ? add(y, positional_rows(0, y->shape[0], d_)) : y;
        h = dropout(h, ctx.dropout, ctx.rng, ctx.training);
        for (const auto& layer : layers_) h = layer.forward(h, memory, self_mask, cross_mask, ctx);
        return h;
    }

    std::vector<Param> params(const std::string& prefix) {
        std::vector<Param> p;
        for (size_t i = 0; i < layers_.size(); ++i)
            for (auto& q : layers_[i].params(prefix + ".layer" + std::to_string(i)))
                p.push_back(q);
        return p;
    }

private:
    int d_ = 0;
    bool add_positional_ = true;
    std::vector<DecoderLayer> layers_;
};

}  // namespace simulseq
