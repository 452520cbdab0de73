#pragma once

#include <string>
#include <vector>

#include "simulseq/boundary.hpp"
#include "simulseq/transformer.hpp"

namespace simulseq {

enum class FusionMode { add, concat_project, reencode_only };

inline FusionMode parse_fusion_mode(const std::string& s) {
    if (s == "add") return FusionMode::add;
    if (s == "concat_project") return FusionMode::concat_project;
    if (s == "reencode_only") return FusionMode::reencode_only;
    throw config_error("unknown fusion mode '" + s + "'");
}

inline const char* fusion_mode_name(FusionMode m) {
    switch (m) {
        case FusionMode::add: return "add";
        case FusionMode::concat_project: return "concat_project";
        case FusionMode::reencode_only: return "reencode_only";
    }
    throw config_error("unknown fusion mode value");
}

// Result of the two-pass encoding of one stream prefix.
struct EncodedStream {
    TensorPtr first_pass;
    TensorPtr reencoded;  // present after a re-encode pass
    TensorPtr fused;      // present iff reencoded is
    BoundarySet boundaries;
};

// Two-pass encoder: one parameter stack serves both the causal first pass
// (CTC head, boundary predictor) and the boundary-masked re-encode pass; the
// fusion of the two feeds the text decoder.
class MaskedEncoder {
public:
    MaskedEncoder() = default;
    MaskedEncoder(int d, int heads, int d_ff, int layers, FusionMode mode, Rng& rng)
        : mode_(mode), stack_(d, heads, d_ff, layers, true, rng) {
        if (mode_ == FusionMode::concat_project) proj_ = LinearLayer(2 * d, d, rng);
    }

    TensorPtr first_pass(const TensorPtr& x, const Ctx& ctx) const {
        if (x->shape.empty() || x->shape[0] < 1) throw data_error("first_pass: empty stream");
        return stack_.forward(x, build_causal_mask(x->shape[0]), ctx);
    }

    TensorPtr reencode_once(const TensorPtr& x, const BoundarySet& bs, const Ctx& ctx) const {
        int n = x->shape[0];
        bs.validate(n);
        return stack_.forward(x, build_reencode_once_mask(bs, n), ctx);
    }

    TensorPtr fuse(const TensorPtr& first, const TensorPtr& reencoded) const {
        switch (mode_) {
            case FusionMode::add: return add(first, reencoded);
            case FusionMode::concat_project: return proj_.forward(concat_cols(first, reencoded));
            case FusionMode::reencode_only: return reencoded;
        }
        throw config_error("fuse: unknown fusion mode value");
    }

    // Convenience: both passes plus fusion in one call (training path).
    EncodedStream encode(const TensorPtr& x, const BoundarySet& bs, const Ctx& ctx) const {
        EncodedStream out;
        out.first_pass = first_pass(x, ctx);
        out.reencoded = reencode_once(x, bs, ctx);
        out.fused = fuse(out.first_pass, out.reencoded);
        out.boundaries = bs;
        return out;
    }

    const TransformerEncoder& stack() const { return stack_; }
    FusionMode mode() const { return mode_; }

    std::vector<Param> params(const std::string& prefix) {
        auto p = stack_.params(prefix + ".stack");
        if (mode_ == FusionMode::concat_project)
            for (auto& q : proj_.params(prefix + ".fuse_proj")) p.push_back(q);
        return p;
    }

private:
    FusionMode mode_ = FusionMode::add;
    TransformerEncoder stack_;
    LinearLayer proj_;
};

// Streaming first-pass encoder: appends one frame at a time and re-uses every
// previously computed row. Per layer it stores that layer's input rows; the
// new output row is a one-row attention over them, which matches the batch
// causal encoding bit for bit (causality keeps old rows frozen).
class IncrementalCausalEncoder {
public:
    explicit IncrementalCausalEncoder(const TransformerEncoder& stack)
        : stack_(&stack), d_(stack.width()), bufs_(stack.layers().size() + 1) {}

    // x_row: one projected feature row [1 x d] (positions are added here).
    // Returns the final-layer output row for this frame.
    TensorPtr push(const TensorPtr& x_row) {
        if (x_row->shape != std::vector<int>{1, d_})
            throw dim_error("IncrementalCausalEncoder: expected one row of width " +
                            std::to_string(d_));
        NoGradGuard ng;
        Ctx ctx;
        auto h = stack_->prepare(x_row, ctx, n_);
        append(0, h);
        for (size_t l = 0; l < stack_->layers().size(); ++l) {
            auto rows = make_tensor({n_ + 1, d_}, bufs_[l]);
            h = stack_->layers()[l].forward_last_row(h, rows, ctx);
            append(l + 1, h);
        }
        ++n_;
        return h;
    }

    int size() const { return n_; }

    // Final-layer outputs for all frames pushed so far.
    TensorPtr outputs() const {
        if (n_ == 0) throw data_error("IncrementalCausalEncoder: empty stream");
        return make_tensor({n_, d_}, bufs_.back());
    }

    void reset() {
        n_ = 0;
        for (auto& b : bufs_) b.clear();
    }

private:
    void append(size_t level, const TensorPtr& row) {
        bufs_[level].insert(bufs_[level].end(), row->data.begin(), row->data.end());
    }

    const TransformerEncoder* stack_;
    int d_ = 0;
    int n_ = 0;
    std::vector<std::vector<double>> bufs_;  // per-layer input rows; last = outputs
};

}  // namespace simulseq
