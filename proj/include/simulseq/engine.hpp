#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "simulseq/metrics.hpp"
#include "simulseq/model.hpp"

namespace simulseq {

// ---------------------------------------------------------------------------
// Attention-pair accounting
// ---------------------------------------------------------------------------

enum class ReencodeStrategy { not_reencode, reencode_once, reencode_every_time };

inline ReencodeStrategy parse_reencode_strategy(const std::string& s) {
    if (s == "not_reencode") return ReencodeStrategy::not_reencode;
    if (s == "reencode_once") return ReencodeStrategy::reencode_once;
    if (s == "reencode_every_time") return ReencodeStrategy::reencode_every_time;
    throw config_error("unknown re-encode strategy '" + s + "'");
}

/// Query-key pairs evaluated by one encoder pass under each strategy. The
/// baseline is the causal pass; re-encode-once touches each segment's frames
/// against everything up to its boundary; re-encode-every-time re-reads all
/// prior frames at every boundary. Frames after the last boundary count
/// causally in both re-encode strategies.
inline int64_t count_attention_pairs(ReencodeStrategy strategy, const BoundarySet& bs, int n) {
    bs.validate(n);
    auto causal_range = [](int64_t from, int64_t to) {  // sum of row lengths j in [from,to]
        return (to * (to + 1) - (from - 1) * from) / 2;
    };
    if (strategy == ReencodeStrategy::not_reencode) return causal_range(1, n);
    int64_t pairs = 0;
    int prev = 0;
    for (int b : bs.frames) {
        if (strategy == ReencodeStrategy::reencode_once)
            pairs += static_cast<int64_t>(b - prev) * b;
        else
            pairs += static_cast<int64_t>(b) * b;
        prev = b;
    }
    pairs += causal_range(prev + 1, n);
    return pairs;
}

// ---------------------------------------------------------------------------
// Beam search
// ---------------------------------------------------------------------------

struct BeamConfig {
    int beam = 3;
    double alpha = -1.0;  // ranking score = logP / len^alpha
};

namespace detail {

struct BeamCand {
    std::vector<int> ids;  // decoder input ids, starts with bos
    double logp = 0.0;
    int generated = 0;
    bool finished = false;
};

inline double beam_rank(double logp, int generated, double alpha) {
    return logp / std::pow(static_cast<double>(std::max(generated, 1)), alpha);
}

// Next-token log-probabilities for a prefix; pad and bos can never be emitted.
inline std::vector<double> next_token_logprobs(const SimulModel& model, const TensorPtr& memory,
                                               const std::vector<int>& ids, const BoundarySet& bs,
                                               bool source_finished) {
    NoGradGuard ng;
    Ctx ctx;
    auto logits = model.decode_logits(ids, memory, bs, source_finished, ctx);
    int V = logits->shape[1];
    std::vector<double> row(logits->data.end() - V, logits->data.end());
    double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double x : row) z += std::exp(x - mx);
    double lz = mx + std::log(z);
    for (auto& x : row) x -= lz;
    row[Vocabulary::kPad] = -std::numeric_limits<double>::infinity();
    row[Vocabulary::kBos] = -std::numeric_limits<double>::infinity();
    return row;
}

}  // namespace detail

/// Complete a prefix with full source visibility. Returns the generated
/// tokens after the prefix (eos excluded). Hypotheses that emit eos compete
/// with still-active ones in the final ranking; hitting the length cap
/// force-terminates.
inline std::vector<int> beam_complete(const SimulModel& model, const TensorPtr& memory,
                                      const std::vector<int>& prefix_ids, const BoundarySet& bs,
                                      int max_new_tokens, const BeamConfig& beam_cfg) {
    if (beam_cfg.beam < 1) throw config_error("beam_complete: beam must be >= 1");
    std::vector<detail::BeamCand> active{{prefix_ids, 0.0, 0, false}};
    std::vector<detail::BeamCand> finished;
    for (int step = 0; step < max_new_tokens && !active.empty(); ++step) {
        std::vector<detail::BeamCand> expanded;
        for (const auto& cand : active) {
            auto lp = detail::next_token_logprobs(model, memory, cand.ids, bs, true);
            // Only the top `beam` extensions of one candidate can survive.
            std::vector<int> order(lp.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
            std::partial_sort(order.begin(),
                              order.begin() + std::min<size_t>(order.size(),
                                                               static_cast<size_t>(beam_cfg.beam)),
                              order.end(), [&](int a, int b) { return lp[a] > lp[b]; });
            for (int e = 0; e < beam_cfg.beam && e < static_cast<int>(order.size()); ++e) {
                int tok = order[static_cast<size_t>(e)];
                if (lp[static_cast<size_t>(tok)] == -std::numeric_limits<double>::infinity())
                    continue;
                detail::BeamCand next = cand;
                next.logp += lp[static_cast<size_t>(tok)];
                next.generated += 1;
                if (tok == Vocabulary::kEos) {
                    next.finished = true;
                    finished.push_back(std::move(next));
                } else {
                    next.ids.push_back(tok);
                    expanded.push_back(std::move(next));
                }
            }
        }
        std::sort(expanded.begin(), expanded.end(),
                  [](const detail::BeamCand& a, const detail::BeamCand& b) {
                      return a.logp > b.logp;
                  });
        if (static_cast<int>(expanded.size()) > beam_cfg.beam) expanded.resize(beam_cfg.beam);
        active = std::move(expanded);
    }
    for (auto& cand : active) finished.push_back(std::move(cand));  // force-terminated
    if (finished.empty()) return {};
    const detail::BeamCand* best = &finished[0];
    for (const auto& cand : finished)
        if (detail::beam_rank(cand.logp, cand.generated, beam_cfg.alpha) >
            detail::beam_rank(best->logp, best->generated, beam_cfg.alpha))
            best = &cand;
    return {best->ids.begin() + static_cast<ptrdiff_t>(prefix_ids.size()), best->ids.end()};
}

// ---------------------------------------------------------------------------
// Streaming wait-k engine
// ---------------------------------------------------------------------------

struct StreamResult {
    std::vector<int> tokens;  // emitted content tokens, in order
    EmissionLog log;
    BoundarySet boundaries;
    int streaming_tokens = 0;  // emitted before the source ended (pre-tail)
};

/// Run one stream through the wait-k read/write loop: read frames into the
/// incremental causal encoder and the boundary accumulator; whenever enough
/// boundaries have fired for the next target position, re-encode the prefix,
/// fuse, and greedily emit; after the last frame, fire the tail rule and
/// finish in the non-simultaneous state with beam search.
inline StreamResult run_simultaneous(const SimulModel& model, const std::vector<double>& feats,
                                     int frames, int k, const std::string& stream_id = "stream",
                                     double frame_interval = 1.0, BeamConfig beam_cfg = {}) {
    if (k < 1) throw config_error("run_simultaneous: k must be >= 1");
    if (frames < 1) throw data_error("run_simultaneous: empty stream");
    if (static_cast<int>(feats.size()) != frames * model.cfg.feat_dim)
        throw config_error("run_simultaneous: stream width does not match model");
    NoGradGuard ng;
    Ctx ctx;

    StreamResult out;
    out.log.id = stream_id;
    out.log.total_frames = frames;
    out.log.frame_interval = frame_interval;

    IncrementalCausalEncoder inc(model.encoder.stack());
    IfAccumulator acc(model.cfg.threshold);
    BoundarySet static_bs;
    if (!model.has_predictor()) static_bs = static_segment(frames, model.cfg.static_rate);
    size_t next_static = 0;

    std::vector<double> projected;  // prefix of projected rows for re-encoding
    projected.reserve(feats.size() / model.cfg.feat_dim * model.cfg.d);
    std::vector<int> prefix_ids{Vocabulary::kBos};
    bool eos_seen = false;
    double last_w = 0.0;

    auto boundaries_now = [&]() -> const BoundarySet& {
        return model.has_predictor() ? acc.boundaries() : static_bs;
    };
    auto fused_prefix = [&](int f, const BoundarySet& bs) {
        auto x = make_tensor({f, model.cfg.d},
                             std::vector<double>(projected.begin(),
                                                 projected.begin() + static_cast<ptrdiff_t>(
                                                                         f * model.cfg.d)));
        auto first = inc.outputs();
        if (!model.cfg.use_reencode) return first;
        auto re = model.encoder.reencode_once(x, bs, ctx);
        return model.encoder.fuse(first, re);
    };

    for (int f = 1; f <= frames; ++f) {
        auto xrow = model.project_row(feats.data() + static_cast<size_t>(f - 1) *
                                                         model.cfg.feat_dim);
        projected.insert(projected.end(), xrow->data.begin(), xrow->data.end());
        auto hrow = inc.push(xrow);

        bool fired = false;
        if (model.has_predictor()) {
            last_w = model.predictor.forward(hrow)->data[0];
            fired = acc.push(last_w);
        } else if (next_static < static_bs.frames.size() &&
                   static_bs.frames[next_static] == f) {
            ++next_static;
            fired = true;
        }
        if (!fired || eos_seen) continue;

        BoundarySet visible = boundaries_now();
        if (!model.has_predictor()) {  // only the schedule entries reached so far are known
            visible.frames.resize(next_static);
            visible.remainder.resize(next_static);
            visible.within.resize(next_static);
        }
        int fired_count = visible.count();
        // Wait-k gate: emitting token t requires t+k-1 fired boundaries.
        while (!eos_seen && fired_count >= static_cast<int>(out.tokens.size()) + k) {
            auto fused = fused_prefix(f, visible);
            auto lp = detail::next_token_logprobs(model, fused, prefix_ids, visible, false);
            int tok = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
            if (tok == Vocabulary::kEos) {
                eos_seen = true;
                break;
            }
            out.tokens.push_back(tok);
            prefix_ids.push_back(tok);
            out.log.tokens.push_back({tok, f, fired_count});
        }
    }
    out.streaming_tokens = static_cast<int>(out.tokens.size());

    if (model.has_predictor()) acc.finalize(last_w);
    out.boundaries = model.has_predictor() ? acc.boundaries() : static_bs;

    if (!eos_seen) {
        auto fused = fused_prefix(frames, out.boundaries);
        int cap = 3 * out.boundaries.count() + 10 - static_cast<int>(out.tokens.size());
        if (cap > 0) {
            auto tail = beam_complete(model, fused, prefix_ids, out.boundaries, cap, beam_cfg);
            for (int tok : tail) {
                out.tokens.push_back(tok);
                out.log.tokens.push_back({tok, frames, out.boundaries.count()});
            }
        }
    }
    return out;
}

/// Offline (teacher-style) decoding: encode everything, beam-decode with full
/// visibility. Works for teacher-mode models and as a non-simultaneous upper
/// bound for streaming ones.
inline std::vector<int> run_offline(const SimulModel& model, const std::vector<double>& feats,
                                    int frames, BeamConfig beam_cfg = {}) {
    NoGradGuard ng;
    Ctx ctx;
    auto x = model.project(feats, frames);
    auto first = model.encode_base(x, ctx);
    TensorPtr fused = first;
    BoundarySet bs;
    if (!model.cfg.teacher_mode) {
        NoGradGuard ng2;
        if (model.has_predictor()) {
            auto w = model.predictor.forward(first);
            bs = scan_boundaries(w->data, model.cfg.threshold, true);
        } else {
            bs = static_segment(frames, model.cfg.static_rate);
        }
        if (model.cfg.use_reencode) {
            auto re = model.encoder.reencode_once(x, bs, ctx);
            fused = model.encoder.fuse(first, re);
        }
    }
    return beam_complete(model, fused, {Vocabulary::kBos}, bs, frames + 10, beam_cfg);
}

// Greedy 1-1 matching of predicted to reference boundary frames within a
// tolerance; returns F1 (predicted and reference both sorted ascending).
inline double boundary_f1(const std::vector<int>& predicted, const std::vector<int>& reference,
                          int tolerance) {
    if (predicted.empty() && reference.empty()) return 1.0;
    if (predicted.empty() || reference.empty()) return 0.0;
    size_t i = 0, j = 0;
    int matches = 0;
    while (i < predicted.size() && j < reference.size()) {
        int d = predicted[i] - reference[j];
        if (std::abs(d) <= tolerance) {
            ++matches;
            ++i;
            ++j;
        } else if (d < 0) {
            ++i;
        } else {
            ++j;
        }
    }
    double p = static_cast<double>(matches) / static_cast<double>(predicted.size());
    double r = static_cast<double>(matches) / static_cast<double>(reference.size());
    return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
}

}  // namespace simulseq
