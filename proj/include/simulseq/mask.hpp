#pragma once

#include <vector>

#include "simulseq/common.hpp"

namespace simulseq {

// Boolean attention visibility: entry (i,j) true means query position i may
// attend to key position j. Stored row-major as uint8.
struct AttentionMask {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> allow;

    AttentionMask() = default;
    AttentionMask(int r, int c, bool value = false)
        : rows(r), cols(c), allow(static_cast<size_t>(r) * c, value ? 1 : 0) {}

    bool at(int i, int j) const { return allow[static_cast<size_t>(i) * cols + j] != 0; }
    void set(int i, int j, bool v) { allow[static_cast<size_t>(i) * cols + j] = v ? 1 : 0; }

    bool row_empty(int i) const {
        for (int j = 0; j < cols; ++j)
            if (at(i, j)) return false;
        return true;
    }

    size_t true_count() const {
        size_t n = 0;
        for (uint8_t v : allow) n += v;
        return n;
    }

    bool operator==(const AttentionMask& o) const {
        return rows == o.rows && cols == o.cols && allow == o.allow;
    }
};

// Lower-triangular visibility: each frame sees itself and everything before it.
inline AttentionMask build_causal_mask(int n) {
    if (n < 1) throw dim_error("build_causal_mask: n must be >= 1");
    AttentionMask m(n, n, false);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) m.set(i, j, true);
    return m;
}

// Intra-segment visibility for the single re-encode pass: every frame inside a
// completed segment sees all frames up to that segment's end. Frames after the
// last fired boundary keep causal rows.
inline AttentionMask build_reencode_once_mask(const BoundarySet& boundaries, int n) {
    if (n < 1) throw dim_error("build_reencode_once_mask: n must be >= 1");
    boundaries.validate(n);
    AttentionMask m(n, n, false);
    int seg = 0;
    for (int i = 0; i < n; ++i) {
        int frame = i + 1;
        while (seg < boundaries.count() && boundaries.frames[seg] < frame) ++seg;
        int visible = (seg < boundaries.count()) ? boundaries.frames[seg] : frame;
        for (int j = 0; j < visible; ++j) m.set(i, j, true);
    }
    return m;
}

// Cross-attention visibility for target position t (1-based) under wait-k:
// frames through boundary b_{t+k-1} while the source is live, everything once
// it has finished. A write without enough fired boundaries is a policy bug.
inline AttentionMask build_waitk_cross_mask(int k, const BoundarySet& boundaries, int t,
                                            bool source_finished, int n) {
    if (k < 1 || t < 1) throw dim_error("build_waitk_cross_mask: k and t must be >= 1");
    AttentionMask m(1, n, false);
    if (source_finished) {
        for (int j = 0; j < n; ++j) m.set(0, j, true);
        return m;
    }
    int need = t + k - 1;
    if (need > boundaries.count())
        throw dim_error("build_waitk_cross_mask: write attempted before " +
                        std::to_string(need) + " boundaries fired (policy violation)");
    int visible = boundaries.frames[need - 1];
    for (int j = 0; j < visible; ++j) m.set(0, j, true);
    return m;
}

// Teacher-forced variant over all target positions. Positions whose wait has
// run past the last boundary see the whole (finished) source.
inline AttentionMask build_waitk_cross_mask_teacher_forced(int k, const BoundarySet& boundaries,
                                                           int tgt_len, int n) {
    if (k < 1 || tgt_len < 1) throw dim_error("waitk teacher-forced mask: k, tgt_len must be >= 1");
    boundaries.validate(n);
    AttentionMask m(tgt_len, n, false);
    for (int t = 1; t <= tgt_len; ++t) {
        int need = t + k - 1;
        int visible = (need <= boundaries.count()) ? boundaries.frames[need - 1] : n;
        for (int j = 0; j < visible; ++j) m.set(t - 1, j, true);
    }
    return m;
}

inline AttentionMask full_mask(int rows, int cols) { return AttentionMask(rows, cols, true); }

}  // namespace simulseq
