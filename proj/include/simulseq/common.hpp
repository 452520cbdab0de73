#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace simulseq {

// Error categories mapped to CLI exit codes (config=2, data=3, numeric=4).
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct data_error : std::runtime_error {
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};
// Shape/contract violations. These indicate caller bugs, not user input.
struct dim_error : std::invalid_argument {
    explicit dim_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// Fired segment boundaries of an integrate-and-fire pass.
//
// `frames[j]` is the 1-based count of frames up to and including the firing
// frame, so a boundary at frames[j]=3 means the third frame crossed the
// threshold. `remainder[j]` is the weight carried into the next accumulation
// and `within[j]` the part consumed by this boundary; both refer to the
// firing frame's weight, so within[j] + remainder[j] equals that weight.
struct BoundarySet {
    std::vector<int> frames;
    std::vector<double> remainder;
    std::vector<double> within;
    double threshold = 1.0;
    // True when the last boundary was forced at stream end by the residual
    // rule rather than by a threshold crossing (its remainder is 0).
    bool tail_forced = false;

    int count() const { return static_cast<int>(frames.size()); }
    bool empty() const { return frames.empty(); }
    int last_frame() const { return frames.empty() ? 0 : frames.back(); }

    void validate(int stream_len) const {
        int prev = 0;
        for (int b : frames) {
            if (b <= prev) throw dim_error("BoundarySet: frame indices must be strictly increasing");
            prev = b;
        }
        if (prev > stream_len) throw dim_error("BoundarySet: boundary beyond stream length");
    }
};

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace simulseq
