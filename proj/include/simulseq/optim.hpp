#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "simulseq/tensor.hpp"

namespace simulseq {

// Named parameter handle used by the optimizer and checkpoint code.
struct Param {
    std::string name;
    TensorPtr tensor;
};

// Adam with decoupled weight decay. Bias correction follows the standard
// first/second moment scheme; decay is applied directly to the weights and
// never enters the moment estimates.
class Adam {
public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.998;
        double eps = 1e-8;
        double weight_decay = 1e-3;
    };

    Adam(std::vector<Param> params, Options opt) : params_(std::move(params)), opt_(opt) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].tensor->data.size(), 0.0);
            v_[i].assign(params_[i].tensor->data.size(), 0.0);
        }
    }

    double lr() const { return opt_.lr; }
    void set_lr(double lr) { opt_.lr = lr; }
    int64_t step_count() const { return t_; }

    void zero_grad() {
        for (auto& p : params_) p.tensor->zero_grad();
    }

    // One update from the currently accumulated gradients. A non-finite
    // gradient is a hard failure: it names the parameter and dies rather
    // than quietly poisoning the moments.
    void step() {
        ++t_;
        double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& t = *params_[i].tensor;
            if (t.grad.size() != t.data.size()) continue;  // parameter unused this step
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < t.data.size(); ++j) {
                double g = t.grad[j];
                if (!std::isfinite(g))
                    throw numeric_error("Adam: non-finite gradient in parameter '" +
                                        params_[i].name + "' at index " + std::to_string(j));
                m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g;
                v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g * g;
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                t.data[j] -= opt_.lr * (mhat / (std::sqrt(vhat) + opt_.eps) +
                                        opt_.weight_decay * t.data[j]);
            }
        }
    }

    const std::vector<Param>& params() const { return params_; }

private:
    std::vector<Param> params_;
    Options opt_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

// Reduce-on-plateau for a higher-is-better validation metric. After
// `patience` consecutive evaluations without improvement the rate is
// multiplied by `factor`; training should stop once the rate drops below
// `min_lr`.
class PlateauSchedule {
public:
    struct Options {
        double factor = 0.5;
        int patience = 9;
        double min_lr = 1e-7;
        double eps = 1e-9;  // improvement smaller than this does not count
    };

    PlateauSchedule() = default;
    explicit PlateauSchedule(Options opt) : opt_(opt) {}

    // Feed one evaluation result; returns the factor to apply to the current
    // learning rate (1.0 almost always, `factor` on plateau).
    double observe(double metric) {
        if (metric > best_ + opt_.eps) {
            best_ = metric;
            bad_ = 0;
            return 1.0;
        }
        if (++bad_ > opt_.patience) {
            bad_ = 0;
            return opt_.factor;
        }
        return 1.0;
    }

    bool should_stop(double lr) const { return lr < opt_.min_lr; }
    double best() const { return best_; }

private:
    Options opt_;
    double best_ = -std::numeric_limits<double>::infinity();
    int bad_ = 0;
};

}  // namespace simulseq
