#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "simulseq/engine.hpp"
#include "simulseq/model.hpp"
#include "simulseq/optim.hpp"
#include "simulseq/teacher_logits.hpp"

namespace simulseq {

// ---------------------------------------------------------------------------
// Corpus evaluation
// ---------------------------------------------------------------------------

struct CorpusEval {
    BleuResult bleu;
    double rouge_l = 0.0;
    double mean_al = 0.0;
    double mean_ap = 0.0;
    double boundary_f1 = 0.0;
    double token_acc = 0.0;
    int samples = 0;
    std::vector<EmissionLog> logs;
};

/// Teacher-forced next-token accuracy plus per-term dev losses (no dropout,
/// no gradients).
inline double teacher_forced_accuracy(const SimulModel& model, const std::vector<Sample>& split,
                                      int limit = 0) {
    NoGradGuard ng;
    Ctx eval_ctx;
    int n = limit > 0 ? std::min<int>(limit, static_cast<int>(split.size()))
                      : static_cast<int>(split.size());
    int64_t tokens = 0, correct = 0;
    for (int i = 0; i < n; ++i) {
        auto bd = model.forward_train(split[static_cast<size_t>(i)], nullptr, eval_ctx, eval_ctx);
        tokens += bd.tokens;
        correct += bd.correct;
    }
    return tokens > 0 ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0;
}

/// Stream every sample through the wait-k engine and score the transcripts.
/// Streams that end with no emitted tokens contribute the worst-case latency
/// (AL = |X|*T_s, AP = 1) instead of being dropped.
inline CorpusEval evaluate_streaming(const SimulModel& model, const std::vector<Sample>& split,
                                     int k, double frame_interval = 1.0, int limit = 0,
                                     bool keep_logs = false, BeamConfig beam_cfg = {}) {
    CorpusEval ev;
    int n = limit > 0 ? std::min<int>(limit, static_cast<int>(split.size()))
                      : static_cast<int>(split.size());
    std::vector<std::vector<int>> hyps, refs;
    double al_sum = 0.0, ap_sum = 0.0, f1_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto& s = split[static_cast<size_t>(i)];
        auto res = run_simultaneous(model, s.feats, s.frames, k, s.id, frame_interval, beam_cfg);
        hyps.push_back(res.tokens);
        refs.push_back(s.text);
        if (res.log.tokens.empty()) {
            al_sum += s.frames * frame_interval;
            ap_sum += 1.0;
        } else {
            al_sum += average_lagging(res.log, static_cast<int>(s.text.size()));
            ap_sum += average_proportion(res.log);
        }
        f1_sum += boundary_f1(res.boundaries.frames, s.boundaries, 2);
        if (keep_logs) ev.logs.push_back(res.log);
    }
    ev.samples = n;
    if (n > 0) {
        ev.bleu = bleu_corpus(hyps, refs);
        ev.rouge_l = rouge_l_f1(hyps, refs);
        ev.mean_al = al_sum / n;
        ev.mean_ap = ap_sum / n;
        ev.boundary_f1 = f1_sum / n;
    }
    ev.token_acc = teacher_forced_accuracy(model, split, limit);
    return ev;
}

/// Offline beam decoding over a split (for teacher models / k = infinity
/// rows). Latency fields are fixed at the non-simultaneous worst case.
inline CorpusEval evaluate_offline(const SimulModel& model, const std::vector<Sample>& split,
                                   double frame_interval = 1.0, int limit = 0,
                                   BeamConfig beam_cfg = {}) {
    CorpusEval ev;
    int n = limit > 0 ? std::min<int>(limit, static_cast<int>(split.size()))
                      : static_cast<int>(split.size());
    std::vector<std::vector<int>> hyps, refs;
    double al_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto& s = split[static_cast<size_t>(i)];
        hyps.push_back(run_offline(model, s.feats, s.frames, beam_cfg));
        refs.push_back(s.text);
        al_sum += s.frames * frame_interval;
    }
    ev.samples = n;
    if (n > 0) {
        ev.bleu = bleu_corpus(hyps, refs);
        ev.rouge_l = rouge_l_f1(hyps, refs);
        ev.mean_al = al_sum / n;
        ev.mean_ap = 1.0;
    }
    ev.token_acc = teacher_forced_accuracy(model, split, limit);
    return ev;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    int max_steps = 2000;
    int batch_size = 16;
    int warmup_steps = 0;      // linear lr ramp; 0 disables
    bool cosine_decay = false;  // cosine-anneal lr to 10% over max_steps
    int decay_start = 0;        // hold full lr until this step before annealing
    Adam::Options optim;
    PlateauSchedule::Options plateau;
    LossWeights loss_weights;
    int eval_every = 100;
    int eval_dev_limit = 0;  // 0 = whole dev split
    uint64_t shuffle_seed = 99;
    double frame_interval = 1.0;
    bool stream_eval = true;  // teacher models evaluate offline instead
    BeamConfig beam;
};

struct EvalStats {
    int step = 0;
    double token_acc = 0.0;
    double bleu4 = 0.0;
    double boundary_f1 = 0.0;
    double mean_al = 0.0;
    double mean_ap = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    int steps_run = 0;
    int best_step = -1;
    double best_bleu4 = 0.0;
    bool stopped_early = false;    // stop_when fired
    bool plateau_stopped = false;  // lr decayed under the floor
    std::vector<EvalStats> history;
};

using StopPredicate = std::function<bool(const EvalStats&)>;

namespace detail {

inline void shuffle_indices(std::vector<int>& ix, Rng& rng) {
    for (size_t i = ix.size(); i > 1; --i)
        std::swap(ix[i - 1], ix[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
}

inline double term_value(const TensorPtr& t) { return t ? t->value() : 0.0; }

}  // namespace detail

/// Optimize the model on the train split with gradient accumulation over each
/// batch, periodic dev evaluation, plateau-driven learning-rate decay on dev
/// BLEU-4, and best/final checkpointing under out_dir. On numeric failure the
/// last best checkpoint is already on disk; the error propagates.
inline TrainResult train_model(SimulModel& model, const Dataset& data, const TrainConfig& cfg,
                               const std::filesystem::path& out_dir,
                               const TeacherLogitStore* kd = nullptr,
                               const StopPredicate& stop_when = nullptr, bool quiet = false) {
    if (cfg.batch_size < 1) throw config_error("train: batch_size must be >= 1");
    if (data.train.empty()) throw data_error("train: empty training split");
    if (kd) {
        if (kd->vocab != model.cfg.text_vocab_size)
            throw config_error("train: teacher logit vocab does not match model");
        for (const auto& s : data.train)
            if (!kd->find(s.id))
                throw data_error("train: no teacher logits for sample '" + s.id + "'");
    }
    std::filesystem::create_directories(out_dir);
    std::ofstream step_csv(out_dir / "steps.csv");
    step_csv << "step,ctc,if,soft,hard,total,lr\n";
    std::ofstream eval_csv(out_dir / "eval.csv");
    eval_csv << "step,token_acc,bleu4,boundary_f1,al,ap,lr\n";

    Adam optimizer(model.params(), cfg.optim);
    PlateauSchedule schedule(cfg.plateau);
    double sched_lr = cfg.optim.lr;  // plateau-decayed base; warmup ramps onto it
    Rng rng(cfg.shuffle_seed);
    Ctx ctx_enc{true, model.cfg.dropout_enc, &rng};
    Ctx ctx_dec{true, model.cfg.dropout_dec, &rng};

    std::vector<int> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    size_t cursor = order.size();  // forces a shuffle before the first batch

    TrainResult result;
    auto run_eval = [&](int step) {
        CorpusEval ev = cfg.stream_eval
                            ? evaluate_streaming(model, data.dev, model.cfg.k,
                                                 cfg.frame_interval, cfg.eval_dev_limit, false,
                                                 cfg.beam)
                            : evaluate_offline(model, data.dev, cfg.frame_interval,
                                               cfg.eval_dev_limit, cfg.beam);
        EvalStats st{step,       ev.token_acc, ev.bleu.bleu[3], ev.boundary_f1,
                     ev.mean_al, ev.mean_ap,   optimizer.lr()};
        result.history.push_back(st);
        eval_csv << step << ',' << st.token_acc << ',' << st.bleu4 << ',' << st.boundary_f1
                 << ',' << st.mean_al << ',' << st.mean_ap << ',' << st.lr << '\n';
        eval_csv.flush();
        if (!quiet)
            std::fprintf(stderr, "step %5d  acc %.4f  bleu4 %.2f  bf1 %.3f  lr %.2e\n", step,
                         st.token_acc, st.bleu4, st.boundary_f1, st.lr);
        if (st.bleu4 > result.best_bleu4 || result.best_step < 0) {
            result.best_bleu4 = st.bleu4;
            result.best_step = step;
            save_model(model, out_dir / "best.ckpt");
        }
        double factor = schedule.observe(st.bleu4);
        if (factor != 1.0) sched_lr *= factor;
        return st;
    };

    for (int step = 1; step <= cfg.max_steps; ++step) {
        double ramp = cfg.warmup_steps > 0
                          ? std::min(1.0, static_cast<double>(step) / cfg.warmup_steps)
                          : 1.0;
        if (cfg.cosine_decay && step > cfg.decay_start && cfg.max_steps > cfg.decay_start) {
            double prog = static_cast<double>(step - cfg.decay_start) /
                          static_cast<double>(cfg.max_steps - cfg.decay_start);
            ramp *= 0.1 + 0.45 * (1.0 + std::cos(M_PI * prog));
        }
        optimizer.set_lr(sched_lr * ramp);
        optimizer.zero_grad();
        double sums[5] = {0, 0, 0, 0, 0};
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor >= order.size()) {
                detail::shuffle_indices(order, rng);
                cursor = 0;
            }
            const auto& sample = data.train[static_cast<size_t>(order[cursor++])];
            const std::vector<std::vector<double>>* rows = kd ? kd->find(sample.id) : nullptr;
            auto bd = model.forward_train(sample, rows, ctx_enc, ctx_dec);
            auto total = total_loss(bd.ctc, bd.if_, bd.soft, bd.hard, cfg.loss_weights);
            sums[0] += detail::term_value(bd.ctc);
            sums[1] += detail::term_value(bd.if_);
            sums[2] += detail::term_value(bd.soft);
            sums[3] += detail::term_value(bd.hard);
            sums[4] += total->value();
            mul_scalar(total, 1.0 / cfg.batch_size)->backward();
        }
        optimizer.step();
        result.steps_run = step;
        step_csv << step;
        for (double s : sums) step_csv << ',' << s / cfg.batch_size;
        step_csv << ',' << optimizer.lr() << '\n';

        if (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
            auto st = run_eval(step);
            if (stop_when && stop_when(st)) {
                result.stopped_early = true;
                break;
            }
            if (schedule.should_stop(sched_lr)) {
                result.plateau_stopped = true;
                break;
            }
        }
    }
    if (result.history.empty() || result.history.back().step != result.steps_run)
        run_eval(result.steps_run);
    save_model(model, out_dir / "final.ckpt");
    if (result.best_step < 0) save_model(model, out_dir / "best.ckpt");
    return result;
}

}  // namespace simulseq
