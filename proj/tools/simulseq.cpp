// Command-line front end: data generation, training (student / teacher /
// distilled), evaluation sweeps over k, and ablation tables. All outputs are
// CSV (metrics) or JSON-lines (emission logs).

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "simulseq/simulseq.hpp"

namespace fs = std::filesystem;
using namespace simulseq;

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << v;
    return os.str();
}

constexpr const char* kEvalHeader =
    "model,k,bleu1,bleu2,bleu3,bleu4,rouge_l,al,ap,token_acc,boundary_f1,samples\n";

void write_eval_row(std::ostream& out, const std::string& name, const std::string& k,
                    const CorpusEval& ev) {
    out << name << ',' << k;
    for (int i = 0; i < 4; ++i) out << ',' << fmt(ev.bleu.bleu[i]);
    out << ',' << fmt(ev.rouge_l) << ',' << fmt(ev.mean_al) << ',' << fmt(ev.mean_ap) << ','
        << fmt(ev.token_acc) << ',' << fmt(ev.boundary_f1) << ',' << ev.samples << '\n';
}

const std::vector<Sample>& pick_split(const Dataset& ds, const std::string& name) {
    if (name == "train") return ds.train;
    if (name == "dev") return ds.dev;
    if (name == "test") return ds.test;
    throw config_error("unknown split '" + name + "'");
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenArgs {
    std::string out;
    int n_train = 2000, n_dev = 200, n_test = 200;
    SyntheticSpec spec;
};

int cmd_gen_data(const GenArgs& a) {
    auto ds = generate_corpus(a.spec, a.n_train, a.n_dev, a.n_test);
    save_dataset(ds, a.out);
    int64_t frames = 0, glosses = 0;
    for (const auto& s : ds.train) {
        frames += s.frames;
        glosses += static_cast<int64_t>(s.gloss.size());
    }
    std::cout << "dataset written to " << a.out << "\n"
              << "  train/dev/test: " << ds.train.size() << "/" << ds.dev.size() << "/"
              << ds.test.size() << "\n"
              << "  train frames: " << frames << ", glosses: " << glosses << "\n"
              << "  static rate (frames per gloss): " << fmt(ds.static_rate) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train / train-teacher
// ---------------------------------------------------------------------------

int cmd_train(ExperimentConfig cfg, bool teacher, bool quiet) {
    if (cfg.data_dir.empty()) throw config_error("train: --data is required");
    auto ds = load_dataset(cfg.data_dir);
    bind_model_to_dataset(cfg.model, ds);
    cfg.model.teacher_mode = teacher;
    cfg.model.validate();
    if (teacher) cfg.train.stream_eval = false;

    TeacherLogitStore kd;
    bool use_kd = !cfg.teacher_logits.empty();
    if (use_kd) {
        if (teacher) throw config_error("train: teacher training cannot use distillation");
        if (!fs::exists(cfg.teacher_logits))
            throw config_error("train: teacher logit file not found: " + cfg.teacher_logits);
        kd = load_teacher_logits(cfg.teacher_logits);
    }

    fs::create_directories(cfg.out_dir);
    {
        std::ofstream cf(fs::path(cfg.out_dir) / "config.json");
        cf << nlohmann::json(cfg).dump(2) << "\n";
    }
    SimulModel model(cfg.model);
    auto result = train_model(model, ds, cfg.train, cfg.out_dir, use_kd ? &kd : nullptr,
                              nullptr, quiet);
    nlohmann::json summary{{"steps_run", result.steps_run},
                           {"best_step", result.best_step},
                           {"best_bleu4", result.best_bleu4},
                           {"plateau_stopped", result.plateau_stopped}};
    std::ofstream(fs::path(cfg.out_dir) / "result.json") << summary.dump(2) << "\n";
    std::cout << "trained " << result.steps_run << " steps; best dev BLEU-4 "
              << fmt(result.best_bleu4) << " at step " << result.best_step << "\n"
              << "checkpoints under " << cfg.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// distill
// ---------------------------------------------------------------------------

int cmd_distill(const std::string& data_dir, const std::string& teacher_ckpt,
                const std::string& out_file, const std::string& split, double gamma) {
    auto ds = load_dataset(data_dir);
    auto teacher = load_model(teacher_ckpt);
    if (teacher.cfg.text_vocab_size != ds.vocab().text_size())
        throw config_error("distill: teacher text vocab does not match dataset");
    if (teacher.cfg.feat_dim != ds.spec.feat_dim)
        throw config_error("distill: teacher feature width does not match dataset");
    const auto& samples = pick_split(ds, split);
    TeacherLogitStore store;
    store.gamma = gamma;
    store.vocab = teacher.cfg.text_vocab_size;
    for (const auto& s : samples) store.add(s.id, teacher.teacher_forced_logits(s));
    if (auto dir = fs::path(out_file).parent_path(); !dir.empty()) fs::create_directories(dir);
    save_teacher_logits(out_file, store);
    std::cout << "wrote logits for " << store.order.size() << " samples to " << out_file << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval / sweep-k
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string data_dir, model_ckpt, csv, split = "test", teacher_ckpt, logs_dir;
    std::vector<int> ks;
    double frame_interval = 1.0;
    BeamConfig beam;
};

int cmd_eval(const EvalArgs& a) {
    auto ds = load_dataset(a.data_dir);
    const auto& samples = pick_split(ds, a.split);
    if (auto dir = fs::path(a.csv).parent_path(); !dir.empty()) fs::create_directories(dir);
    std::ofstream csv(a.csv);
    csv << kEvalHeader;
    if (!a.model_ckpt.empty()) {
        auto model = load_model(a.model_ckpt);
        if (model.cfg.feat_dim != ds.spec.feat_dim)
            throw config_error("eval: model feature width does not match dataset");
        auto ks = a.ks.empty() ? std::vector<int>{model.cfg.k} : a.ks;
        std::string name = fs::path(a.model_ckpt).stem().string();
        for (int k : ks) {
            bool keep_logs = !a.logs_dir.empty();
            auto ev = evaluate_streaming(model, samples, k, a.frame_interval, 0, keep_logs,
                                         a.beam);
            write_eval_row(csv, name, std::to_string(k), ev);
            if (keep_logs) {
                fs::create_directories(a.logs_dir);
                save_emission_logs(ev.logs,
                                   fs::path(a.logs_dir) / ("emissions-k" + std::to_string(k) +
                                                           ".jsonl"));
            }
            std::cout << "k=" << k << "  BLEU-4 " << fmt(ev.bleu.bleu[3]) << "  AL "
                      << fmt(ev.mean_al) << "  AP " << fmt(ev.mean_ap) << "\n";
        }
    }
    if (!a.teacher_ckpt.empty()) {
        auto teacher = load_model(a.teacher_ckpt);
        auto ev = evaluate_offline(teacher, samples, a.frame_interval, 0, a.beam);
        write_eval_row(csv, fs::path(a.teacher_ckpt).stem().string(), "inf", ev);
        std::cout << "k=inf  BLEU-4 " << fmt(ev.bleu.bleu[3]) << "\n";
    }
    std::cout << "metrics written to " << a.csv << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateArgs {
    std::string data_dir, out_dir;
    int k = 3, steps = 600, batch = 8, teacher_steps = 0, eval_dev_limit = 100;
    uint64_t shuffle_seed = 99, init_seed = 7;
    double lr = 1e-3;
    std::string split = "test";
};

struct AblateRow {
    std::string name;
    bool predictor, ctc, kd, reencode;
};

int cmd_ablate(const AblateArgs& a) {
    auto ds = load_dataset(a.data_dir);
    fs::create_directories(a.out_dir);

    auto base_cfg = [&](bool teacher) {
        ExperimentConfig cfg;
        cfg.data_dir = a.data_dir;
        bind_model_to_dataset(cfg.model, ds);
        cfg.model.k = a.k;
        cfg.model.teacher_mode = teacher;
        cfg.model.init_seed = a.init_seed;
        cfg.train.max_steps = teacher && a.teacher_steps > 0 ? a.teacher_steps : a.steps;
        cfg.train.batch_size = a.batch;
        cfg.train.optim.lr = a.lr;
        cfg.train.shuffle_seed = a.shuffle_seed;
        cfg.train.eval_dev_limit = a.eval_dev_limit;
        cfg.train.stream_eval = !teacher;
        return cfg;
    };

    // Distillation needs a teacher: train it once, record its logits.
    std::string kd_file = (fs::path(a.out_dir) / "teacher.logits").string();
    {
        auto cfg = base_cfg(true);
        cfg.out_dir = (fs::path(a.out_dir) / "teacher").string();
        SimulModel teacher(cfg.model);
        train_model(teacher, ds, cfg.train, cfg.out_dir, nullptr, nullptr, true);
        TeacherLogitStore store;
        store.gamma = cfg.model.kd_gamma;
        store.vocab = cfg.model.text_vocab_size;
        for (const auto& s : ds.train) store.add(s.id, teacher.teacher_forced_logits(s));
        save_teacher_logits(kd_file, store);
        std::cout << "teacher trained; logits at " << kd_file << "\n";
    }
    auto kd = load_teacher_logits(kd_file);

    const std::vector<AblateRow> rows{{"native", false, false, false, false},
                                      {"bp", true, false, false, false},
                                      {"bp_ctc", true, true, false, false},
                                      {"full", true, true, true, true}};
    std::ofstream csv(fs::path(a.out_dir) / "ablate.csv");
    csv << "row,k,steps,seed," << (kEvalHeader + 8);  // shared tail of the eval schema
    for (const auto& row : rows) {
        auto cfg = base_cfg(false);
        cfg.model.use_boundary_predictor = row.predictor;
        cfg.model.use_ctc = row.ctc;
        cfg.model.use_reencode = row.reencode;
        cfg.out_dir = (fs::path(a.out_dir) / row.name).string();
        SimulModel model(cfg.model);
        train_model(model, ds, cfg.train, cfg.out_dir, row.kd ? &kd : nullptr, nullptr, true);
        auto best = load_model(fs::path(cfg.out_dir) / "best.ckpt");
        auto ev = evaluate_streaming(best, pick_split(ds, a.split), a.k);
        csv << row.name << ',' << a.k << ',' << cfg.train.max_steps << ',' << a.shuffle_seed;
        for (int i = 0; i < 4; ++i) csv << ',' << fmt(ev.bleu.bleu[i]);
        csv << ',' << fmt(ev.rouge_l) << ',' << fmt(ev.mean_al) << ',' << fmt(ev.mean_ap) << ','
            << fmt(ev.token_acc) << ',' << fmt(ev.boundary_f1) << ',' << ev.samples << '\n';
        std::cout << row.name << "  BLEU-4 " << fmt(ev.bleu.bleu[3]) << "  AL "
                  << fmt(ev.mean_al) << "\n";
    }
    std::cout << "ablation table at " << (fs::path(a.out_dir) / "ablate.csv").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"simulseq: simultaneous sequence-to-sequence translation engine"};
    app.require_subcommand(1);
    std::function<int()> run;

    // gen-data ---------------------------------------------------------------
    auto gen_args = std::make_shared<GenArgs>();
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic streaming corpus");
    gen->add_option("--out", gen_args->out, "output dataset directory")->required();
    gen->add_option("--train", gen_args->n_train, "training samples");
    gen->add_option("--dev", gen_args->n_dev, "dev samples");
    gen->add_option("--test", gen_args->n_test, "test samples");
    gen->add_option("--feat-dim", gen_args->spec.feat_dim, "source feature width");
    gen->add_option("--gloss-vocab", gen_args->spec.gloss_vocab, "content gloss count");
    gen->add_option("--text-vocab", gen_args->spec.text_vocab, "total text vocab");
    gen->add_option("--seg-min", gen_args->spec.seg_min, "min frames per segment");
    gen->add_option("--seg-max", gen_args->spec.seg_max, "max frames per segment");
    gen->add_option("--sent-min", gen_args->spec.sent_min, "min glosses per sentence");
    gen->add_option("--sent-max", gen_args->spec.sent_max, "max glosses per sentence");
    gen->add_option("--reorder", gen_args->spec.reorder, "adjacent_swap | rotate | identity");
    gen->add_option("--noise", gen_args->spec.noise, "frame noise sigma");
    gen->add_option("--seed", gen_args->spec.seed, "corpus seed");
    gen->callback([&run, gen_args] { run = [gen_args] { return cmd_gen_data(*gen_args); }; });

    // train / train-teacher ---------------------------------------------------
    auto add_train_cmd = [&](const char* name, const char* help, bool teacher) {
        auto cfg = std::make_shared<ExperimentConfig>();
        auto cfg_file = std::make_shared<std::string>();
        auto static_seg = std::make_shared<bool>(false);
        auto no_ctc = std::make_shared<bool>(false);
        auto no_reencode = std::make_shared<bool>(false);
        auto quiet = std::make_shared<bool>(false);
        auto* c = app.add_subcommand(name, help);
        c->add_option("--config", *cfg_file, "JSON experiment config (flags override)");
        c->add_option("--data", cfg->data_dir, "dataset directory");
        c->add_option("--out", cfg->out_dir, "run output directory");
        c->add_option("--steps", cfg->train.max_steps, "optimizer step budget");
        c->add_option("--batch", cfg->train.batch_size, "batch size");
        c->add_option("--lr", cfg->train.optim.lr, "learning rate");
        c->add_option("--warmup", cfg->train.warmup_steps, "linear lr warmup steps");
        c->add_flag("--cosine", cfg->train.cosine_decay, "cosine-anneal lr to 10%");
        c->add_option("--decay-start", cfg->train.decay_start,
                      "hold full lr until this step before annealing");
        c->add_option("--beta2", cfg->train.optim.beta2, "Adam second-moment decay");
        c->add_option("--weight-decay", cfg->train.optim.weight_decay, "decoupled weight decay");
        c->add_option("--eval-every", cfg->train.eval_every, "dev evaluation period (steps)");
        c->add_option("--eval-dev-limit", cfg->train.eval_dev_limit,
                      "dev samples per evaluation (0 = all)");
        c->add_option("--seed", cfg->train.shuffle_seed, "training shuffle seed");
        c->add_option("--init-seed", cfg->model.init_seed, "parameter init seed");
        c->add_option("--k", cfg->model.k, "wait-k lag");
        c->add_option("--d", cfg->model.d, "model width");
        c->add_option("--heads", cfg->model.heads, "attention heads");
        c->add_option("--enc-layers", cfg->model.enc_layers, "encoder layers");
        c->add_option("--dec-layers", cfg->model.dec_layers, "decoder layers");
        c->add_option("--aux-layers", cfg->model.aux_layers, "gloss decoder layers");
        c->add_option("--ffn", cfg->model.ffn, "feed-forward width");
        c->add_option("--dropout-enc", cfg->model.dropout_enc, "encoder dropout");
        c->add_option("--dropout-dec", cfg->model.dropout_dec, "decoder dropout");
        c->add_option("--fusion", cfg->model.fusion, "add | concat_project | reencode_only");
        c->add_option("--kd", cfg->teacher_logits, "teacher logit file (enables distillation)");
        c->add_option("--loss-ctc", cfg->train.loss_weights.ctc, "CTC loss weight");
        c->add_option("--loss-if", cfg->train.loss_weights.if_, "IF loss weight");
        c->add_option("--loss-soft", cfg->train.loss_weights.soft, "soft KD weight");
        c->add_option("--loss-hard", cfg->train.loss_weights.hard, "hard CE weight");
        c->add_flag("--static-segment", *static_seg, "fixed-rate segmentation (no predictor)");
        c->add_flag("--no-ctc", *no_ctc, "disable the CTC alignment head");
        c->add_flag("--no-reencode", *no_reencode, "decode from the first pass only");
        c->add_flag("--quiet", *quiet, "suppress progress lines");
        c->callback([&run, c, cfg, cfg_file, static_seg, no_ctc, no_reencode, quiet, teacher] {
            run = [c, cfg, cfg_file, static_seg, no_ctc, no_reencode, quiet, teacher] {
                ExperimentConfig final_cfg;
                if (!cfg_file->empty()) final_cfg = load_experiment_config(*cfg_file);
                // flags the user actually passed override the config file
                ExperimentConfig defaults;
                auto passed = [c](const std::string& flag) { return c->count(flag) > 0; };
                if (cfg_file->empty()) {
                    final_cfg = *cfg;
                } else {
                    if (passed("--data")) final_cfg.data_dir = cfg->data_dir;
                    if (passed("--out")) final_cfg.out_dir = cfg->out_dir;
                    if (passed("--steps")) final_cfg.train.max_steps = cfg->train.max_steps;
                    if (passed("--batch")) final_cfg.train.batch_size = cfg->train.batch_size;
                    if (passed("--lr")) final_cfg.train.optim.lr = cfg->train.optim.lr;
                    if (passed("--warmup"))
                        final_cfg.train.warmup_steps = cfg->train.warmup_steps;
                    if (passed("--cosine")) final_cfg.train.cosine_decay = cfg->train.cosine_decay;
                    if (passed("--decay-start"))
                        final_cfg.train.decay_start = cfg->train.decay_start;
                    if (passed("--beta2")) final_cfg.train.optim.beta2 = cfg->train.optim.beta2;
                    if (passed("--weight-decay"))
                        final_cfg.train.optim.weight_decay = cfg->train.optim.weight_decay;
                    if (passed("--eval-every"))
                        final_cfg.train.eval_every = cfg->train.eval_every;
                    if (passed("--eval-dev-limit"))
                        final_cfg.train.eval_dev_limit = cfg->train.eval_dev_limit;
                    if (passed("--seed"))
                        final_cfg.train.shuffle_seed = cfg->train.shuffle_seed;
                    if (passed("--init-seed")) final_cfg.model.init_seed = cfg->model.init_seed;
                    if (passed("--k")) final_cfg.model.k = cfg->model.k;
                    if (passed("--d")) final_cfg.model.d = cfg->model.d;
                    if (passed("--heads")) final_cfg.model.heads = cfg->model.heads;
                    if (passed("--enc-layers"))
                        final_cfg.model.enc_layers = cfg->model.enc_layers;
                    if (passed("--dec-layers"))
                        final_cfg.model.dec_layers = cfg->model.dec_layers;
                    if (passed("--aux-layers"))
                        final_cfg.model.aux_layers = cfg->model.aux_layers;
                    if (passed("--ffn")) final_cfg.model.ffn = cfg->model.ffn;
                    if (passed("--dropout-enc"))
                        final_cfg.model.dropout_enc = cfg->model.dropout_enc;
                    if (passed("--dropout-dec"))
                        final_cfg.model.dropout_dec = cfg->model.dropout_dec;
                    if (passed("--fusion")) final_cfg.model.fusion = cfg->model.fusion;
                    if (passed("--kd")) final_cfg.teacher_logits = cfg->teacher_logits;
                    if (passed("--loss-ctc"))
                        final_cfg.train.loss_weights.ctc = cfg->train.loss_weights.ctc;
                    if (passed("--loss-if"))
                        final_cfg.train.loss_weights.if_ = cfg->train.loss_weights.if_;
                    if (passed("--loss-soft"))
                        final_cfg.train.loss_weights.soft = cfg->train.loss_weights.soft;
                    if (passed("--loss-hard"))
                        final_cfg.train.loss_weights.hard = cfg->train.loss_weights.hard;
                }
                if (*static_seg) final_cfg.model.use_boundary_predictor = false;
                if (*no_ctc) final_cfg.model.use_ctc = false;
                if (*no_reencode) final_cfg.model.use_reencode = false;
                return cmd_train(final_cfg, teacher, *quiet);
            };
        });
        return c;
    };
    add_train_cmd("train", "train a simultaneous model", false);
    add_train_cmd("train-teacher", "train an offline (full-visibility) teacher", true);

    // distill ------------------------------------------------------------------
    {
        auto data = std::make_shared<std::string>();
        auto teacher = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto split = std::make_shared<std::string>("train");
        auto gamma = std::make_shared<double>(2.0);
        auto* c = app.add_subcommand("distill", "record teacher logits for distillation");
        c->add_option("--data", *data, "dataset directory")->required();
        c->add_option("--teacher", *teacher, "teacher checkpoint")->required();
        c->add_option("--out", *out, "output logit file")->required();
        c->add_option("--split", *split, "split to record (default train)");
        c->add_option("--gamma", *gamma, "distillation temperature");
        c->callback([&run, data, teacher, out, split, gamma] {
            run = [data, teacher, out, split, gamma] {
                return cmd_distill(*data, *teacher, *out, *split, *gamma);
            };
        });
    }

    // eval / sweep-k -------------------------------------------------------------
    auto add_eval_cmd = [&](const char* name, const char* help, std::vector<int> default_ks) {
        auto args = std::make_shared<EvalArgs>();
        args->ks = std::move(default_ks);
        auto* c = app.add_subcommand(name, help);
        c->add_option("--data", args->data_dir, "dataset directory")->required();
        c->add_option("--model", args->model_ckpt, "student checkpoint");
        c->add_option("--teacher", args->teacher_ckpt, "teacher checkpoint (adds a k=inf row)");
        c->add_option("--csv", args->csv, "metrics CSV path")->required();
        c->add_option("--split", args->split, "train | dev | test");
        c->add_option("--k", args->ks, "wait-k values to evaluate");
        c->add_option("--frame-interval", args->frame_interval, "seconds per source frame");
        c->add_option("--beam", args->beam.beam, "beam width for the tail");
        c->add_option("--beam-alpha", args->beam.alpha, "length-normalization exponent");
        c->add_option("--logs-dir", args->logs_dir, "write per-k emission logs here");
        c->callback([&run, args] { run = [args] { return cmd_eval(*args); }; });
        return c;
    };
    add_eval_cmd("eval", "evaluate a checkpoint (quality + latency)", {});
    add_eval_cmd("sweep-k", "quality-latency sweep over wait-k values", {1, 3, 5, 7});

    // ablate ---------------------------------------------------------------------
    {
        auto args = std::make_shared<AblateArgs>();
        auto* c = app.add_subcommand("ablate", "train and score the toggle-ablation rows");
        c->add_option("--data", args->data_dir, "dataset directory")->required();
        c->add_option("--out", args->out_dir, "output directory")->required();
        c->add_option("--k", args->k, "wait-k lag");
        c->add_option("--steps", args->steps, "step budget per row");
        c->add_option("--teacher-steps", args->teacher_steps, "teacher budget (default --steps)");
        c->add_option("--batch", args->batch, "batch size");
        c->add_option("--lr", args->lr, "learning rate");
        c->add_option("--seed", args->shuffle_seed, "shared shuffle seed");
        c->add_option("--init-seed", args->init_seed, "shared init seed");
        c->add_option("--eval-dev-limit", args->eval_dev_limit, "dev samples per evaluation");
        c->add_option("--split", args->split, "final scoring split");
        c->callback([&run, args] { run = [args] { return cmd_ablate(*args); }; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;  // config error
    }
    try {
        return run();
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {  // dim_error and kin
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const numeric_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    }
}
