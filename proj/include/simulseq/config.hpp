#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "simulseq/model.hpp"
#include "simulseq/training.hpp"

namespace simulseq {

/// Everything a run needs beyond the dataset itself. Serialized as JSON so a
/// run is reproducible from (config, seeds, dataset).
struct ExperimentConfig {
    std::string data_dir;
    std::string out_dir = "runs/run";
    ModelConfig model;
    TrainConfig train;
    std::string teacher_logits;  // path enabling word-level distillation
    std::vector<int> k_list{1, 3, 5, 7};
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = nlohmann::json{{"data_dir", c.data_dir},
                       {"out_dir", c.out_dir},
                       {"model", c.model},
                       {"teacher_logits", c.teacher_logits},
                       {"k_list", c.k_list},
                       {"train",
                        {{"max_steps", c.train.max_steps},
                         {"batch_size", c.train.batch_size},
                         {"warmup", c.train.warmup_steps},
                         {"cosine", c.train.cosine_decay},
                         {"decay_start", c.train.decay_start},
                         {"lr", c.train.optim.lr},
                         {"beta2", c.train.optim.beta2},
                         {"weight_decay", c.train.optim.weight_decay},
                         {"plateau_factor", c.train.plateau.factor},
                         {"plateau_patience", c.train.plateau.patience},
                         {"min_lr", c.train.plateau.min_lr},
                         {"loss_ctc", c.train.loss_weights.ctc},
                         {"loss_if", c.train.loss_weights.if_},
                         {"loss_soft", c.train.loss_weights.soft},
                         {"loss_hard", c.train.loss_weights.hard},
                         {"eval_every", c.train.eval_every},
                         {"eval_dev_limit", c.train.eval_dev_limit},
                         {"shuffle_seed", c.train.shuffle_seed},
                         {"frame_interval", c.train.frame_interval},
                         {"beam", c.train.beam.beam},
                         {"beam_alpha", c.train.beam.alpha}}}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    ExperimentConfig d;
    c.data_dir = j.value("data_dir", d.data_dir);
    c.out_dir = j.value("out_dir", d.out_dir);
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    c.teacher_logits = j.value("teacher_logits", d.teacher_logits);
    c.k_list = j.value("k_list", d.k_list);
    if (j.contains("train")) {
        const auto& t = j.at("train");
        c.train.max_steps = t.value("max_steps", d.train.max_steps);
        c.train.batch_size = t.value("batch_size", d.train.batch_size);
        c.train.warmup_steps = t.value("warmup", d.train.warmup_steps);
        c.train.cosine_decay = t.value("cosine", d.train.cosine_decay);
        c.train.decay_start = t.value("decay_start", d.train.decay_start);
        c.train.optim.lr = t.value("lr", d.train.optim.lr);
        c.train.optim.beta2 = t.value("beta2", d.train.optim.beta2);
        c.train.optim.weight_decay = t.value("weight_decay", d.train.optim.weight_decay);
        c.train.plateau.factor = t.value("plateau_factor", d.train.plateau.factor);
        c.train.plateau.patience = t.value("plateau_patience", d.train.plateau.patience);
        c.train.plateau.min_lr = t.value("min_lr", d.train.plateau.min_lr);
        c.train.loss_weights.ctc = t.value("loss_ctc", d.train.loss_weights.ctc);
        c.train.loss_weights.if_ = t.value("loss_if", d.train.loss_weights.if_);
        c.train.loss_weights.soft = t.value("loss_soft", d.train.loss_weights.soft);
        c.train.loss_weights.hard = t.value("loss_hard", d.train.loss_weights.hard);
        c.train.eval_every = t.value("eval_every", d.train.eval_every);
        c.train.eval_dev_limit = t.value("eval_dev_limit", d.train.eval_dev_limit);
        c.train.shuffle_seed = t.value("shuffle_seed", d.train.shuffle_seed);
        c.train.frame_interval = t.value("frame_interval", d.train.frame_interval);
        c.train.beam.beam = t.value("beam", d.train.beam.beam);
        c.train.beam.alpha = t.value("beam_alpha", d.train.beam.alpha);
    }
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        return j.get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("bad config file: ") + e.what());
    }
}

/// Fill the dataset-derived model fields (vocab sizes, feature width, static
/// segmentation rate) from a loaded corpus.
inline void bind_model_to_dataset(ModelConfig& m, const Dataset& ds) {
    auto vocab = ds.vocab();
    m.feat_dim = ds.spec.feat_dim;
    m.gloss_vocab_size = vocab.gloss_size();
    m.text_vocab_size = vocab.text_size();
    m.static_rate = ds.static_rate;
}

}  // namespace simulseq
