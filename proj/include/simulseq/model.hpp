#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "simulseq/boundary.hpp"
#include "simulseq/losses.hpp"
#include "simulseq/masked_encoder.hpp"
#include "simulseq/synthetic.hpp"
#include "simulseq/transformer.hpp"
#include "simulseq/vocab.hpp"

namespace simulseq {

struct ModelConfig {
    int feat_dim = 32;
    int d = 64;
    int heads = 4;
    int enc_layers = 2;
    int dec_layers = 2;
    int aux_layers = 1;  // auxiliary gloss decoder depth
    int ffn = 256;
    int gloss_vocab_size = 21;  // content + blank
    int text_vocab_size = 27;   // content + pad/bos/eos
    int k = 3;
    double threshold = 1.0;
    double dropout_enc = 0.1;
    double dropout_dec = 0.1;
    double kd_gamma = 2.0;
    std::string fusion = "add";
    bool use_boundary_predictor = true;  // false: fixed-rate segmentation
    bool use_ctc = true;
    bool use_reencode = true;  // false: decoder reads the first pass directly
    bool teacher_mode = false;  // offline model: full masks, no policy machinery
    double static_rate = 0.0;   // frames per segment when the predictor is off
    uint64_t init_seed = 7;

    void validate() const {
        if (feat_dim < 1 || d < 1 || ffn < 1) throw config_error("ModelConfig: bad widths");
        if (heads < 1 || d % heads != 0)
            throw config_error("ModelConfig: d must be divisible by heads");
        if (enc_layers < 0 || dec_layers < 0 || aux_layers < 0)
            throw config_error("ModelConfig: negative layer count");
        if (gloss_vocab_size < 2 || text_vocab_size < 4)
            throw config_error("ModelConfig: vocab too small");
        if (k < 1) throw config_error("ModelConfig: k must be >= 1");
        if (threshold <= 0.0) throw config_error("ModelConfig: threshold must be positive");
        if (dropout_enc < 0.0 || dropout_enc >= 1.0 || dropout_dec < 0.0 || dropout_dec >= 1.0)
            throw config_error("ModelConfig: dropout must be in [0,1)");
        if (kd_gamma <= 0.0) throw config_error("ModelConfig: kd_gamma must be positive");
        parse_fusion_mode(fusion);
        if (!teacher_mode && !use_boundary_predictor && static_rate <= 0.0)
            throw config_error("ModelConfig: static segmentation requires a positive rate");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"feat_dim", c.feat_dim},
                       {"d", c.d},
                       {"heads", c.heads},
                       {"enc_layers", c.enc_layers},
                       {"dec_layers", c.dec_layers},
                       {"aux_layers", c.aux_layers},
                       {"ffn", c.ffn},
                       {"gloss_vocab_size", c.gloss_vocab_size},
                       {"text_vocab_size", c.text_vocab_size},
                       {"k", c.k},
                       {"threshold", c.threshold},
                       {"dropout_enc", c.dropout_enc},
                       {"dropout_dec", c.dropout_dec},
                       {"kd_gamma", c.kd_gamma},
                       {"fusion", c.fusion},
                       {"use_boundary_predictor", c.use_boundary_predictor},
                       {"use_ctc", c.use_ctc},
                       {"use_reencode", c.use_reencode},
                       {"teacher_mode", c.teacher_mode},
                       {"static_rate", c.static_rate},
                       {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig defaults;
    c.feat_dim = j.value("feat_dim", defaults.feat_dim);
    c.d = j.value("d", defaults.d);
    c.heads = j.value("heads", defaults.heads);
    c.enc_layers = j.value("enc_layers", defaults.enc_layers);
    c.dec_layers = j.value("dec_layers", defaults.dec_layers);
    c.aux_layers = j.value("aux_layers", defaults.aux_layers);
    c.ffn = j.value("ffn", defaults.ffn);
    c.gloss_vocab_size = j.value("gloss_vocab_size", defaults.gloss_vocab_size);
    c.text_vocab_size = j.value("text_vocab_size", defaults.text_vocab_size);
    c.k = j.value("k", defaults.k);
    c.threshold = j.value("threshold", defaults.threshold);
    c.dropout_enc = j.value("dropout_enc", defaults.dropout_enc);
    c.dropout_dec = j.value("dropout_dec", defaults.dropout_dec);
    c.kd_gamma = j.value("kd_gamma", defaults.kd_gamma);
    c.fusion = j.value("fusion", defaults.fusion);
    c.use_boundary_predictor = j.value("use_boundary_predictor", defaults.use_boundary_predictor);
    c.use_ctc = j.value("use_ctc", defaults.use_ctc);
    c.use_reencode = j.value("use_reencode", defaults.use_reencode);
    c.teacher_mode = j.value("teacher_mode", defaults.teacher_mode);
    c.static_rate = j.value("static_rate", defaults.static_rate);
    c.init_seed = j.value("init_seed", defaults.init_seed);
}

// Per-sample training terms plus bookkeeping for logs and accuracy.
struct LossBreakdown {
    TensorPtr ctc, if_, soft, hard, total;
    BoundarySet boundaries;
    int tokens = 0;   // scored target positions
    int correct = 0;  // teacher-forced argmax hits
};

// The full simultaneous translation model: shared two-pass encoder, boundary
// machinery, CTC head, auxiliary gloss decoder and the wait-k text decoder.
// In teacher mode the encoder mask is full and the policy machinery is off.
class SimulModel {
public:
    SimulModel() = default;

    explicit SimulModel(const ModelConfig& config) : cfg(config) {
        cfg.validate();
        Rng rng(cfg.init_seed);
        in_proj = LinearLayer(cfg.feat_dim, cfg.d, rng);
        encoder = MaskedEncoder(cfg.d, cfg.heads, cfg.ffn, cfg.enc_layers,
                                parse_fusion_mode(cfg.fusion), rng);
        if (cfg.use_boundary_predictor && !cfg.teacher_mode) {
            predictor = BoundaryPredictor(cfg.d, rng);
            gloss_dec = TransformerDecoder(cfg.d, cfg.heads, cfg.ffn, cfg.aux_layers,
                                           /*with_cross=*/false, /*add_positional=*/false, rng);
            gloss_out = LinearLayer(cfg.d, cfg.gloss_vocab_size, rng);
        }
        if (cfg.use_ctc && !cfg.teacher_mode) ctc_head = LinearLayer(cfg.d, cfg.gloss_vocab_size, rng);
        text_embed = make_tensor(
            {cfg.text_vocab_size, cfg.d},
            detail::init_vec(rng, static_cast<size_t>(cfg.text_vocab_size) * cfg.d,
                             1.0 / std::sqrt(static_cast<double>(cfg.d))),
            true);
        text_dec = TransformerDecoder(cfg.d, cfg.heads, cfg.ffn, cfg.dec_layers,
                                      /*with_cross=*/true, /*add_positional=*/true, rng);
        text_out = LinearLayer(cfg.d, cfg.text_vocab_size, rng);
    }

    ModelConfig cfg;
    LinearLayer in_proj;
    MaskedEncoder encoder;
    BoundaryPredictor predictor;
    LinearLayer ctc_head;
    TensorPtr text_embed;
    TransformerDecoder text_dec;
    LinearLayer text_out;
    TransformerDecoder gloss_dec;
    LinearLayer gloss_out;

    bool has_predictor() const { return cfg.use_boundary_predictor && !cfg.teacher_mode; }
    bool has_ctc() const { return cfg.use_ctc && !cfg.teacher_mode; }

    std::vector<Param> params() {
        std::vector<Param> p = in_proj.params("in_proj");
        for (auto& q : encoder.params("encoder")) p.push_back(q);
        if (has_predictor()) {
            for (auto& q : predictor.params("predictor")) p.push_back(q);
            for (auto& q : gloss_dec.params("gloss_dec")) p.push_back(q);
            for (auto& q : gloss_out.params("gloss_out")) p.push_back(q);
        }
        if (has_ctc())
            for (auto& q : ctc_head.params("ctc_head")) p.push_back(q);
        p.push_back({"text_embed", text_embed});
        for (auto& q : text_dec.params("text_dec")) p.push_back(q);
        for (auto& q : text_out.params("text_out")) p.push_back(q);
        return p;
    }

    // ---- building blocks -------------------------------------------------

    TensorPtr project(const std::vector<double>& feats, int frames) const {
        if (frames < 1) throw data_error("project: empty stream");
        if (static_cast<int>(feats.size()) != frames * cfg.feat_dim)
            throw config_error("project: stream width does not match model feat_dim");
        return in_proj.forward(make_tensor({frames, cfg.feat_dim}, feats));
    }

    TensorPtr project_row(const double* row) const {
        return in_proj.forward(
            make_tensor({1, cfg.feat_dim}, std::vector<double>(row, row + cfg.feat_dim)));
    }

    // First encoding pass: causal for streaming models, full for the teacher.
    TensorPtr encode_base(const TensorPtr& x, const Ctx& ctx) const {
        if (cfg.teacher_mode)
            return encoder.stack().forward(x, full_mask(x->shape[0], x->shape[0]), ctx);
        return encoder.first_pass(x, ctx);
    }

    TensorPtr embed_tokens(const std::vector<int>& ids) const {
        return mul_scalar(gather_rows(text_embed, ids), std::sqrt(static_cast<double>(cfg.d)));
    }

    // Decoder logits over a teacher-forced or generated prefix. The cross
    // mask encodes per-row wait-k visibility (or everything, once finished).
    TensorPtr decode_logits(const std::vector<int>& input_ids, const TensorPtr& memory,
                            const BoundarySet& bs, bool source_finished, const Ctx& ctx) const {
        int len = static_cast<int>(input_ids.size());
        int n = memory->shape[0];
        auto y = embed_tokens(input_ids);
        AttentionMask cross = (cfg.teacher_mode || source_finished)
                                  ? full_mask(len, n)
                                  : build_waitk_cross_mask_teacher_forced(cfg.k, bs, len, n);
        auto h = text_dec.forward(y, memory, build_causal_mask(len), cross, ctx);
        return text_out.forward(h);
    }

    // ---- training forward -------------------------------------------------

    LossBreakdown forward_train(const Sample& sample,
                                const std::vector<std::vector<double>>* teacher_rows,
                                const Ctx& ctx_enc, const Ctx& ctx_dec) const {
        LossBreakdown out;
        auto x = project(sample.feats, sample.frames);
        auto first = encode_base(x, ctx_enc);

        if (has_ctc()) out.ctc = ctc_loss(ctc_head.forward(first), sample.gloss, Vocabulary::kBlank);

        TensorPtr fused = first;
        if (!cfg.teacher_mode) {
            if (has_predictor()) {
                auto weights = predictor.forward(first);
                int target_len = static_cast<int>(sample.gloss.size());
                auto scaled = scale_weights_to_length(weights, target_len);
                out.boundaries =
                    scan_boundaries(scaled->data, cfg.threshold, /*fire_tail=*/true);
                auto E = gloss_embeddings(first, scaled, out.boundaries);
                AttentionMask dummy;
                auto g_logits = gloss_out.forward(gloss_dec.forward(
                    E, nullptr, build_causal_mask(out.boundaries.count()), dummy, ctx_dec));
                if (out.boundaries.count() == target_len) {
                    out.if_ = if_loss(g_logits, sample.gloss, weights, target_len);
                } else {
                    // Rescaling makes the fire count match the gloss length in
                    // all but pathological early-training weight patterns; on
                    // mismatch, align the shared prefix so training continues.
                    std::vector<int> aligned(static_cast<size_t>(out.boundaries.count()), -1);
                    for (int i = 0; i < out.boundaries.count() && i < target_len; ++i)
                        aligned[static_cast<size_t>(i)] = sample.gloss[static_cast<size_t>(i)];
                    auto ce = cross_entropy_rows(g_logits, aligned, -1);
                    auto diff =
                        sub(sum_all(weights), scalar(static_cast<double>(target_len)));
                    out.if_ = add(ce, mul(diff, diff));
                }
            } else {
                out.boundaries = static_segment(sample.frames, cfg.static_rate);
            }
            if (cfg.use_reencode) {
                auto re = encoder.reencode_once(x, out.boundaries, ctx_enc);
                fused = encoder.fuse(first, re);
            }
        }

        std::vector<int> input_ids{Vocabulary::kBos};
        input_ids.insert(input_ids.end(), sample.text.begin(), sample.text.end());
        std::vector<int> targets(sample.text);
        targets.push_back(Vocabulary::kEos);

        auto logits =
            decode_logits(input_ids, fused, out.boundaries, cfg.teacher_mode, ctx_dec);
        out.hard = hard_ce(logits, targets, Vocabulary::kPad);
        for (size_t i = 0; i < targets.size(); ++i) {
            ++out.tokens;
            if (argmax_row(*logits, static_cast<int>(i)) == targets[i]) ++out.correct;
        }

        if (teacher_rows) out.soft = soft_kd(logits, *teacher_rows, cfg.kd_gamma);
        return out;
    }

    // Teacher-forced logits rows for one sample (distillation recording and
    // token-accuracy evaluation). Eval mode, no graph.
    std::vector<std::vector<double>> teacher_forced_logits(const Sample& sample) const {
        NoGradGuard ng;
        Ctx ctx;
        auto x = project(sample.feats, sample.frames);
        auto first = encode_base(x, ctx);
        TensorPtr fused = first;
        BoundarySet bs;
        if (!cfg.teacher_mode) {
            bs = boundaries_for(first, sample);
            if (cfg.use_reencode) {
                auto re = encoder.reencode_once(x, bs, ctx);
                fused = encoder.fuse(first, re);
            }
        }
        std::vector<int> input_ids{Vocabulary::kBos};
        input_ids.insert(input_ids.end(), sample.text.begin(), sample.text.end());
        auto logits = decode_logits(input_ids, fused, bs, cfg.teacher_mode, ctx);
        std::vector<std::vector<double>> rows(static_cast<size_t>(logits->shape[0]));
        int V = logits->shape[1];
        for (int i = 0; i < logits->shape[0]; ++i)
            rows[static_cast<size_t>(i)].assign(
                logits->data.begin() + static_cast<ptrdiff_t>(i) * V,
                logits->data.begin() + static_cast<ptrdiff_t>(i + 1) * V);
        return rows;
    }

    // Inference-style boundaries for a fully read stream (no target length).
    BoundarySet boundaries_for(const TensorPtr& first, const Sample& sample) const {
        if (!has_predictor()) return static_segment(sample.frames, cfg.static_rate);
        NoGradGuard ng;
        auto w = predictor.forward(first);
        return scan_boundaries(w->data, cfg.threshold, /*fire_tail=*/true);
    }
};

// ---------------------------------------------------------------------------
// Checkpoints: magic + config JSON + named f64 parameter blobs.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kCkptMagic[4] = {'S', 'S', 'C', 'K'};
constexpr uint32_t kCkptVersion = 1;

}  // namespace detail

inline void save_model(SimulModel& model, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot write checkpoint " + path.string());
    nlohmann::json j = model.cfg;
    std::string js = j.dump();
    uint32_t ver = detail::kCkptVersion;
    uint64_t jlen = js.size();
    f.write(detail::kCkptMagic, 4);
    f.write(reinterpret_cast<const char*>(&ver), sizeof ver);
    f.write(reinterpret_cast<const char*>(&jlen), sizeof jlen);
    f.write(js.data(), static_cast<std::streamsize>(js.size()));
    auto ps = model.params();
    uint64_t count = ps.size();
    f.write(reinterpret_cast<const char*>(&count), sizeof count);
    for (auto& p : ps) {
        uint64_t nlen = p.name.size(), numel = p.tensor->data.size();
        f.write(reinterpret_cast<const char*>(&nlen), sizeof nlen);
        f.write(p.name.data(), static_cast<std::streamsize>(nlen));
        f.write(reinterpret_cast<const char*>(&numel), sizeof numel);
        f.write(reinterpret_cast<const char*>(p.tensor->data.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
    }
    if (!f) throw data_error("short write to checkpoint " + path.string());
}

inline SimulModel load_model(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot read checkpoint " + path.string());
    char magic[4];
    uint32_t ver = 0;
    uint64_t jlen = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&ver), sizeof ver);
    f.read(reinterpret_cast<char*>(&jlen), sizeof jlen);
    if (!f || std::string(magic, 4) != std::string(detail::kCkptMagic, 4))
        throw data_error("not a checkpoint file: " + path.string());
    if (ver != detail::kCkptVersion)
        throw data_error("unsupported checkpoint version " + std::to_string(ver));
    std::string js(jlen, '\0');
    f.read(js.data(), static_cast<std::streamsize>(jlen));
    ModelConfig cfg;
    try {
        cfg = nlohmann::json::parse(js).get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("bad checkpoint config: ") + e.what());
    }
    SimulModel model(cfg);
    auto ps = model.params();
    uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&count), sizeof count);
    if (count != ps.size())
        throw data_error("checkpoint parameter count mismatch in " + path.string());
    for (auto& p : ps) {
        uint64_t nlen = 0, numel = 0;
        f.read(reinterpret_cast<char*>(&nlen), sizeof nlen);
        std::string name(nlen, '\0');
        f.read(name.data(), static_cast<std::streamsize>(nlen));
        f.read(reinterpret_cast<char*>(&numel), sizeof numel);
        if (!f || name != p.name || numel != p.tensor->data.size())
            throw data_error("checkpoint layout mismatch at parameter '" + name + "'");
        f.read(reinterpret_cast<char*>(p.tensor->data.data()),
               static_cast<std::streamsize>(numel * sizeof(double)));
    }
    if (!f) throw data_error("truncated checkpoint " + path.string());
    return model;
}

}  // namespace simulseq
