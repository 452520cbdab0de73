#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "simulseq/common.hpp"
#include "simulseq/rng.hpp"
#include "simulseq/vocab.hpp"

namespace simulseq {

static_assert(std::numeric_limits<double>::is_iec559, "IEEE-754 doubles required");

// Recipe for a streaming corpus with planted segment boundaries: each gloss
// token owns a fixed prototype feature vector, a segment repeats it for a
// sampled number of frames plus Gaussian noise, and the text side is a
// deterministic reordering + relabeling of the gloss side.
struct SyntheticSpec {
    int feat_dim = 32;
    int gloss_vocab = 20;  // content gloss count (blank excluded)
    int text_vocab = 24;   // total text vocab including pad/bos/eos
    int seg_min = 3, seg_max = 8;
    int sent_min = 3, sent_max = 8;
    std::string reorder = "adjacent_swap";  // adjacent_swap | rotate | identity
    double noise = 0.1;
    uint64_t seed = 1;
    bool disjoint_splits = true;

    void validate() const {
        if (feat_dim < 1) throw config_error("SyntheticSpec: feat_dim must be >= 1");
        if (gloss_vocab < 4 || text_vocab < 4)
            throw config_error("SyntheticSpec: vocab sizes must be >= 4");
        if (text_vocab - 3 < gloss_vocab)
            throw config_error("SyntheticSpec: text vocab cannot relabel the gloss vocab");
        if (seg_min < 1 || seg_max < seg_min)
            throw config_error("SyntheticSpec: bad segment length range");
        if (sent_min < 1 || sent_max < sent_min)
            throw config_error("SyntheticSpec: bad sentence length range");
        if (noise < 0.0) throw config_error("SyntheticSpec: noise must be >= 0");
        if (reorder != "adjacent_swap" && reorder != "rotate" && reorder != "identity")
            throw config_error("SyntheticSpec: unknown reordering rule '" + reorder + "'");
    }

    Vocabulary vocab() const { return Vocabulary(gloss_vocab, text_vocab - 3); }
};

struct Sample {
    std::string id;
    std::vector<int> gloss;       // 1..gloss_vocab
    std::vector<int> text;        // content ids, no bos/eos
    std::vector<int> boundaries;  // 1-based last frame of each segment
    int frames = 0;
    std::vector<double> feats;    // frames x feat_dim, row-major
};

struct Dataset {
    SyntheticSpec spec;
    std::vector<Sample> train, dev, test;
    double static_rate = 0.0;  // mean frames per gloss over train

    Vocabulary vocab() const { return spec.vocab(); }
};

// Position reorderings are bijections per sentence, so the text side carries
// exactly the gloss information in a different order.
inline std::vector<int> apply_reordering(const std::vector<int>& gloss, const std::string& rule) {
    std::vector<int> out(gloss);
    if (rule == "adjacent_swap") {
        for (size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
    } else if (rule == "rotate") {
        if (out.size() > 1) {
            int last = out.back();
            out.pop_back();
            out.insert(out.begin(), last);
        }
    } else if (rule != "identity") {
        throw config_error("apply_reordering: unknown rule '" + rule + "'");
    }
    return out;
}

namespace detail {

inline std::vector<std::vector<double>> make_prototypes(const SyntheticSpec& spec) {
    Rng rng(spec.seed);
    auto proto_rng = rng.fork(0);
    std::vector<std::vector<double>> protos(static_cast<size_t>(spec.gloss_vocab) + 1);
    for (int g = 1; g <= spec.gloss_vocab; ++g) {
        auto& v = protos[static_cast<size_t>(g)];
        v.resize(static_cast<size_t>(spec.feat_dim));
        double norm = 0.0;
        for (auto& x : v) {
            x = proto_rng.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) norm = 1.0;
        for (auto& x : v) x /= norm;
    }
    return protos;
}

inline std::string gloss_key(const std::vector<int>& gloss) {
    std::string k;
    for (int g : gloss) {
        k += std::to_string(g);
        k += ',';
    }
    return k;
}

inline Sample make_sample(const SyntheticSpec& spec, const Vocabulary& vocab,
                          const std::vector<std::vector<double>>& protos, Rng& rng,
                          const std::string& id) {
    Sample s;
    s.id = id;
    int len = rng.uniform_int(spec.sent_min, spec.sent_max);
    s.gloss.resize(static_cast<size_t>(len));
    for (auto& g : s.gloss) g = rng.uniform_int(1, spec.gloss_vocab);
    auto reordered = apply_reordering(s.gloss, spec.reorder);
    s.text.resize(reordered.size());
    for (size_t i = 0; i < reordered.size(); ++i)
        s.text[i] = vocab.relabel_gloss_to_text(reordered[i]);
    for (int g : s.gloss) {
        int seg = rng.uniform_int(spec.seg_min, spec.seg_max);
        const auto& p = protos[static_cast<size_t>(g)];
        for (int f = 0; f < seg; ++f)
            for (int c = 0; c < spec.feat_dim; ++c)
                s.feats.push_back(p[static_cast<size_t>(c)] + spec.noise * rng.normal());
        s.frames += seg;
        s.boundaries.push_back(s.frames);
    }
    return s;
}

}  // namespace detail

/// Deterministic corpus generation: a fixed seed yields a byte-identical
/// dataset. Per-sample generators are forked from the master seed by split
/// and index, so samples do not depend on generation order.
inline Dataset generate_corpus(const SyntheticSpec& spec, int n_train, int n_dev, int n_test) {
    spec.validate();
    if (n_train < 1 || n_dev < 0 || n_test < 0)
        throw config_error("generate_corpus: bad split sizes");
    Dataset ds;
    ds.spec = spec;
    auto vocab = spec.vocab();
    auto protos = detail::make_prototypes(spec);
    Rng master(spec.seed);

    std::unordered_set<std::string> seen;
    auto fill = [&](std::vector<Sample>& out, const char* split, int count, int split_ix,
                    bool check_seen) {
        out.reserve(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i) {
            std::string id = std::string(split) + "-" + std::to_string(i);
            // Resampling loop for split disjointness; attempt index shifts the
            // fork id so retries draw fresh sequences.
            for (int attempt = 0;; ++attempt) {
                auto rng = master.fork(
                    (static_cast<uint64_t>(split_ix) << 56) +
                    static_cast<uint64_t>(i) * 97ull + static_cast<uint64_t>(attempt) + 1ull);
                Sample s = detail::make_sample(spec, vocab, protos, rng, id);
                auto key = detail::gloss_key(s.gloss);
                if (check_seen && spec.disjoint_splits && seen.count(key) && attempt < 200)
                    continue;
                seen.insert(key);
                out.push_back(std::move(s));
                break;
            }
        }
    };
    fill(ds.train, "train", n_train, 1, false);
    fill(ds.dev, "dev", n_dev, 2, true);
    fill(ds.test, "test", n_test, 3, true);

    int64_t frames = 0, glosses = 0;
    for (const auto& s : ds.train) {
        frames += s.frames;
        glosses += static_cast<int64_t>(s.gloss.size());
    }
    ds.static_rate = glosses > 0 ? static_cast<double>(frames) / static_cast<double>(glosses) : 0.0;
    return ds;
}

// ---------------------------------------------------------------------------
// On-disk layout: meta.json + per-split JSONL manifest + raw feature block.
// Features are IEEE-754 doubles, little-endian, behind a small header.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kFeatMagic[4] = {'S', 'S', 'F', 'B'};
constexpr uint32_t kFeatVersion = 1;
constexpr uint32_t kDatasetVersion = 1;

inline bool little_endian_host() {
    const uint32_t probe = 1;
    return *reinterpret_cast<const unsigned char*>(&probe) == 1;
}

inline void write_feat_file(const std::filesystem::path& path,
                            const std::vector<Sample>& samples, int feat_dim) {
    if (!little_endian_host())
        throw data_error("feature files are little-endian; big-endian hosts unsupported");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot write " + path.string());
    uint32_t ver = kFeatVersion, dim = static_cast<uint32_t>(feat_dim);
    uint64_t total = 0;
    for (const auto& s : samples) total += s.feats.size();
    f.write(kFeatMagic, 4);
    f.write(reinterpret_cast<const char*>(&ver), sizeof ver);
    f.write(reinterpret_cast<const char*>(&dim), sizeof dim);
    f.write(reinterpret_cast<const char*>(&total), sizeof total);
    for (const auto& s : samples)
        f.write(reinterpret_cast<const char*>(s.feats.data()),
                static_cast<std::streamsize>(s.feats.size() * sizeof(double)));
    if (!f) throw data_error("short write to " + path.string());
}

inline std::vector<double> read_feat_file(const std::filesystem::path& path, int expect_dim) {
    if (!little_endian_host())
        throw data_error("feature files are little-endian; big-endian hosts unsupported");
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot read " + path.string());
    char magic[4];
    uint32_t ver = 0, dim = 0;
    uint64_t total = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&ver), sizeof ver);
    f.read(reinterpret_cast<char*>(&dim), sizeof dim);
    f.read(reinterpret_cast<char*>(&total), sizeof total);
    if (!f || std::string(magic, 4) != std::string(kFeatMagic, 4))
        throw data_error("bad feature file header in " + path.string());
    if (ver != kFeatVersion)
        throw data_error("unsupported feature file version " + std::to_string(ver));
    if (static_cast<int>(dim) != expect_dim)
        throw data_error("feature width mismatch in " + path.string());
    std::vector<double> data(total);
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(total * sizeof(double)));
    if (!f) throw data_error("truncated feature file " + path.string());
    return data;
}

inline void save_split(const std::filesystem::path& dir, const char* split,
                       const std::vector<Sample>& samples, int feat_dim) {
    std::ofstream mf(dir / (std::string(split) + ".jsonl"));
    if (!mf) throw data_error("cannot write manifest for split " + std::string(split));
    uint64_t offset = 0;
    for (const auto& s : samples) {
        nlohmann::json j{{"id", s.id},         {"gloss", s.gloss},   {"text", s.text},
                         {"boundaries", s.boundaries}, {"frames", s.frames}, {"offset", offset}};
        mf << j.dump() << "\n";
        offset += s.feats.size();
    }
    write_feat_file(dir / (std::string(split) + ".feat"), samples, feat_dim);
}

inline std::vector<Sample> load_split(const std::filesystem::path& dir, const char* split,
                                      int feat_dim) {
    std::ifstream mf(dir / (std::string(split) + ".jsonl"));
    if (!mf) throw data_error("missing manifest for split " + std::string(split));
    auto feats = read_feat_file(dir / (std::string(split) + ".feat"), feat_dim);
    std::vector<Sample> out;
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw data_error("bad manifest line in split " + std::string(split) + ": " + e.what());
        }
        Sample s;
        s.id = j.at("id").get<std::string>();
        s.gloss = j.at("gloss").get<std::vector<int>>();
        s.text = j.at("text").get<std::vector<int>>();
        s.boundaries = j.at("boundaries").get<std::vector<int>>();
        s.frames = j.at("frames").get<int>();
        uint64_t offset = j.at("offset").get<uint64_t>();
        uint64_t count = static_cast<uint64_t>(s.frames) * static_cast<uint64_t>(feat_dim);
        if (offset + count > feats.size())
            throw data_error("manifest offset beyond feature block in split " +
                             std::string(split));
        s.feats.assign(feats.begin() + static_cast<ptrdiff_t>(offset),
                       feats.begin() + static_cast<ptrdiff_t>(offset + count));
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json meta{
        {"format", "simulseq-dataset"},
        {"version", detail::kDatasetVersion},
        {"static_rate", ds.static_rate},
        {"counts",
         {{"train", ds.train.size()}, {"dev", ds.dev.size()}, {"test", ds.test.size()}}},
        {"spec",
         {{"feat_dim", ds.spec.feat_dim},
          {"gloss_vocab", ds.spec.gloss_vocab},
          {"text_vocab", ds.spec.text_vocab},
          {"seg_min", ds.spec.seg_min},
          {"seg_max", ds.spec.seg_max},
          {"sent_min", ds.spec.sent_min},
          {"sent_max", ds.spec.sent_max},
          {"reorder", ds.spec.reorder},
          {"noise", ds.spec.noise},
          {"seed", ds.spec.seed},
          {"disjoint_splits", ds.spec.disjoint_splits}}}};
    std::ofstream mf(dir / "meta.json");
    if (!mf) throw data_error("cannot write " + (dir / "meta.json").string());
    mf << meta.dump(2) << "\n";
    detail::save_split(dir, "train", ds.train, ds.spec.feat_dim);
    detail::save_split(dir, "dev", ds.dev, ds.spec.feat_dim);
    detail::save_split(dir, "test", ds.test, ds.spec.feat_dim);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "meta.json");
    if (!mf) throw data_error("missing dataset metadata at " + (dir / "meta.json").string());
    nlohmann::json meta;
    try {
        mf >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("bad dataset metadata: ") + e.what());
    }
    if (meta.value("format", "") != "simulseq-dataset")
        throw data_error("not a dataset directory: " + dir.string());
    if (meta.value("version", 0) != static_cast<int>(detail::kDatasetVersion))
        throw data_error("unsupported dataset version " +
                         std::to_string(meta.value("version", 0)));
    Dataset ds;
    const auto& sp = meta.at("spec");
    ds.spec.feat_dim = sp.at("feat_dim").get<int>();
    ds.spec.gloss_vocab = sp.at("gloss_vocab").get<int>();
    ds.spec.text_vocab = sp.at("text_vocab").get<int>();
    ds.spec.seg_min = sp.at("seg_min").get<int>();
    ds.spec.seg_max = sp.at("seg_max").get<int>();
    ds.spec.sent_min = sp.at("sent_min").get<int>();
    ds.spec.sent_max = sp.at("sent_max").get<int>();
    ds.spec.reorder = sp.at("reorder").get<std::string>();
    ds.spec.noise = sp.at("noise").get<double>();
    ds.spec.seed = sp.at("seed").get<uint64_t>();
    ds.spec.disjoint_splits = sp.value("disjoint_splits", true);
    ds.spec.validate();
    ds.static_rate = meta.at("static_rate").get<double>();
    ds.train = detail::load_split(dir, "train", ds.spec.feat_dim);
    ds.dev = detail::load_split(dir, "dev", ds.spec.feat_dim);
    ds.test = detail::load_split(dir, "test", ds.spec.feat_dim);
    return ds;
}

}  // namespace simulseq
