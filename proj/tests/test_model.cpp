#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "simulseq/simulseq.hpp"
#include "testutil.hpp"

namespace {

using namespace simulseq;

TEST(ModelParams, NamesAreUniqueAndFollowToggles) {
    SimulModel full(testutil::tiny_model_config());
    std::set<std::string> names;
    bool saw_predictor = false, saw_ctc = false, saw_gloss = false;
    for (const auto& p : full.params()) {
        EXPECT_TRUE(names.insert(p.name).second) << "duplicate param " << p.name;
        EXPECT_NE(p.tensor, nullptr);
        EXPECT_TRUE(p.tensor->requires_grad) << p.name;
        saw_predictor |= p.name.rfind("predictor", 0) == 0;
        saw_ctc |= p.name.rfind("ctc_head", 0) == 0;
        saw_gloss |= p.name.rfind("gloss_", 0) == 0;
    }
    EXPECT_TRUE(saw_predictor);
    EXPECT_TRUE(saw_ctc);
    EXPECT_TRUE(saw_gloss);
    EXPECT_TRUE(names.count("text_embed"));

    auto cfg = testutil::tiny_model_config();
    cfg.teacher_mode = true;
    SimulModel teacher(cfg);
    for (const auto& p : teacher.params()) {
        EXPECT_NE(p.name.rfind("predictor", 0), 0u);
        EXPECT_NE(p.name.rfind("ctc_head", 0), 0u);
        EXPECT_NE(p.name.rfind("gloss_", 0), 0u);
    }
    EXPECT_LT(teacher.params().size(), full.params().size());

    cfg = testutil::tiny_model_config();
    cfg.use_ctc = false;
    for (const auto& p : SimulModel(cfg).params())
        EXPECT_NE(p.name.rfind("ctc_head", 0), 0u);

    cfg = testutil::tiny_model_config();
    cfg.use_boundary_predictor = false;
    for (const auto& p : SimulModel(cfg).params()) {
        EXPECT_NE(p.name.rfind("predictor", 0), 0u);
        EXPECT_NE(p.name.rfind("gloss_", 0), 0u);
    }
}

TEST(ModelConfigTest, ValidationRejectsBadValues) {
    auto bad = testutil::tiny_model_config();
    bad.d = 15;  // not divisible by heads
    EXPECT_THROW(SimulModel{bad}, config_error);
    bad = testutil::tiny_model_config();
    bad.dropout_dec = 1.0;
    EXPECT_THROW(SimulModel{bad}, config_error);
    bad = testutil::tiny_model_config();
    bad.k = 0;
    EXPECT_THROW(SimulModel{bad}, config_error);
    bad = testutil::tiny_model_config();
    bad.fusion = "mix";
    EXPECT_THROW(SimulModel{bad}, config_error);
    bad = testutil::tiny_model_config();
    bad.use_boundary_predictor = false;
    bad.static_rate = 0.0;
    EXPECT_THROW(SimulModel{bad}, config_error);
    bad = testutil::tiny_model_config();
    bad.threshold = 0.0;
    EXPECT_THROW(SimulModel{bad}, config_error);
    bad = testutil::tiny_model_config();
    bad.kd_gamma = -1.0;
    EXPECT_THROW(SimulModel{bad}, config_error);
}

TEST(ModelConfigTest, JsonRoundTrip) {
    auto cfg = testutil::tiny_model_config();
    cfg.fusion = "concat_project";
    cfg.use_ctc = false;
    cfg.static_rate = 4.25;
    cfg.init_seed = 321;
    cfg.kd_gamma = 1.5;
    nlohmann::json j = cfg;
    auto back = j.get<ModelConfig>();
    EXPECT_EQ(back.feat_dim, cfg.feat_dim);
    EXPECT_EQ(back.d, cfg.d);
    EXPECT_EQ(back.heads, cfg.heads);
    EXPECT_EQ(back.enc_layers, cfg.enc_layers);
    EXPECT_EQ(back.dec_layers, cfg.dec_layers);
    EXPECT_EQ(back.fusion, cfg.fusion);
    EXPECT_EQ(back.use_ctc, cfg.use_ctc);
    EXPECT_DOUBLE_EQ(back.static_rate, cfg.static_rate);
    EXPECT_DOUBLE_EQ(back.kd_gamma, cfg.kd_gamma);
    EXPECT_EQ(back.init_seed, cfg.init_seed);
    // Missing keys fall back to defaults.
    auto sparse = nlohmann::json{{"d", 32}, {"heads", 2}}.get<ModelConfig>();
    EXPECT_EQ(sparse.d, 32);
    EXPECT_EQ(sparse.enc_layers, ModelConfig{}.enc_layers);
}

TEST(ForwardTrain, ProducesExpectedTermsPerToggleSet) {
    Rng rng(31);
    {
        SimulModel model(testutil::tiny_model_config());
        auto s = testutil::random_sample(rng, model.cfg);
        auto b = model.forward_train(s, nullptr, Ctx{}, Ctx{});
        EXPECT_NE(b.ctc, nullptr);
        EXPECT_NE(b.if_, nullptr);
        EXPECT_NE(b.hard, nullptr);
        EXPECT_EQ(b.soft, nullptr);
        EXPECT_EQ(b.total, nullptr);  // composed later by total_loss
        EXPECT_GT(b.boundaries.count(), 0);
        EXPECT_EQ(b.tokens, static_cast<int>(s.text.size()) + 1);
        EXPECT_GE(b.correct, 0);
        EXPECT_LE(b.correct, b.tokens);
    }
    {
        auto cfg = testutil::tiny_model_config();
        cfg.teacher_mode = true;
        SimulModel model(cfg);
        auto s = testutil::random_sample(rng, model.cfg);
        auto b = model.forward_train(s, nullptr, Ctx{}, Ctx{});
        EXPECT_EQ(b.ctc, nullptr);
        EXPECT_EQ(b.if_, nullptr);
        EXPECT_NE(b.hard, nullptr);
        EXPECT_EQ(b.boundaries.count(), 0);
    }
    {
        auto cfg = testutil::tiny_model_config();
        cfg.use_ctc = false;
        cfg.use_boundary_predictor = false;
        cfg.static_rate = 3.0;
        SimulModel model(cfg);
        auto s = testutil::random_sample(rng, model.cfg);
        auto b = model.forward_train(s, nullptr, Ctx{}, Ctx{});
        EXPECT_EQ(b.ctc, nullptr);
        EXPECT_EQ(b.if_, nullptr);
        EXPECT_NE(b.hard, nullptr);
        EXPECT_GT(b.boundaries.count(), 0);  // fixed-rate schedule
    }
}

TEST(ForwardTrain, GradientsReachEveryParameter) {
    Rng rng(57);
    SimulModel model(testutil::tiny_model_config());
    auto s = testutil::random_sample(rng, model.cfg, 4);
    // Fake teacher rows bring the distillation term into the graph too.
    std::vector<std::vector<double>> teacher(
        s.text.size() + 1, std::vector<double>(static_cast<size_t>(model.cfg.text_vocab_size)));
    for (auto& row : teacher)
        for (auto& v : row) v = rng.normal();

    for (auto& p : model.params()) p.tensor->zero_grad();
    auto b = model.forward_train(s, &teacher, Ctx{}, Ctx{});
    auto loss = total_loss(b.ctc, b.if_, b.soft, b.hard, LossWeights{});
    loss->backward();
    for (auto& p : model.params()) {
        double norm = 0.0;
        for (double g : p.tensor->grad) norm += g * g;
        EXPECT_GT(norm, 0.0) << "no gradient reached " << p.name;
    }
}

TEST(TeacherForcedLogits, ShapeAndDeterminism) {
    Rng rng(71);
    SimulModel model(testutil::tiny_model_config());
    auto s = testutil::random_sample(rng, model.cfg);
    auto rows = model.teacher_forced_logits(s);
    ASSERT_EQ(rows.size(), s.text.size() + 1);
    for (const auto& r : rows) EXPECT_EQ(r.size(), static_cast<size_t>(model.cfg.text_vocab_size));
    auto again = model.teacher_forced_logits(s);
    EXPECT_EQ(rows, again);
}

TEST(Checkpoint, RoundTripReproducesModelExactly) {
    namespace fs = std::filesystem;
    auto path = fs::path(::testing::TempDir()) / "model.ckpt";
    Rng rng(83);
    auto cfg = testutil::tiny_model_config();
    cfg.fusion = "concat_project";
    SimulModel model(cfg);
    auto s = testutil::random_sample(rng, cfg);
    auto before = model.teacher_forced_logits(s);

    save_model(model, path);
    auto back = load_model(path);
    EXPECT_EQ(back.cfg.d, cfg.d);
    EXPECT_EQ(back.cfg.fusion, cfg.fusion);
    EXPECT_EQ(back.cfg.k, cfg.k);

    auto after = back.teacher_forced_logits(s);
    ASSERT_EQ(after.size(), before.size());
    for (size_t i = 0; i < before.size(); ++i)
        for (size_t j = 0; j < before[i].size(); ++j)
            EXPECT_EQ(after[i][j], before[i][j]);  // bit-exact parameters

    auto pa = model.params();
    auto pb = back.params();
    ASSERT_EQ(pa.size(), pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i].name, pb[i].name);
        EXPECT_EQ(pa[i].tensor->data, pb[i].tensor->data);
    }
}

TEST(Checkpoint, LoadRejectsMissingGarbageAndTruncated) {
    namespace fs = std::filesystem;
    EXPECT_THROW(load_model(fs::path(::testing::TempDir()) / "absent.ckpt"), data_error);

    auto garbage = fs::path(::testing::TempDir()) / "garbage.ckpt";
    std::ofstream(garbage, std::ios::binary) << "this is not a checkpoint";
    EXPECT_THROW(load_model(garbage), data_error);

    auto path = fs::path(::testing::TempDir()) / "truncated.ckpt";
    SimulModel model(testutil::tiny_model_config());
    save_model(model, path);
    fs::resize_file(path, fs::file_size(path) * 2 / 3);
    EXPECT_THROW(load_model(path), data_error);
}

TEST(TeacherLogits, StoreValidatesAndRoundTrips) {
    namespace fs = std::filesystem;
    TeacherLogitStore store;
    store.gamma = 1.75;
    store.vocab = 4;
    store.add("a", {{1, 2, 3, 4}, {5, 6, 7, 8}});
    store.add("b", {{-1, 0, 1, 2}});
    EXPECT_THROW(store.add("a", {{0, 0, 0, 0}}), data_error);
    EXPECT_THROW(store.add("c", {{1, 2, 3}}), dim_error);
    ASSERT_NE(store.find("a"), nullptr);
    EXPECT_EQ(store.find("a")->size(), 2u);
    EXPECT_EQ(store.find("zzz"), nullptr);

    auto path = fs::path(::testing::TempDir()) / "teacher.logits";
    save_teacher_logits(path, store);
    auto back = load_teacher_logits(path);
    EXPECT_DOUBLE_EQ(back.gamma, 1.75);
    EXPECT_EQ(back.vocab, 4);
    EXPECT_EQ(back.order, store.order);
    ASSERT_NE(back.find("b"), nullptr);
    EXPECT_EQ(*back.find("b"), *store.find("b"));
    EXPECT_EQ(*back.find("a"), *store.find("a"));

    fs::resize_file(path, fs::file_size(path) - 8);
    EXPECT_THROW(load_teacher_logits(path), data_error);
    auto junk = fs::path(::testing::TempDir()) / "junk.logits";
    std::ofstream(junk, std::ios::binary) << "XXXXYYYY";
    EXPECT_THROW(load_teacher_logits(junk), data_error);
}

}  // namespace
