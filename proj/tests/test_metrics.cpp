#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "simulseq/simulseq.hpp"

namespace {

using namespace simulseq;

EmissionLog make_log(std::vector<std::pair<int, int>> emissions, int total_frames,
                     double frame_interval = 1.0) {
    EmissionLog log;
    log.id = "s";
    log.total_frames = total_frames;
    log.frame_interval = frame_interval;
    for (auto [tok, fr] : emissions) log.tokens.push_back({tok, fr, fr});
    return log;
}

TEST(Lagging, HandCase) {
    // Two tokens read at 2 and 4 of 4 frames; rate 4/2 = 2 frames per token.
    // The second token sees the whole source, so tau = 2 and
    // AL = ((2 - 0) + (4 - 2)) / 2 = 2.
    auto log = make_log({{7, 2}, {8, 4}}, 4);
    EXPECT_DOUBLE_EQ(average_lagging(log, 2), 2.0);
    EXPECT_DOUBLE_EQ(average_proportion(log), 0.75);
}

TEST(Lagging, FullWaitEqualsSourceDuration) {
    // Every token waits for the whole stream: tau = 1 and AL = |X| * T_s.
    auto log = make_log({{1, 6}, {2, 6}, {3, 6}}, 6);
    EXPECT_DOUBLE_EQ(average_lagging(log, 3), 6.0);
    EXPECT_DOUBLE_EQ(average_proportion(log), 1.0);
}

TEST(Lagging, TauFallsBackToLastTokenWhenSourceNeverCompletes) {
    // No emission saw the full stream (early stop): average over all tokens.
    auto log = make_log({{1, 1}, {2, 2}}, 10, 0.5);
    // rate = 10/2 = 5; AL = ((0.5*1 - 0) + (0.5*2 - 5*0.5)) / 2 = -0.5.
    EXPECT_DOUBLE_EQ(average_lagging(log, 2), -0.5);
}

TEST(Lagging, ScalesWithFrameInterval) {
    auto a = make_log({{1, 2}, {2, 4}}, 4, 1.0);
    auto b = make_log({{1, 2}, {2, 4}}, 4, 2.0);
    EXPECT_DOUBLE_EQ(average_lagging(b, 2), 2.0 * average_lagging(a, 2));
    EXPECT_DOUBLE_EQ(average_proportion(a), average_proportion(b));
}

TEST(Lagging, Errors) {
    EmissionLog empty;
    empty.total_frames = 4;
    EXPECT_THROW(average_lagging(empty, 2), data_error);
    EXPECT_THROW(average_proportion(empty), data_error);
    auto log = make_log({{1, 2}}, 4);
    EXPECT_THROW(average_lagging(log, 0), data_error);
}

TEST(Bleu, PerfectMatchScoresHundred) {
    std::vector<std::vector<int>> c = {{1, 2, 3, 4, 5}, {9, 8, 7, 6}};
    auto r = bleu_corpus(c, c);
    for (int n = 0; n < 4; ++n) {
        EXPECT_DOUBLE_EQ(r.bleu[n], 100.0);
        EXPECT_DOUBLE_EQ(r.precisions[n], 1.0);
    }
    EXPECT_DOUBLE_EQ(r.brevity_penalty, 1.0);
}

TEST(Bleu, ClippedPrecisionHandCase) {
    // hyp 1 1 1 1 vs ref 1 1: unigram matches clip at 2/4, bigram at 1/3.
    std::vector<std::vector<int>> hyp = {{1, 1, 1, 1}};
    std::vector<std::vector<int>> ref = {{1, 1}};
    auto r = bleu_corpus(hyp, ref);
    EXPECT_DOUBLE_EQ(r.precisions[0], 0.5);
    EXPECT_NEAR(r.precisions[1], 1.0 / 3.0, 1e-12);
    EXPECT_DOUBLE_EQ(r.brevity_penalty, 1.0);
    EXPECT_DOUBLE_EQ(r.bleu[0], 50.0);
    EXPECT_NEAR(r.bleu[1], 100.0 * std::sqrt(0.5 / 3.0), 1e-9);
    // No trigram can match a two-token reference; the smoothed numerator
    // leaves a sub-0.1 score after the cube root.
    EXPECT_GT(r.bleu[2], 0.0);
    EXPECT_LT(r.bleu[2], 0.1);
    EXPECT_EQ(r.hyp_len, 4);
    EXPECT_EQ(r.ref_len, 2);
}

TEST(Bleu, BrevityPenaltyOnShortHypothesis) {
    std::vector<std::vector<int>> hyp = {{1, 2}};
    std::vector<std::vector<int>> ref = {{1, 2, 3, 4}};
    auto r = bleu_corpus(hyp, ref);
    EXPECT_DOUBLE_EQ(r.precisions[0], 1.0);
    EXPECT_NEAR(r.brevity_penalty, std::exp(-1.0), 1e-12);
    EXPECT_NEAR(r.bleu[0], 100.0 * std::exp(-1.0), 1e-9);
}

TEST(Bleu, SmoothingKeepsZeroOverlapFiniteAndSmall) {
    std::vector<std::vector<int>> hyp = {{5, 6}};
    std::vector<std::vector<int>> ref = {{1, 2}};
    auto r = bleu_corpus(hyp, ref);
    for (int n = 0; n < 4; ++n) {
        EXPECT_GE(r.bleu[n], 0.0);
        EXPECT_LT(r.bleu[n], 1e-4);
        EXPECT_TRUE(std::isfinite(r.bleu[n]));
    }
}

TEST(Bleu, Errors) {
    std::vector<std::vector<int>> one = {{1}};
    std::vector<std::vector<int>> two = {{1}, {2}};
    EXPECT_THROW(bleu_corpus({}, {}), data_error);
    EXPECT_THROW(bleu_corpus(one, two), data_error);
}

TEST(RougeL, HandCase) {
    // LCS of 1 2 3 4 and 2 4 5 is "2 4": P = 1/2, R = 2/3, F1 = 4/7.
    std::vector<std::vector<int>> hyp = {{1, 2, 3, 4}};
    std::vector<std::vector<int>> ref = {{2, 4, 5}};
    EXPECT_NEAR(rouge_l_f1(hyp, ref), 4.0 / 7.0, 1e-12);
}

TEST(RougeL, IdentityAndDisjointAverage) {
    std::vector<std::vector<int>> hyp = {{1, 2, 3}, {4, 5}};
    std::vector<std::vector<int>> ref = {{1, 2, 3}, {8, 9}};
    EXPECT_DOUBLE_EQ(rouge_l_f1(hyp, hyp), 1.0);
    EXPECT_DOUBLE_EQ(rouge_l_f1(hyp, ref), 0.5);
    EXPECT_THROW(rouge_l_f1(hyp, {{1}}), data_error);
}

TEST(EmissionLogs, JsonlRoundTrip) {
    namespace fs = std::filesystem;
    auto path = fs::path(::testing::TempDir()) / "emissions.jsonl";
    std::vector<EmissionLog> logs(2);
    logs[0].id = "a";
    logs[0].total_frames = 12;
    logs[0].frame_interval = 0.25;
    logs[0].tokens = {{3, 4, 1}, {5, 8, 2}, {2, 12, 3}};
    logs[1].id = "b";
    logs[1].total_frames = 3;
    logs[1].frame_interval = 1.0;
    logs[1].tokens = {{9, 3, 1}};
    save_emission_logs(logs, path);

    auto back = load_emission_logs(path);
    ASSERT_EQ(back.size(), 2u);
    for (size_t s = 0; s < 2; ++s) {
        EXPECT_EQ(back[s].id, logs[s].id);
        EXPECT_EQ(back[s].total_frames, logs[s].total_frames);
        EXPECT_DOUBLE_EQ(back[s].frame_interval, logs[s].frame_interval);
        ASSERT_EQ(back[s].tokens.size(), logs[s].tokens.size());
        for (size_t i = 0; i < logs[s].tokens.size(); ++i) {
            EXPECT_EQ(back[s].tokens[i].token, logs[s].tokens[i].token);
            EXPECT_EQ(back[s].tokens[i].frames_read, logs[s].tokens[i].frames_read);
            EXPECT_EQ(back[s].tokens[i].boundary_count, logs[s].tokens[i].boundary_count);
        }
    }
    EXPECT_EQ(back[0].token_ids(), (std::vector<int>{3, 5, 2}));
}

TEST(EmissionLogs, LoadErrors) {
    namespace fs = std::filesystem;
    EXPECT_THROW(load_emission_logs(fs::path(::testing::TempDir()) / "missing.jsonl"),
                 data_error);
    auto bad = fs::path(::testing::TempDir()) / "bad.jsonl";
    std::ofstream(bad) << "{not json\n";
    EXPECT_THROW(load_emission_logs(bad), data_error);
}

}  // namespace
