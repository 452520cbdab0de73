#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "simulseq/common.hpp"

namespace simulseq {

// ---------------------------------------------------------------------------
// Emission logs
// ---------------------------------------------------------------------------

struct EmissionRecord {
    int token = 0;
    int frames_read = 0;     // frames consumed when this token was emitted
    int boundary_count = 0;  // fired boundaries at that moment
};

struct EmissionLog {
    std::string id;
    std::vector<EmissionRecord> tokens;
    int total_frames = 0;        // |X|
    double frame_interval = 1.0;  // T_s, seconds per frame

    std::vector<int> token_ids() const {
        std::vector<int> out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) out.push_back(t.token);
        return out;
    }
};

inline void save_emission_logs(const std::vector<EmissionLog>& logs,
                               const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw data_error("cannot write emission log " + path.string());
    for (const auto& log : logs) {
        nlohmann::json j{{"id", log.id},
                         {"total_frames", log.total_frames},
                         {"frame_interval", log.frame_interval},
                         {"tokens", nlohmann::json::array()}};
        for (const auto& t : log.tokens)
            j["tokens"].push_back({{"token", t.token},
                                   {"frames_read", t.frames_read},
                                   {"boundary_count", t.boundary_count}});
        f << j.dump() << "\n";
    }
}

inline std::vector<EmissionLog> load_emission_logs(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw data_error("cannot read emission log " + path.string());
    std::vector<EmissionLog> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw data_error(std::string("bad emission log line: ") + e.what());
        }
        EmissionLog log;
        log.id = j.at("id").get<std::string>();
        log.total_frames = j.at("total_frames").get<int>();
        log.frame_interval = j.at("frame_interval").get<double>();
        for (const auto& t : j.at("tokens")) {
            log.tokens.push_back({t.at("token").get<int>(), t.at("frames_read").get<int>(),
                                  t.at("boundary_count").get<int>()});
        }
        out.push_back(std::move(log));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Latency
// ---------------------------------------------------------------------------

/// Average lagging: mean oracle delay of the first tau tokens, where tau is
/// the first token emitted with the whole source read (falling back to the
/// last token when the stream ended without one, e.g. after an early stop).
inline double average_lagging(const EmissionLog& log, int ref_len) {
    if (log.tokens.empty()) throw data_error("average_lagging: no tokens emitted");
    if (ref_len < 1) throw data_error("average_lagging: reference length must be >= 1");
    int tau = static_cast<int>(log.tokens.size());
    for (size_t i = 0; i < log.tokens.size(); ++i) {
        if (log.tokens[i].frames_read >= log.total_frames) {
            tau = static_cast<int>(i) + 1;
            break;
        }
    }
    double ts = log.frame_interval;
    double rate = static_cast<double>(log.total_frames) / static_cast<double>(ref_len);
    double sum = 0.0;
    for (int i = 1; i <= tau; ++i)
        sum += ts * log.tokens[static_cast<size_t>(i - 1)].frames_read - rate * ts * (i - 1);
    return sum / tau;
}

/// Average proportion: mean fraction of the source consumed per emission.
inline double average_proportion(const EmissionLog& log) {
    if (log.tokens.empty()) throw data_error("average_proportion: no tokens emitted");
    double sum = 0.0;
    for (const auto& t : log.tokens) sum += t.frames_read;
    return sum / (static_cast<double>(log.total_frames) *
                  static_cast<double>(log.tokens.size()));
}

// ---------------------------------------------------------------------------
// BLEU / ROUGE-L
// ---------------------------------------------------------------------------

struct BleuResult {
    double bleu[4] = {0, 0, 0, 0};  // BLEU-1..4, 0..100
    double precisions[4] = {0, 0, 0, 0};
    double brevity_penalty = 0.0;
    int64_t hyp_len = 0, ref_len = 0;
};

// Corpus-level BLEU with modified n-gram precision and brevity penalty.
// Zero numerators (and empty denominators at high n) are smoothed by a fixed
// epsilon so scores stay defined on tiny corpora.
inline BleuResult bleu_corpus(const std::vector<std::vector<int>>& hyps,
                              const std::vector<std::vector<int>>& refs) {
    constexpr double kEps = 1e-9;
    if (hyps.empty() || hyps.size() != refs.size())
        throw data_error("bleu_corpus: need equally many hypotheses and references");
    int64_t match[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
    BleuResult r;
    auto count_ngrams = [](const std::vector<int>& toks, int n) {
        std::map<std::vector<int>, int64_t> c;
        for (size_t i = 0; i + n <= toks.size(); ++i)
            ++c[std::vector<int>(toks.begin() + static_cast<ptrdiff_t>(i),
                                 toks.begin() + static_cast<ptrdiff_t>(i + n))];
        return c;
    };
    for (size_t s = 0; s < hyps.size(); ++s) {
        r.hyp_len += static_cast<int64_t>(hyps[s].size());
        r.ref_len += static_cast<int64_t>(refs[s].size());
        for (int n = 1; n <= 4; ++n) {
            auto hc = count_ngrams(hyps[s], n);
            auto rc = count_ngrams(refs[s], n);
            for (const auto& [ng, c] : hc) {
                total[n - 1] += c;
                auto it = rc.find(ng);
                if (it != rc.end()) match[n - 1] += std::min(c, it->second);
            }
        }
    }
    r.brevity_penalty =
        r.hyp_len >= r.ref_len
            ? 1.0
            : (r.hyp_len == 0 ? 0.0
                              : std::exp(1.0 - static_cast<double>(r.ref_len) /
                                                   static_cast<double>(r.hyp_len)));
    for (int n = 0; n < 4; ++n)
        r.precisions[n] = total[n] > 0 ? std::max(static_cast<double>(match[n]), kEps) /
                                             static_cast<double>(total[n])
                                       : kEps;
    for (int k = 1; k <= 4; ++k) {
        double lp = 0.0;
        for (int n = 0; n < k; ++n) lp += std::log(r.precisions[n]);
        r.bleu[k - 1] = 100.0 * r.brevity_penalty * std::exp(lp / k);
    }
    return r;
}

// Sentence-level LCS F1 (equal precision/recall weight), averaged over the
// corpus; returns a value in [0,1].
inline double rouge_l_f1(const std::vector<std::vector<int>>& hyps,
                         const std::vector<std::vector<int>>& refs) {
    if (hyps.empty() || hyps.size() != refs.size())
        throw data_error("rouge_l_f1: need equally many hypotheses and references");
    double sum = 0.0;
    for (size_t s = 0; s < hyps.size(); ++s) {
        const auto& h = hyps[s];
        const auto& r = refs[s];
        if (h.empty() || r.empty()) continue;
        std::vector<std::vector<int>> dp(h.size() + 1, std::vector<int>(r.size() + 1, 0));
        for (size_t i = 1; i <= h.size(); ++i)
            for (size_t j = 1; j <= r.size(); ++j)
                dp[i][j] = h[i - 1] == r[j - 1] ? dp[i - 1][j - 1] + 1
                                                : std::max(dp[i - 1][j], dp[i][j - 1]);
        double lcs = dp[h.size()][r.size()];
        if (lcs == 0.0) continue;
        double p = lcs / static_cast<double>(h.size());
        double rec = lcs / static_cast<double>(r.size());
        sum += 2.0 * p * rec / (p + rec);
    }
    return sum / static_cast<double>(hyps.size());
}

}  // namespace simulseq
