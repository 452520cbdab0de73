#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "simulseq/common.hpp"
#include "simulseq/synthetic.hpp"  // little-endian check helpers

namespace simulseq {

/// Teacher-forced teacher logits for distillation, keyed by sample id. Each
/// record holds one row of text-vocab logits per target position (targets =
/// text tokens followed by eos).
struct TeacherLogitStore {
    double gamma = 2.0;  // temperature the logits are meant to be used with
    int vocab = 0;
    std::vector<std::string> order;  // insertion order, for deterministic round-trips
    std::unordered_map<std::string, std::vector<std::vector<double>>> by_id;

    const std::vector<std::vector<double>>* find(const std::string& id) const {
        auto it = by_id.find(id);
        return it == by_id.end() ? nullptr : &it->second;
    }

    void add(const std::string& id, std::vector<std::vector<double>> rows) {
        if (by_id.count(id)) throw data_error("teacher logits: duplicate id '" + id + "'");
        for (const auto& r : rows)
            if (static_cast<int>(r.size()) != vocab)
                throw dim_error("teacher logits: row width " + std::to_string(r.size()) +
                                " != vocab " + std::to_string(vocab));
        order.push_back(id);
        by_id.emplace(id, std::move(rows));
    }
};

namespace detail {
constexpr char kLogitMagic[4] = {'S', 'T', 'L', 'G'};
constexpr uint32_t kLogitVersion = 1;
}  // namespace detail

inline void save_teacher_logits(const std::filesystem::path& path,
                                const TeacherLogitStore& store) {
    if (!detail::little_endian_host())
        throw data_error("teacher logits: binary format requires a little-endian host");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("teacher logits: cannot open " + path.string() + " for writing");
    out.write(detail::kLogitMagic, 4);
    auto put_u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_u64 = [&](uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    put_u32(detail::kLogitVersion);
    out.write(reinterpret_cast<const char*>(&store.gamma), 8);
    put_u32(static_cast<uint32_t>(store.vocab));
    put_u64(store.order.size());
    for (const auto& id : store.order) {
        const auto& rows = store.by_id.at(id);
        put_u64(id.size());
        out.write(id.data(), static_cast<std::streamsize>(id.size()));
        put_u64(rows.size());
        for (const auto& r : rows)
            out.write(reinterpret_cast<const char*>(r.data()),
                      static_cast<std::streamsize>(r.size() * sizeof(double)));
    }
    if (!out) throw data_error("teacher logits: write failed for " + path.string());
}

inline TeacherLogitStore load_teacher_logits(const std::filesystem::path& path) {
    if (!detail::little_endian_host())
        throw data_error("teacher logits: binary format requires a little-endian host");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("teacher logits: cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, detail::kLogitMagic, 4) != 0)
        throw data_error("teacher logits: bad magic in " + path.string());
    auto get_u32 = [&]() {
        uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto get_u64 = [&]() {
        uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    if (get_u32() != detail::kLogitVersion)
        throw data_error("teacher logits: unsupported version in " + path.string());
    TeacherLogitStore store;
    in.read(reinterpret_cast<char*>(&store.gamma), 8);
    store.vocab = static_cast<int>(get_u32());
    uint64_t count = get_u64();
    for (uint64_t i = 0; i < count; ++i) {
        uint64_t id_len = get_u64();
        std::string id(id_len, '\0');
        in.read(id.data(), static_cast<std::streamsize>(id_len));
        uint64_t positions = get_u64();
        std::vector<std::vector<double>> rows(positions,
                                              std::vector<double>(static_cast<size_t>(store.vocab)));
        for (auto& r : rows)
            in.read(reinterpret_cast<char*>(r.data()),
                    static_cast<std::streamsize>(r.size() * sizeof(double)));
        if (!in) throw data_error("teacher logits: truncated file " + path.string());
        store.add(id, std::move(rows));
    }
    return store;
}

}  // namespace simulseq
