#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tempolm/checkpoint.hpp"

namespace tempolm {

/// FNV-1a over a file's bytes; used to pin the exact corpus a run consumed.
inline std::uint64_t fnv1a_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot hash file: " + path.string());
    std::uint64_t h = 1469598103934665603ULL;
    char buf[65536];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i)
            h = (h ^ std::uint8_t(buf[i])) * 1099511628211ULL;
        if (got < std::streamsize(sizeof buf)) break;
    }
    return h;
}

/// Provenance record written next to every command's outputs. Reports in the
/// same out-dir reference this manifest; rerunning with the recorded config
/// and seed reproduces the data outputs bit-identically (timestamps aside).
struct RunManifest {
    std::string command;
    std::string config_snapshot; ///< raw config text, when a config file was used
    std::string corpus_path;
    std::uint64_t corpus_hash = 0;
    std::string checkpoint_path;
    std::uint64_t seed = 0;
    std::vector<std::string> outputs;

    void write(const std::filesystem::path& path) const {
        nlohmann::json j;
        j["tool"] = "tempolm";
        j["tool_version"] = tool_version;
        j["command"] = command;
        j["seed"] = seed;
        if (!config_snapshot.empty()) j["config_snapshot"] = config_snapshot;
        if (!corpus_path.empty()) {
            j["corpus_path"] = corpus_path;
            j["corpus_fnv1a64"] = corpus_hash;
        }
        if (!checkpoint_path.empty()) j["checkpoint_path"] = checkpoint_path;
        j["outputs"] = outputs;
        const auto now = std::chrono::system_clock::now();
        j["written_unix_ms"] =
            std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count();
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
        out << j.dump(2) << '\n';
    }
};

} // namespace tempolm
