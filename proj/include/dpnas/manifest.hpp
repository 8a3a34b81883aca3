#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dpnas {

inline constexpr const char* kVersion = "0.1.0";

// One manifest per output directory; reruns with an identical manifest
// (timestamps aside) reproduce identical single-worker results.
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    std::map<std::string, std::string> config;
    std::string version = kVersion;
    uint64_t seed = 0;
    std::string started_at;
    std::string finished_at;
    std::string out_dir;

    void save(const std::string& path) const;
    static RunManifest load(const std::string& path);
};

std::string now_iso8601();

}  // namespace dpnas
