#include "dpnas/manifest.hpp"

#include <ctime>
#include <fstream>

#include <json.hpp>

#include "dpnas/common.hpp"

namespace dpnas {

using nlohmann::json;

std::string now_iso8601() {
    char buf[32];
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void RunManifest::save(const std::string& path) const {
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["version"] = version;
    j["seed"] = seed;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    j["out_dir"] = out_dir;
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << j.dump(2) << "\n";
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const json::parse_error& e) {
        throw DataError(path + ": corrupt manifest: " + e.what());
    }
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.argv = j.value("argv", std::vector<std::string>{});
    m.config = j.value("config", std::map<std::string, std::string>{});
    m.version = j.value("version", "");
    m.seed = j.value("seed", uint64_t{0});
    m.started_at = j.value("started_at", "");
    m.finished_at = j.value("finished_at", "");
    m.out_dir = j.value("out_dir", "");
    return m;
}

}  // namespace dpnas
