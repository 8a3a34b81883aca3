#include "dpnas/config.hpp"

#include <fstream>
#include <sstream>

#include "dpnas/common.hpp"

namespace dpnas {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::defaults() {
    Config c;
    c.set("dataset.name", "fashion-mnist");
    c.set("dataset.root", "");  // falls back to DPNAS_DATA_ROOT
    c.set("dataset.val_fraction", "0.10");
    c.set("dataset.seed", "0");

    c.set("search.total", "2500");
    c.set("search.explore", "1500");
    c.set("search.decay_every", "100");
    c.set("search.alpha", "0.1");
    c.set("search.gamma", "1.0");
    c.set("search.q_default", "0.5");
    c.set("search.replay_batch", "64");
    c.set("search.flat_cap", "262144");
    c.set("search.max_channels", "1024");
    c.set("search.max_kernel", "11");
    c.set("search.train_cap", "0");
    c.set("search.val_cap", "0");
    c.set("search.moving_avg_window", "50");
    c.set("search.classes", "");

    c.set("train.epochs", "30");
    c.set("train.lr", "0.001");
    c.set("train.batch", "128");

    c.set("continual.mode", "single-head");
    c.set("continual.core", "per-task:10");
    c.set("continual.increments", "0,1|2,3|4,5|6,7|8,9");

    c.set("run.seed", "0");
    c.set("run.embed_batch", "256");
    return c;
}

Config Config::from_file(const std::string& path) {
    Config c = defaults();
    c.merge_file(path);
    return c;
}

void Config::merge_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    section_.clear();
    while (std::getline(f, line)) parse_line(line, path, ++lineno);
    section_.clear();
}

void Config::parse_line(const std::string& line, const std::string& file,
                        int lineno) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') return;
    if (t.front() == '[') {
        if (t.back() != ']')
            throw ConfigError(file + ":" + std::to_string(lineno) +
                              ": unterminated section header");
        section_ = trim(t.substr(1, t.size() - 2));
        return;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
        throw ConfigError(file + ":" + std::to_string(lineno) +
                          ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (!section_.empty() && key.find('.') == std::string::npos)
        key = section_ + "." + key;
    set(key, value);
}

void Config::set(const std::string& key, const std::string& value) {
    values_[key] = value;
}

std::string Config::get_str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key " + key);
    return it->second;
}

int64_t Config::get_int(const std::string& key) const {
    try {
        return std::stoll(get_str(key));
    } catch (const std::invalid_argument&) {
        throw ConfigError("config key " + key + " is not an integer: '" +
                          get_str(key) + "'");
    }
}

double Config::get_double(const std::string& key) const {
    try {
        return std::stod(get_str(key));
    } catch (const std::invalid_argument&) {
        throw ConfigError("config key " + key + " is not a number: '" +
                          get_str(key) + "'");
    }
}

uint64_t Config::get_seed(const std::string& key) const {
    return uint64_t(std::stoull(get_str(key)));
}

std::string Config::dump() const {
    std::ostringstream out;
    std::string section;
    for (const auto& [key, value] : values_) {
        const auto dot = key.find('.');
        const std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
        const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
        if (sec != section) {
            if (!section.empty() || !out.str().empty()) out << "\n";
            out << "[" << sec << "]\n";
            section = sec;
        }
        out << name << " = " << value << "\n";
    }
    return out.str();
}

}  // namespace dpnas
