#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dpnas {

// Flat key/value configuration with sections. Files look like
//
//   [dataset]
//   name = fashion-mnist
//
// and keys are addressed as "dataset.name"; dotted keys at top level are
// accepted too. Later assignments win.
class Config {
  public:
    static Config defaults();
    static Config from_file(const std::string& path);

    void parse_line(const std::string& line, const std::string& file,
                    int lineno);
    void merge_file(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value);

    std::string get_str(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    uint64_t get_seed(const std::string& key) const;

    std::string dump() const;  // grouped by section, stable order
    const std::map<std::string, std::string>& raw() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
    std::string section_;
};

}  // namespace dpnas
