#include "gptx/config.hpp"

#include <fstream>
#include <stdexcept>

namespace gptx {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    size_t e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw std::runtime_error("config " + path + ":" + std::to_string(lineno) +
                                     ": expected key=value, got '" + t + "'");
        }
        entries.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return entries;
}

}  // namespace gptx
