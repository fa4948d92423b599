#pragma once

#include <string>
#include <utility>
#include <vector>

namespace gptx {

// Line-oriented `key=value` file; blank lines and '#' comments allowed.
// Later assignments override earlier ones. Key validation against the
// accepting command's option set happens at the call site.
std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path);

}  // namespace gptx
