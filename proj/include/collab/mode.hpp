#pragma once

#include <string>
#include <string_view>

namespace collab {

// Which platform's feature set and defaults apply.
enum class Mode { github, wikipedia };

Mode parse_mode(std::string_view text);
std::string to_string(Mode mode);

}  // namespace collab
