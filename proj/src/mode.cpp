#include "collab/mode.hpp"

#include "collab/error.hpp"

namespace collab {

Mode parse_mode(std::string_view text) {
    if (text == "github") return Mode::github;
    if (text == "wikipedia") return Mode::wikipedia;
    throw InputError("unknown mode '" + std::string(text) + "' (expected github or wikipedia)");
}

std::string to_string(Mode mode) {
    return mode == Mode::github ? "github" : "wikipedia";
}

}  // namespace collab
