#pragma once

#include <string>

#include "cfmlab/bench.hpp"

namespace cfmlab {

// Minimal TOML-style experiment manifests: [section] headers, key = value
// pairs, '#' comments. Values are integers, floats, booleans, "strings" or
// [lists]. Sections: [suite], [train], [recipe.NAME]. Grammar documented in
// the README.
SuiteConfig parse_suite_file(const std::string& path);
SuiteConfig parse_suite_text(const std::string& text);

}  // namespace cfmlab
