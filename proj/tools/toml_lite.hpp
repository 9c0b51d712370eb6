#pragma once

#include <stdexcept>
#include <string>

#include "json.hpp"

namespace toml_lite {

// Strict subset of TOML: [table] / [a.b] headers, bare keys, basic and literal strings,
// integers, floats, booleans and single-line arrays. Anything else is rejected.

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json parse(const std::string& text);

/// One TOML value, e.g. from a command-line override. Bare words read as strings.
nlohmann::json parse_value(const std::string& text);

/// Sets a dotted path such as "pretrain.lr" in `root`, creating tables as needed.
void set_path(nlohmann::json& root, const std::string& dotted, nlohmann::json value);

}  // namespace toml_lite
