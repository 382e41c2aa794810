#pragma once

#include <string_view>

#include <json.hpp>

namespace qc {

// Reads the TOML subset used by experiment configs into JSON:
//   key = value pairs (bare or quoted keys, dotted keys not supported)
//   [table] and [[array.of.tables]] headers (dotted headers nest)
//   basic and literal strings, integers, floats, booleans
//   arrays of those values, possibly spanning several lines
//   '#' comments
// Throws ConfigError with the line number on anything else.
nlohmann::json parse_toml(std::string_view text);

}  // namespace qc
