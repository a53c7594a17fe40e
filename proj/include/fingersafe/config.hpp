#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fingersafe/attack.hpp"
#include "fingersafe/evalharness.hpp"

namespace fingersafe::config {

// Plain-text configuration:
//
//   # comment
//   [attack]
//   epsilon = 8        ; 8-bit units, 8 => 8/255
//   lambda = 100
//
// Sections mirror module names: attack, scatnet, evalharness, cli. Keys are
// addressed as "section.key". Values are merged defaults <- FINGERSAFE_SEED
// <- file <- flags.
struct Settings {
  eval::BenchConfig bench;  // protection, synthetic set, sweeps and worker count
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

struct KeyInfo {
  const char* key;
  const char* help;
};
const std::vector<KeyInfo>& known_keys();

// Parses an INI stream into "section.key" pairs in file order; unknown keys
// and malformed lines raise ConfigError naming the key or line.
KeyValues parse(std::istream& in, const std::string& origin);

// Sets one "section.key" value; throws ConfigError naming the key when it is
// unknown or its value does not parse.
void apply(Settings& settings, const std::string& key, const std::string& value);

// Current value of a key, formatted as the config file would spell it.
std::string value_of(const Settings& settings, const std::string& key);

// A suite key anywhere in the merged input applies that preset first.
Settings load(const std::optional<std::filesystem::path>& file, const KeyValues& overrides);

std::string render(const Settings& settings);

}  // namespace fingersafe::config
