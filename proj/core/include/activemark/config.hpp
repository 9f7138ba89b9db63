#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>

#include <nlohmann/json.hpp>

namespace activemark {

/// Parses the TOML subset used for configs: [tables] and [dotted.tables], bare or
/// quoted (dotted) keys, basic and literal strings, integers, floats, booleans,
/// arrays (may span lines) and inline tables. Throws ConfigError with a line number.
nlohmann::json parse_toml(std::string_view text);

/// Loads a .toml or .json config into a JSON object. Anything other than a
/// .toml extension is read as JSON. IoError when missing, ConfigError when malformed.
nlohmann::json load_config(const std::filesystem::path& path);

/// Value of ACTIVEMARK_SEED, if set. ConfigError if it is not an unsigned integer.
std::optional<std::uint64_t> seed_from_env();

/// Looks up a dotted path ("train.steps") in a config object.
const nlohmann::json* config_lookup(const nlohmann::json& config, std::string_view dotted);

}  // namespace activemark
