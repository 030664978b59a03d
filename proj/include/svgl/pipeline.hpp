#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "svgl/error.hpp"
#include "svgl/io.hpp"

namespace svgl {

const std::vector<std::string>& command_names();

/// Every key a command accepts, with its default value. Throws ConfigError for
/// an unknown command.
Json default_config(const std::string& command);

/// Layer `file_config` and then dotted `key=value` overrides onto the defaults.
/// Unknown keys and values of the wrong type raise ConfigError.
Json resolve_config(const std::string& command, const Json& file_config,
                    const std::vector<std::pair<std::string, std::string>>& overrides);

/// Run one command with a resolved config. Writes resolved_config.json and
/// metrics.json next to the command's artifacts and returns the metrics.
Json run_command(const std::string& command, const Json& config);

int exit_code(ErrorCategory category) noexcept;

}  // namespace svgl
