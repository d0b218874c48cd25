#pragma once

#include <stdexcept>
#include <string>

namespace spdcsim {

/// @brief Bad or inconsistent user input (config files, CLI values, out-of-window wavelengths).
struct config_error : std::runtime_error {
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

/// @brief Physically impossible request (no phase-matching solution, degenerate sampling map).
struct physics_error : std::runtime_error {
    explicit physics_error(const std::string& what) : std::runtime_error(what) {}
};

/// @brief Filesystem failure while reading inputs or writing results.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace spdcsim
