#pragma once

#include <stdexcept>
#include <string>

namespace csense {

// Base class for all csense errors so the CLI can report them uniformly.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error("io error: " + what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

}  // namespace csense
