#pragma once

#include <stdexcept>
#include <string>

namespace loccal {

// Base for every error the toolkit raises. The exit code is what the CLI
// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, int exit_code)
      : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

// Bad flags, missing files, missing auth, invalid probe configs.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, 2) {}
};

// Malformed or inconsistent input data, violated preconditions on data.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what, 3) {}
};

// Network failures, exhausted retries, offline cache misses.
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what) : Error(what, 4) {}
};

}  // namespace loccal
