#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"

namespace cli {

// Bad flag values or config keys discovered after parsing; exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  bool deterministic = false;
  std::optional<std::uint64_t> seed;
};

// Registers every subcommand on `app`. The callback of whichever subcommand
// is parsed stores its work in `action`; main runs it inside the error
// handler so failures map to exit codes.
void add_commands(CLI::App& app, Globals& globals, std::function<void()>& action);

}  // namespace cli
