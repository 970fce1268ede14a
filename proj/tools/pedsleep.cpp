#include <iostream>

#include "commands.hpp"
#include "pedsleep/errors.hpp"
#include "pedsleep/parallel.hpp"

namespace {

constexpr int kUsageError = 2;
constexpr int kDataError = 3;
constexpr int kNumericError = 4;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked autoencoder pipeline for multichannel sleep recordings", "pedsleep"};
  app.require_subcommand(1);
  cli::Globals globals;
  std::function<void()> action;
  app.add_flag("--deterministic", globals.deterministic, "Single-threaded, bit-reproducible execution");
  app.add_option("--seed", globals.seed, "Global seed (falls back to config, then $PEDSLEEP_SEED, then 0)");
  cli::add_commands(app, globals, action);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsageError;
  }
  if (globals.deterministic) pedsleep::set_worker_count(1);

  try {
    if (action) action();
    return 0;
  } catch (const cli::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const pedsleep::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const pedsleep::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
}
