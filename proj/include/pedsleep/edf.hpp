#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pedsleep/data.hpp"
#include "pedsleep/errors.hpp"

namespace pedsleep {

// Structured EDF parse failure; `field` names the offending header field
// (or "data_record" for payload problems).
class EdfError : public DataError {
 public:
  EdfError(std::string field, const std::string& message)
      : DataError("EDF " + field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct EdfSignalHeader {
  std::string label;
  std::string physical_dimension;
  double physical_min = 0;
  double physical_max = 0;
  int digital_min = 0;
  int digital_max = 0;
  int samples_per_record = 0;
};

struct EdfHeader {
  std::string version;
  std::string patient;
  std::string recording;
  int header_bytes = 0;
  long num_records = 0;
  double record_duration = 0;
  std::vector<EdfSignalHeader> signals;
};

struct EdfOptions {
  double target_rate = 128.0;
  std::vector<std::string> channels = canonical_channels();
  // Normalized source label -> canonical name. Matching is case-insensitive
  // and whitespace-insensitive; these extend the built-in aliases.
  std::map<std::string, std::string> aliases;
};

struct EdfIngest {
  Recording recording;
  std::vector<std::string> missing_channels;
  std::vector<std::string> dropped_channels;
};

// Linear digital -> physical mapping from the signal's calibration fields.
double digital_to_physical(const EdfSignalHeader& sig, int digital);

EdfHeader parse_edf_header(const std::filesystem::path& path);

// Reads an EDF file, scales to physical units, resamples every matched
// channel to `target_rate` and orders channels as in `opts.channels`.
// Unmatched signals are dropped; canonical channels absent from the file are
// reported in `missing_channels` (and in the recording's warnings).
EdfIngest ingest_edf(const std::filesystem::path& path, const EdfOptions& opts = {});

// Uppercased, whitespace-collapsed label used for channel matching.
std::string normalize_channel_label(std::string_view label);

// Linear-interpolation resampling of one channel.
std::vector<float> resample_linear(std::span<const double> x, double from_rate, double to_rate);

}  // namespace pedsleep
