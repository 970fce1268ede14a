#include "pedsleep/edf.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>

namespace pedsleep {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n\0");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n\0");
  return std::string(s.substr(b, e - b + 1));
}

class HeaderReader {
 public:
  HeaderReader(const std::vector<char>& bytes) : bytes_(bytes) {}

  std::string text(std::size_t width, const std::string& field) {
    if (pos_ + width > bytes_.size())
      throw EdfError(field, "header truncated at byte " + std::to_string(pos_));
    std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + width);
    pos_ += width;
    return trim(s);
  }

  long integer(std::size_t width, const std::string& field) {
    auto s = text(width, field);
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
      throw EdfError(field, "not an integer: '" + s + "'");
    return v;
  }

  double real(std::size_t width, const std::string& field) {
    auto s = text(width, field);
    try {
      std::size_t used = 0;
      double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw EdfError(field, "not a number: '" + s + "'");
    }
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

EdfHeader parse_header(const std::vector<char>& bytes) {
  HeaderReader r(bytes);
  EdfHeader h;
  h.version = r.text(8, "version");
  h.patient = r.text(80, "patient_id");
  h.recording = r.text(80, "recording_id");
  r.text(8, "start_date");
  r.text(8, "start_time");
  h.header_bytes = static_cast<int>(r.integer(8, "header_bytes"));
  r.text(44, "reserved");
  h.num_records = r.integer(8, "num_records");
  h.record_duration = r.real(8, "record_duration");
  const long ns = r.integer(4, "num_signals");
  if (ns <= 0) throw EdfError("num_signals", "must be positive, got " + std::to_string(ns));
  if (h.record_duration <= 0)
    throw EdfError("record_duration", "must be positive, got " + std::to_string(h.record_duration));
  if (h.header_bytes != 256 + 256 * ns)
    throw EdfError("header_bytes", "expected " + std::to_string(256 + 256 * ns) + " for " +
                                       std::to_string(ns) + " signals, got " +
                                       std::to_string(h.header_bytes));

  h.signals.resize(static_cast<std::size_t>(ns));
  auto each = [&](auto&& fn) {
    for (long i = 0; i < ns; ++i) fn(h.signals[static_cast<std::size_t>(i)], i);
  };
  auto name = [](const char* f, long i) { return std::string(f) + "[" + std::to_string(i) + "]"; };
  each([&](auto& s, long i) { s.label = r.text(16, name("label", i)); });
  each([&](auto&, long i) { r.text(80, name("transducer", i)); });
  each([&](auto& s, long i) { s.physical_dimension = r.text(8, name("physical_dimension", i)); });
  each([&](auto& s, long i) { s.physical_min = r.real(8, name("physical_min", i)); });
  each([&](auto& s, long i) { s.physical_max = r.real(8, name("physical_max", i)); });
  each([&](auto& s, long i) { s.digital_min = static_cast<int>(r.integer(8, name("digital_min", i))); });
  each([&](auto& s, long i) { s.digital_max = static_cast<int>(r.integer(8, name("digital_max", i))); });
  each([&](auto&, long i) { r.text(80, name("prefiltering", i)); });
  each([&](auto& s, long i) {
    s.samples_per_record = static_cast<int>(r.integer(8, name("samples_per_record", i)));
    if (s.samples_per_record <= 0)
      throw EdfError(name("samples_per_record", i), "must be positive");
  });
  each([&](auto&, long i) { r.text(32, name("reserved", i)); });
  each([&](auto& s, long i) {
    if (s.digital_max == s.digital_min)
      throw EdfError(name("digital_max", i), "zero digital range for signal '" + s.label + "'");
  });
  return h;
}

const std::map<std::string, std::string>& builtin_aliases() {
  static const std::map<std::string, std::string> aliases = {
      {"SAO2", "SPO2"},
      {"CO2", "CAPNO"},
      {"ETCO2", "CAPNO"},
      {"THOR", "RESP THORACIC"},
      {"CHEST", "RESP THORACIC"},
      {"THORACIC", "RESP THORACIC"},
      {"ABD", "RESP ABDOMINAL"},
      {"ABDOMEN", "RESP ABDOMINAL"},
      {"ABDOMINAL", "RESP ABDOMINAL"},
      {"FLOW", "C-FLOW"},
      {"CFLOW", "C-FLOW"},
      {"CHIN", "EMG CHIN1-CHIN2"},
      {"LOC", "EOG LOC-M2"},
      {"E1-M2", "EOG LOC-M2"},
      {"ROC", "EOG ROC-M1"},
      {"E2-M1", "EOG ROC-M1"},
  };
  return aliases;
}

std::string strip_modality(const std::string& normalized) {
  for (const char* prefix : {"EEG ", "EOG ", "EMG "})
    if (normalized.rfind(prefix, 0) == 0) return normalized.substr(4);
  return normalized;
}

}  // namespace

std::string normalize_channel_label(std::string_view label) {
  std::string out;
  bool space = false;
  for (char c : trim(label)) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  return out;
}

double digital_to_physical(const EdfSignalHeader& sig, int digital) {
  const double scale = (sig.physical_max - sig.physical_min) /
                       static_cast<double>(sig.digital_max - sig.digital_min);
  return sig.physical_min + (digital - sig.digital_min) * scale;
}

std::vector<float> resample_linear(std::span<const double> x, double from_rate, double to_rate) {
  if (x.empty()) return {};
  const double duration = static_cast<double>(x.size()) / from_rate;
  const auto n_out = static_cast<std::size_t>(std::floor(duration * to_rate + 1e-9));
  std::vector<float> out(n_out);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double pos = static_cast<double>(k) * from_rate / to_rate;
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(i);
    const double a = x[std::min(i, x.size() - 1)];
    const double b = x[std::min(i + 1, x.size() - 1)];
    out[k] = static_cast<float>(a + frac * (b - a));
  }
  return out;
}

EdfHeader parse_edf_header(const std::filesystem::path& path) { return parse_header(read_file(path)); }

EdfIngest ingest_edf(const std::filesystem::path& path, const EdfOptions& opts) {
  const auto bytes = read_file(path);
  const auto h = parse_header(bytes);
  const std::size_t ns = h.signals.size();

  std::size_t record_bytes = 0;
  for (const auto& s : h.signals) record_bytes += 2 * static_cast<std::size_t>(s.samples_per_record);
  const std::size_t data_bytes = bytes.size() - static_cast<std::size_t>(h.header_bytes);
  long num_records = h.num_records;
  if (num_records < 0) {
    // -1 marks a recording still being written; infer from the file size.
    num_records = static_cast<long>(data_bytes / record_bytes);
  }
  const std::size_t expected = record_bytes * static_cast<std::size_t>(num_records);
  if (data_bytes < expected) {
    const auto bad_record = data_bytes / record_bytes;
    throw EdfError("data_record", "record " + std::to_string(bad_record) + " truncated: expected " +
                                      std::to_string(expected) + " bytes of data records, found " +
                                      std::to_string(data_bytes));
  }
  if (data_bytes > expected)
    throw EdfError("num_records", "header declares " + std::to_string(num_records) +
                                      " records (" + std::to_string(expected) +
                                      " bytes) but file holds " + std::to_string(data_bytes) +
                                      " bytes of data");

  // Map each requested channel to a source signal index.
  std::map<std::string, std::string> aliases = builtin_aliases();
  for (const auto& [k, v] : opts.aliases) aliases[normalize_channel_label(k)] = v;
  std::map<std::string, std::size_t> canonical_pos;
  for (std::size_t i = 0; i < opts.channels.size(); ++i)
    canonical_pos[normalize_channel_label(opts.channels[i])] = i;

  std::vector<long> source_for(opts.channels.size(), -1);
  EdfIngest result;
  for (std::size_t s = 0; s < ns; ++s) {
    const auto label = normalize_channel_label(h.signals[s].label);
    std::optional<std::size_t> target;
    if (auto it = canonical_pos.find(label); it != canonical_pos.end()) target = it->second;
    if (!target) {
      if (auto a = aliases.find(label); a != aliases.end())
        if (auto it = canonical_pos.find(normalize_channel_label(a->second)); it != canonical_pos.end())
          target = it->second;
    }
    if (!target) {
      for (const auto& [canon, pos] : canonical_pos)
        if (strip_modality(canon) == label) target = pos;
    }
    if (target && source_for[*target] < 0) {
      source_for[*target] = static_cast<long>(s);
    } else {
      result.dropped_channels.push_back(h.signals[s].label);
    }
  }

  std::vector<std::string> kept_names;
  std::vector<std::vector<float>> kept;
  const char* p = bytes.data() + h.header_bytes;
  for (std::size_t c = 0; c < opts.channels.size(); ++c) {
    if (source_for[c] < 0) {
      result.missing_channels.push_back(opts.channels[c]);
      continue;
    }
    const auto s = static_cast<std::size_t>(source_for[c]);
    const auto& sig = h.signals[s];
    std::size_t offset = 0;
    for (std::size_t k = 0; k < s; ++k) offset += 2 * static_cast<std::size_t>(h.signals[k].samples_per_record);
    std::vector<double> physical;
    physical.reserve(static_cast<std::size_t>(num_records) * sig.samples_per_record);
    for (long rec = 0; rec < num_records; ++rec) {
      const auto* q = reinterpret_cast<const unsigned char*>(p + rec * record_bytes + offset);
      for (int i = 0; i < sig.samples_per_record; ++i) {
        const auto raw = static_cast<std::int16_t>(q[2 * i] | (q[2 * i + 1] << 8));
        physical.push_back(digital_to_physical(sig, raw));
      }
    }
    const double rate = sig.samples_per_record / h.record_duration;
    if (std::abs(rate - opts.target_rate) < 1e-9) {
      kept.emplace_back(physical.begin(), physical.end());
    } else {
      kept.push_back(resample_linear(physical, rate, opts.target_rate));
    }
    kept_names.push_back(opts.channels[c]);
  }
  if (kept.empty()) throw EdfError("label", "no signal matches any requested channel");

  std::size_t n = kept.front().size();
  for (const auto& k : kept) n = std::min(n, k.size());
  Recording& rec = result.recording;
  rec.recording_id = path.stem().string();
  rec.sample_rate = opts.target_rate;
  rec.channels = make_channels(kept_names);
  rec.samples.resize(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(n));
  for (std::size_t c = 0; c < kept.size(); ++c)
    for (std::size_t i = 0; i < n; ++i) rec.samples(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i)) = kept[c][i];
  for (const auto& m : result.missing_channels) rec.warnings.push_back("missing channel '" + m + "'");
  return result;
}

}  // namespace pedsleep
