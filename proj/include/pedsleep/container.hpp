#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace pedsleep {

// The PSGT binary container:
//
//   "PSGT" | u32 LE header length | UTF-8 JSON header | payload
//
// The header always carries "shape" and "dtype" ("f32le" or "f64le"); the
// payload is the row-major little-endian array those two describe. Tensor
// bundles (checkpoints) list several named arrays in "tensors" and
// concatenate their payloads.
struct Container {
  nlohmann::json header;
  std::vector<std::byte> payload;
};

inline constexpr char kMagic[4] = {'P', 'S', 'G', 'T'};

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

std::vector<std::byte> serialize_container(const Container& c);
Container parse_container(std::span<const std::byte> bytes, const std::string& source = "<memory>");

void append_f32le(std::vector<std::byte>& out, std::span<const float> values);
void append_f64le(std::vector<std::byte>& out, std::span<const double> values);
std::vector<float> read_f32le(std::span<const std::byte> bytes, std::size_t count);
std::vector<double> read_f64le(std::span<const std::byte> bytes, std::size_t count);

std::size_t dtype_size(const std::string& dtype);

}  // namespace pedsleep
