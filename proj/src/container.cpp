#include "pedsleep/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pedsleep/errors.hpp"

namespace pedsleep {

namespace {

template <typename U>
void put_le(std::vector<std::byte>& out, U bits) {
  for (std::size_t i = 0; i < sizeof(U); ++i)
    out.push_back(static_cast<std::byte>((bits >> (8 * i)) & 0xffU));
}

template <typename U>
U get_le(const std::byte* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(std::to_integer<unsigned>(p[i])) << (8 * i);
  return v;
}

}  // namespace

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32le") return 4;
  if (dtype == "f64le") return 8;
  throw DataError("unsupported dtype '" + dtype + "' (expected f32le or f64le)");
}

void append_f32le(std::vector<std::byte>& out, std::span<const float> values) {
  out.reserve(out.size() + values.size() * 4);
  for (float v : values) put_le(out, std::bit_cast<std::uint32_t>(v));
}

void append_f64le(std::vector<std::byte>& out, std::span<const double> values) {
  out.reserve(out.size() + values.size() * 8);
  for (double v : values) put_le(out, std::bit_cast<std::uint64_t>(v));
}

std::vector<float> read_f32le(std::span<const std::byte> bytes, std::size_t count) {
  if (bytes.size() < count * 4)
    throw DataError("payload too short: expected " + std::to_string(count * 4) +
                    " bytes, found " + std::to_string(bytes.size()));
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes.data() + 4 * i));
  return out;
}

std::vector<double> read_f64le(std::span<const std::byte> bytes, std::size_t count) {
  if (bytes.size() < count * 8)
    throw DataError("payload too short: expected " + std::to_string(count * 8) +
                    " bytes, found " + std::to_string(bytes.size()));
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes.data() + 8 * i));
  return out;
}

std::vector<std::byte> serialize_container(const Container& c) {
  const std::string header = c.header.dump();
  std::vector<std::byte> out;
  out.reserve(8 + header.size() + c.payload.size());
  for (char ch : kMagic) out.push_back(static_cast<std::byte>(ch));
  put_le(out, static_cast<std::uint32_t>(header.size()));
  for (char ch : header) out.push_back(static_cast<std::byte>(ch));
  out.insert(out.end(), c.payload.begin(), c.payload.end());
  return out;
}

Container parse_container(std::span<const std::byte> bytes, const std::string& source) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw DataError(source + ": missing PSGT magic bytes");
  const auto len = get_le<std::uint32_t>(bytes.data() + 4);
  if (bytes.size() < 8 + static_cast<std::size_t>(len))
    throw DataError(source + ": header length " + std::to_string(len) + " exceeds file size");
  Container c;
  const auto* begin = reinterpret_cast<const char*>(bytes.data() + 8);
  try {
    c.header = nlohmann::json::parse(begin, begin + len);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(source + ": malformed JSON header: " + e.what());
  }
  c.payload.assign(bytes.begin() + 8 + len, bytes.end());
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const auto bytes = serialize_container(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::span<const std::byte> bytes(reinterpret_cast<const std::byte*>(raw.data()), raw.size());
  return parse_container(bytes, path.string());
}

}  // namespace pedsleep
