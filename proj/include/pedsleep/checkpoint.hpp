#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pedsleep/model.hpp"

namespace pedsleep {

inline constexpr int kCheckpointVersion = 1;

// Named f64 tensors in one PSGT container. The header's "tensors" array
// records name, shape and byte offset of each entry in payload order.
struct TensorFile {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix* find(const std::string& name) const;
};

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

// Adds every parameter of `state` to `file` under `prefix`.
void append_state(TensorFile& file, const std::string& prefix, const ModelState& state);

// Fills a state shaped by `cfg` from tensors under `prefix`, checking each
// tensor's shape; a missing or mis-shaped tensor throws DataError naming it.
ModelState extract_state(const TensorFile& file, const std::string& prefix, const ModelConfig& cfg);

void save_model(const std::filesystem::path& path, const ModelState& state);
ModelState load_model(const std::filesystem::path& path);

}  // namespace pedsleep
