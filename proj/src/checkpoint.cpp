#include "pedsleep/checkpoint.hpp"

#include "pedsleep/container.hpp"
#include "pedsleep/errors.hpp"

namespace pedsleep {

const Matrix* TensorFile::find(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return &m;
  return nullptr;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  Container c;
  c.header = file.meta;
  c.header["dtype"] = "f64le";
  c.header["version"] = kCheckpointVersion;
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  std::size_t total = 0;
  for (const auto& [name, m] : file.tensors) {
    entries.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", offset}});
    offset += static_cast<std::size_t>(m.size()) * 8;
    total += static_cast<std::size_t>(m.size());
    append_f64le(c.payload, std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
  }
  c.header["tensors"] = entries;
  c.header["shape"] = {total};
  write_container(path, c);
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.header.value("dtype", std::string()) != "f64le")
    throw DataError(path.string() + ": tensor file dtype must be f64le");
  const int version = c.header.value("version", 0);
  if (version != kCheckpointVersion)
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  TensorFile f;
  for (const auto& e : c.header.at("tensors")) {
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<std::vector<Eigen::Index>>();
    const auto offset = e.at("offset").get<std::size_t>();
    const auto count = static_cast<std::size_t>(shape.at(0) * shape.at(1));
    if (offset + count * 8 > c.payload.size())
      throw DataError(path.string() + ": tensor '" + name + "' extends past end of file");
    const auto values = read_f64le(std::span<const std::byte>(c.payload).subspan(offset), count);
    Matrix m(shape[0], shape[1]);
    std::copy(values.begin(), values.end(), m.data());
    f.tensors.emplace_back(name, std::move(m));
  }
  c.header.erase("tensors");
  f.meta = std::move(c.header);
  return f;
}

void append_state(TensorFile& file, const std::string& prefix, const ModelState& state) {
  state.visit(ConstParamVisitor(
      [&](const std::string& name, const Matrix& m) { file.tensors.emplace_back(prefix + name, m); }));
}

ModelState extract_state(const TensorFile& file, const std::string& prefix, const ModelConfig& cfg) {
  ModelState s = ModelState::zeros(cfg);
  s.visit(ParamVisitor([&](const std::string& name, Matrix& m) {
    const Matrix* src = file.find(prefix + name);
    if (!src) throw DataError("checkpoint is missing tensor '" + prefix + name + "'");
    if (src->rows() != m.rows() || src->cols() != m.cols())
      throw DataError("tensor '" + prefix + name + "' has shape [" + std::to_string(src->rows()) + ", " +
                      std::to_string(src->cols()) + "], model expects [" + std::to_string(m.rows()) + ", " +
                      std::to_string(m.cols()) + "]");
    m = *src;
  }));
  return s;
}

void save_model(const std::filesystem::path& path, const ModelState& state) {
  TensorFile f;
  f.meta = {{"kind", "model"}, {"model_config", to_json(state.config)}};
  append_state(f, "model/", state);
  write_tensor_file(path, f);
}

ModelState load_model(const std::filesystem::path& path) {
  const TensorFile f = read_tensor_file(path);
  if (!f.meta.contains("model_config")) throw DataError(path.string() + ": no model_config in header");
  // Training checkpoints carry both the latest and the best state; use best.
  const std::string prefix = f.meta.value("kind", std::string()) == "training" ? "best/" : "model/";
  return extract_state(f, prefix, model_config_from_json(f.meta.at("model_config")));
}

}  // namespace pedsleep
