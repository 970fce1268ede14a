#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pedsleep/data.hpp"
#include "pedsleep/nn.hpp"
#include "pedsleep/rng.hpp"

namespace pedsleep {

struct ModelConfig {
  int channels = 16;
  int samples = 3840;  // T, samples per epoch
  int patch = 8;       // p
  int dim = 64;        // d
  double mask_ratio = 0.5;
  int enc_layers = 3;
  int dec_layers = 3;
  int heads = 4;
  double mlp_ratio = 4.0;
  bool stratified_mask = false;  // per-channel masking, for ablations
  std::uint64_t seed = 0;

  int patches() const { return samples / patch; }
  int tokens() const { return channels * patches(); }
  int hidden() const;

  // Throws DataError on T mod p != 0, m outside [0,1), d <= p, d mod heads != 0.
  void validate() const;

  static ModelConfig full_scale() { return {}; }
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// [C x N x p] stored as a [(C*N) x p] matrix; token (c, n) is row c*N + n.
struct PatchGrid {
  int channels = 0;
  int patches = 0;
  Matrix values;

  int patch_size() const { return static_cast<int>(values.cols()); }
  double at(int c, int n, int k) const { return values(c * patches + n, k); }
};

// [C x N x d] stored as [(C*N) x d], same token order as PatchGrid.
struct LatentGrid {
  int channels = 0;
  int patches = 0;
  Matrix tokens;
};

// Pooled per-epoch feature vector, length C*N, channel-major.
struct Embedding {
  Eigen::VectorXd vector;
};

struct MaskSpec {
  std::vector<std::uint8_t> masked;  // over the flattened C*N token grid
  double ratio = 0.0;

  std::size_t count() const;
  std::vector<int> visible_tokens() const;
  std::vector<int> masked_tokens() const;
  bool empty() const { return count() == 0; }
};

struct ModelState {
  ModelConfig config;
  Matrix patch_w, patch_b;  // [p x d], [1 x d]
  Matrix enc_pos;           // [C*N x d]
  Matrix mask_token;        // [1 x d]
  Matrix dec_pos;           // [C*N x d]
  std::vector<BlockParams> encoder;
  std::vector<BlockParams> decoder;
  Matrix dec_norm_g, dec_norm_b;
  Matrix head_w, head_b;  // [d x p], [1 x p]

  static ModelState initialize(const ModelConfig& cfg);
  static ModelState zeros(const ModelConfig& cfg);

  void visit(const ParamVisitor& fn);
  void visit(const ConstParamVisitor& fn) const;
  void set_zero();

  std::size_t param_count() const;
  std::uint64_t checksum() const;
  bool all_finite() const;
};

PatchGrid patchify(const Matrix& data, int patch);
PatchGrid patchify(const Signal& data, int patch);
Matrix unpatchify(const PatchGrid& grid);

MaskSpec sample_mask(const ModelConfig& cfg, Rng& rng);
MaskSpec empty_mask(const ModelConfig& cfg);
// Every token of `channel` masked, nothing else.
MaskSpec channel_mask(const ModelConfig& cfg, int channel);

struct ForwardResult {
  PatchGrid reconstruction;
  LatentGrid latent;  // encoder outputs, mask token at masked positions
};

ForwardResult forward(const ModelState& state, const PatchGrid& input, const MaskSpec& mask);

// Mean squared error over masked patch entries; over all entries when the
// mask is empty.
double reconstruction_loss(const PatchGrid& reconstruction, const PatchGrid& target, const MaskSpec& mask);

// Forward + backward for one sample. Adds scale * dLoss/dparam into `grad`
// and returns the (unscaled) loss.
double loss_and_grad(const ModelState& state, const PatchGrid& target, const MaskSpec& mask,
                     ModelState& grad, double scale = 1.0);

LatentGrid encode(const ModelState& state, const PatchGrid& input);
PatchGrid decode(const ModelState& state, const LatentGrid& latent);

Embedding pool_embedding(const LatentGrid& latent);
std::pair<Embedding, LatentGrid> embed_epoch(const ModelState& state, const SleepEpoch& epoch);

}  // namespace pedsleep
