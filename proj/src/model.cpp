#include "pedsleep/model.hpp"

#include <cmath>
#include <sstream>

#include "pedsleep/errors.hpp"

namespace pedsleep {

int ModelConfig::hidden() const { return std::max(1, static_cast<int>(std::lround(dim * mlp_ratio))); }

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw DataError("invalid model config: " + m); };
  if (channels < 1) fail("channels must be >= 1");
  if (patch < 1 || samples < 1) fail("samples and patch must be positive");
  if (samples % patch != 0)
    fail("T=" + std::to_string(samples) + " is not divisible by p=" + std::to_string(patch));
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) fail("mask_ratio must be in [0, 1)");
  if (dim <= patch) fail("d=" + std::to_string(dim) + " must exceed p=" + std::to_string(patch));
  if (heads < 1 || dim % heads != 0) fail("d must be divisible by heads");
  if (enc_layers < 1 || dec_layers < 1) fail("need at least one encoder and one decoder layer");
  if (!(mlp_ratio > 0)) fail("mlp_ratio must be positive");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"channels", c.channels},     {"samples", c.samples},       {"patch", c.patch},
          {"dim", c.dim},               {"mask_ratio", c.mask_ratio}, {"enc_layers", c.enc_layers},
          {"dec_layers", c.dec_layers}, {"heads", c.heads},           {"mlp_ratio", c.mlp_ratio},
          {"stratified_mask", c.stratified_mask}, {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.channels = j.value("channels", c.channels);
  c.samples = j.value("samples", c.samples);
  c.patch = j.value("patch", c.patch);
  c.dim = j.value("dim", c.dim);
  c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
  c.enc_layers = j.value("enc_layers", c.enc_layers);
  c.dec_layers = j.value("dec_layers", c.dec_layers);
  c.heads = j.value("heads", c.heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.stratified_mask = j.value("stratified_mask", c.stratified_mask);
  c.seed = j.value("seed", c.seed);
  return c;
}

// --- masks -----------------------------------------------------------------

std::size_t MaskSpec::count() const {
  std::size_t n = 0;
  for (auto m : masked) n += m;
  return n;
}

std::vector<int> MaskSpec::visible_tokens() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < masked.size(); ++i)
    if (!masked[i]) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> MaskSpec::masked_tokens() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < masked.size(); ++i)
    if (masked[i]) out.push_back(static_cast<int>(i));
  return out;
}

MaskSpec sample_mask(const ModelConfig& cfg, Rng& rng) {
  const auto total = static_cast<std::size_t>(cfg.tokens());
  MaskSpec m;
  m.masked.assign(total, 0);
  if (cfg.stratified_mask) {
    const auto n = static_cast<std::size_t>(cfg.patches());
    const auto per = static_cast<std::size_t>(std::llround(cfg.mask_ratio * static_cast<double>(n)));
    for (int c = 0; c < cfg.channels; ++c)
      for (auto i : sample_without_replacement(n, per, rng)) m.masked[c * n + i] = 1;
  } else {
    const auto k = static_cast<std::size_t>(std::llround(cfg.mask_ratio * static_cast<double>(total)));
    for (auto i : sample_without_replacement(total, k, rng)) m.masked[i] = 1;
  }
  m.ratio = static_cast<double>(m.count()) / static_cast<double>(total);
  return m;
}

MaskSpec empty_mask(const ModelConfig& cfg) {
  MaskSpec m;
  m.masked.assign(static_cast<std::size_t>(cfg.tokens()), 0);
  return m;
}

MaskSpec channel_mask(const ModelConfig& cfg, int channel) {
  if (channel < 0 || channel >= cfg.channels)
    throw DataError("channel index " + std::to_string(channel) + " out of range [0, " +
                    std::to_string(cfg.channels) + ")");
  MaskSpec m = empty_mask(cfg);
  const int n = cfg.patches();
  for (int i = 0; i < n; ++i) m.masked[static_cast<std::size_t>(channel * n + i)] = 1;
  m.ratio = 1.0 / cfg.channels;
  return m;
}

// --- parameters ------------------------------------------------------------

namespace {

void truncated_normal(Matrix& m, double sd, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double z;
    do {
      z = standard_normal(rng);
    } while (std::abs(z) > 2.0);
    m.data()[i] = sd * z;
  }
}

void xavier_uniform(Matrix& m, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = limit * (2.0 * uniform01(rng) - 1.0);
}

void init_block(BlockParams& b, Rng& rng) {
  b.ln1_g.setOnes();
  b.ln2_g.setOnes();
  xavier_uniform(b.qkv_w, rng);
  xavier_uniform(b.proj_w, rng);
  xavier_uniform(b.fc1_w, rng);
  xavier_uniform(b.fc2_w, rng);
}

}  // namespace

ModelState ModelState::zeros(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.dim, p = cfg.patch, n = cfg.tokens();
  ModelState s;
  s.config = cfg;
  s.patch_w = Matrix::Zero(p, d);
  s.patch_b = Matrix::Zero(1, d);
  s.enc_pos = Matrix::Zero(n, d);
  s.mask_token = Matrix::Zero(1, d);
  s.dec_pos = Matrix::Zero(n, d);
  for (int l = 0; l < cfg.enc_layers; ++l) s.encoder.push_back(BlockParams::zeros(d, cfg.hidden()));
  for (int l = 0; l < cfg.dec_layers; ++l) s.decoder.push_back(BlockParams::zeros(d, cfg.hidden()));
  s.dec_norm_g = Matrix::Zero(1, d);
  s.dec_norm_b = Matrix::Zero(1, d);
  s.head_w = Matrix::Zero(d, p);
  s.head_b = Matrix::Zero(1, p);
  return s;
}

ModelState ModelState::initialize(const ModelConfig& cfg) {
  ModelState s = zeros(cfg);
  auto rng = make_rng(cfg.seed, {tag(Stream::kInit)});
  truncated_normal(s.patch_w, 0.02, rng);
  truncated_normal(s.enc_pos, 0.02, rng);
  truncated_normal(s.mask_token, 0.02, rng);
  truncated_normal(s.dec_pos, 0.02, rng);
  for (auto& b : s.encoder) init_block(b, rng);
  for (auto& b : s.decoder) init_block(b, rng);
  s.dec_norm_g.setOnes();
  truncated_normal(s.head_w, 0.02, rng);
  return s;
}

void ModelState::visit(const ParamVisitor& fn) {
  fn("patch_w", patch_w);
  fn("patch_b", patch_b);
  fn("enc_pos", enc_pos);
  fn("mask_token", mask_token);
  fn("dec_pos", dec_pos);
  for (std::size_t l = 0; l < encoder.size(); ++l) encoder[l].visit("encoder." + std::to_string(l) + ".", fn);
  for (std::size_t l = 0; l < decoder.size(); ++l) decoder[l].visit("decoder." + std::to_string(l) + ".", fn);
  fn("dec_norm_g", dec_norm_g);
  fn("dec_norm_b", dec_norm_b);
  fn("head_w", head_w);
  fn("head_b", head_b);
}

void ModelState::visit(const ConstParamVisitor& fn) const {
  const_cast<ModelState*>(this)->visit(ParamVisitor([&](const std::string& n, Matrix& m) { fn(n, m); }));
}

void ModelState::set_zero() {
  visit(ParamVisitor([](const std::string&, Matrix& m) { m.setZero(); }));
}

std::size_t ModelState::param_count() const {
  std::size_t n = 0;
  visit(ConstParamVisitor([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); }));
  return n;
}

std::uint64_t ModelState::checksum() const {
  std::uint64_t h = fnv1a(std::string_view("pedsleep-model"));
  visit(ConstParamVisitor([&](const std::string& name, const Matrix& m) {
    h = fnv1a(name, h);
    h = fnv1a(std::span<const double>(m.data(), static_cast<std::size_t>(m.size())), h);
  }));
  return h;
}

bool ModelState::all_finite() const {
  bool ok = true;
  visit(ConstParamVisitor([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); }));
  return ok;
}

// --- tokenization ----------------------------------------------------------

PatchGrid patchify(const Matrix& data, int patch) {
  const auto T = data.cols();
  if (patch < 1 || T % patch != 0)
    throw DataError("patchify: T=" + std::to_string(T) + " is not divisible by p=" + std::to_string(patch));
  PatchGrid g;
  g.channels = static_cast<int>(data.rows());
  g.patches = static_cast<int>(T / patch);
  g.values.resize(static_cast<Eigen::Index>(g.channels) * g.patches, patch);
  for (int c = 0; c < g.channels; ++c)
    for (int n = 0; n < g.patches; ++n)
      g.values.row(c * g.patches + n) = data.row(c).segment(static_cast<Eigen::Index>(n) * patch, patch);
  return g;
}

PatchGrid patchify(const Signal& data, int patch) { return patchify(Matrix(data.cast<double>()), patch); }

Matrix unpatchify(const PatchGrid& g) {
  const int p = g.patch_size();
  Matrix out(g.channels, static_cast<Eigen::Index>(g.patches) * p);
  for (int c = 0; c < g.channels; ++c)
    for (int n = 0; n < g.patches; ++n)
      out.row(c).segment(static_cast<Eigen::Index>(n) * p, p) = g.values.row(c * g.patches + n);
  return out;
}

// --- forward ---------------------------------------------------------------

namespace {

Matrix gather_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

void check_finite(const Matrix& m, const char* where, std::size_t layer, const std::vector<int>* tokens) {
  if (m.allFinite()) return;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (!m.row(i).allFinite()) {
      const int token = tokens ? (*tokens)[static_cast<std::size_t>(i)] : static_cast<int>(i);
      std::ostringstream msg;
      msg << "non-finite activation in " << where << " layer " << layer << " at token " << token;
      throw NumericError(msg.str());
    }
  }
}

void check_input(const ModelState& s, const PatchGrid& input, const MaskSpec& mask) {
  const auto& cfg = s.config;
  if (input.channels != cfg.channels || input.patches != cfg.patches() || input.patch_size() != cfg.patch)
    throw DataError("input grid " + std::to_string(input.channels) + "x" + std::to_string(input.patches) + "x" +
                    std::to_string(input.patch_size()) + " does not match model config " +
                    std::to_string(cfg.channels) + "x" + std::to_string(cfg.patches()) + "x" +
                    std::to_string(cfg.patch));
  if (mask.masked.size() != static_cast<std::size_t>(cfg.tokens()))
    throw DataError("mask size does not match token grid");
}

// Visible tokens through patch projection, positional embedding and encoder.
// Masked patches never reach the projection.
Matrix run_encoder(const ModelState& s, const PatchGrid& input, const std::vector<int>& visible,
                   std::vector<BlockCache>* caches, Matrix* projected_input) {
  Matrix x0 = gather_rows(input.values, visible);
  Matrix x = linear_forward(x0, s.patch_w, s.patch_b) + gather_rows(s.enc_pos, visible);
  if (projected_input) *projected_input = std::move(x0);
  for (std::size_t l = 0; l < s.encoder.size(); ++l) {
    x = block_forward(s.encoder[l], x, s.config.heads, caches ? &(*caches)[l] : nullptr);
    check_finite(x, "encoder", l, &visible);
  }
  return x;
}

LatentGrid scatter_latent(const ModelState& s, const Matrix& encoded, const MaskSpec& mask,
                          const std::vector<int>& visible) {
  LatentGrid lat;
  lat.channels = s.config.channels;
  lat.patches = s.config.patches();
  lat.tokens.resize(s.config.tokens(), s.config.dim);
  for (std::size_t i = 0; i < mask.masked.size(); ++i)
    if (mask.masked[i]) lat.tokens.row(static_cast<Eigen::Index>(i)) = s.mask_token.row(0);
  for (std::size_t i = 0; i < visible.size(); ++i)
    lat.tokens.row(visible[i]) = encoded.row(static_cast<Eigen::Index>(i));
  return lat;
}

struct DecoderTrace {
  std::vector<BlockCache> blocks;
  LayerNormCache norm;
  Matrix normed;
};

PatchGrid run_decoder(const ModelState& s, const LatentGrid& latent, DecoderTrace* trace) {
  Matrix z = latent.tokens + s.dec_pos;
  for (std::size_t l = 0; l < s.decoder.size(); ++l) {
    z = block_forward(s.decoder[l], z, s.config.heads, trace ? &trace->blocks[l] : nullptr);
    check_finite(z, "decoder", l, nullptr);
  }
  Matrix y = layer_norm_forward(z, s.dec_norm_g, s.dec_norm_b, trace ? &trace->norm : nullptr);
  PatchGrid out;
  out.channels = latent.channels;
  out.patches = latent.patches;
  out.values = linear_forward(y, s.head_w, s.head_b);
  if (trace) trace->normed = std::move(y);
  return out;
}

}  // namespace

ForwardResult forward(const ModelState& s, const PatchGrid& input, const MaskSpec& mask) {
  check_input(s, input, mask);
  const auto visible = mask.visible_tokens();
  const Matrix encoded = run_encoder(s, input, visible, nullptr, nullptr);
  ForwardResult r;
  r.latent = scatter_latent(s, encoded, mask, visible);
  r.reconstruction = run_decoder(s, r.latent, nullptr);
  return r;
}

LatentGrid encode(const ModelState& s, const PatchGrid& input) {
  const MaskSpec none = empty_mask(s.config);
  check_input(s, input, none);
  const auto visible = none.visible_tokens();
  return scatter_latent(s, run_encoder(s, input, visible, nullptr, nullptr), none, visible);
}

PatchGrid decode(const ModelState& s, const LatentGrid& latent) {
  if (latent.tokens.rows() != s.config.tokens() || latent.tokens.cols() != s.config.dim)
    throw DataError("latent grid shape does not match model config");
  return run_decoder(s, latent, nullptr);
}

double reconstruction_loss(const PatchGrid& recon, const PatchGrid& target, const MaskSpec& mask) {
  if (recon.values.rows() != target.values.rows() || recon.values.cols() != target.values.cols())
    throw DataError("reconstruction_loss: shape mismatch");
  if (mask.masked.size() != static_cast<std::size_t>(target.values.rows()))
    throw DataError("reconstruction_loss: mask size mismatch");
  if (mask.empty()) return (recon.values - target.values).squaredNorm() / static_cast<double>(target.values.size());
  double sum = 0;
  std::size_t rows = 0;
  for (std::size_t i = 0; i < mask.masked.size(); ++i) {
    if (!mask.masked[i]) continue;
    const auto r = static_cast<Eigen::Index>(i);
    sum += (recon.values.row(r) - target.values.row(r)).squaredNorm();
    ++rows;
  }
  return sum / static_cast<double>(rows * static_cast<std::size_t>(target.values.cols()));
}

double loss_and_grad(const ModelState& s, const PatchGrid& target, const MaskSpec& mask, ModelState& g,
                     double scale) {
  check_input(s, target, mask);
  const auto visible = mask.visible_tokens();
  std::vector<BlockCache> enc_cache(s.encoder.size());
  Matrix x0;
  const Matrix encoded = run_encoder(s, target, visible, &enc_cache, &x0);
  const LatentGrid latent = scatter_latent(s, encoded, mask, visible);
  DecoderTrace trace;
  trace.blocks.resize(s.decoder.size());
  const PatchGrid recon = run_decoder(s, latent, &trace);

  const double loss = reconstruction_loss(recon, target, mask);
  if (!std::isfinite(loss)) throw NumericError("non-finite reconstruction loss");

  // dLoss/dRecon: only rows that enter the loss.
  const auto p = static_cast<double>(target.values.cols());
  const std::size_t used = mask.empty() ? mask.masked.size() : mask.count();
  const double coef = 2.0 * scale / (static_cast<double>(used) * p);
  Matrix drecon = Matrix::Zero(recon.values.rows(), recon.values.cols());
  for (std::size_t i = 0; i < mask.masked.size(); ++i) {
    if (!mask.empty() && !mask.masked[i]) continue;
    const auto r = static_cast<Eigen::Index>(i);
    drecon.row(r) = coef * (recon.values.row(r) - target.values.row(r));
  }

  Matrix dy = linear_backward(trace.normed, s.head_w, drecon, g.head_w, g.head_b);
  Matrix dz = layer_norm_backward(dy, s.dec_norm_g, trace.norm, g.dec_norm_g, g.dec_norm_b);
  for (std::size_t l = s.decoder.size(); l-- > 0;)
    dz = block_backward(s.decoder[l], trace.blocks[l], dz, s.config.heads, g.decoder[l]);
  g.dec_pos += dz;

  Matrix dx(static_cast<Eigen::Index>(visible.size()), dz.cols());
  for (std::size_t i = 0; i < mask.masked.size(); ++i)
    if (mask.masked[i]) g.mask_token.row(0) += dz.row(static_cast<Eigen::Index>(i));
  for (std::size_t i = 0; i < visible.size(); ++i) dx.row(static_cast<Eigen::Index>(i)) = dz.row(visible[i]);

  for (std::size_t l = s.encoder.size(); l-- > 0;)
    dx = block_backward(s.encoder[l], enc_cache[l], dx, s.config.heads, g.encoder[l]);
  for (std::size_t i = 0; i < visible.size(); ++i) g.enc_pos.row(visible[i]) += dx.row(static_cast<Eigen::Index>(i));
  linear_backward(x0, s.patch_w, dx, g.patch_w, g.patch_b);
  return loss;
}

Embedding pool_embedding(const LatentGrid& latent) {
  return {latent.tokens.rowwise().mean()};
}

std::pair<Embedding, LatentGrid> embed_epoch(const ModelState& s, const SleepEpoch& epoch) {
  LatentGrid lat = encode(s, patchify(epoch.data, s.config.patch));
  Embedding e = pool_embedding(lat);
  return {std::move(e), std::move(lat)};
}

}  // namespace pedsleep
