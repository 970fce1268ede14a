#include "pedsleep/pretrain.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pedsleep/errors.hpp"
#include "pedsleep/parallel.hpp"

namespace pedsleep {

void TrainConfig::validate() const {
  if (!(lr >= 0) || !(weight_decay >= 0) || batch_size < 1 || epochs < 1 || iterations_per_epoch < 1 ||
      checkpoint_every < 0 || !(grad_clip >= 0))
    throw DataError("invalid train config: lr/weight_decay must be >= 0 and counts positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"iterations_per_epoch", c.iterations_per_epoch},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"grad_clip", c.grad_clip},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.iterations_per_epoch = j.value("iterations_per_epoch", c.iterations_per_epoch);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  return c;
}

std::string config_hash(const TrainConfig& cfg, const ModelConfig& model_cfg) {
  const nlohmann::json j = {{"train", to_json(cfg)}, {"model", to_json(model_cfg)}};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

std::vector<double> TrainLog::losses(const std::string& split) const {
  std::vector<double> out;
  for (const auto& r : rows)
    if (r.split == split) out.push_back(r.loss);
  return out;
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "iteration,split,loss\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.loss);
    out << r.iteration << ',' << r.split << ',' << buf << '\n';
  }
}

void adamw_step(ModelState& params, const ModelState& grad, AdamState& opt, const TrainConfig& cfg) {
  ++opt.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  std::vector<Matrix*> p, g, m, v;
  params.visit(ParamVisitor([&](const std::string&, Matrix& x) { p.push_back(&x); }));
  const_cast<ModelState&>(grad).visit(ParamVisitor([&](const std::string&, Matrix& x) { g.push_back(&x); }));
  opt.m.visit(ParamVisitor([&](const std::string&, Matrix& x) { m.push_back(&x); }));
  opt.v.visit(ParamVisitor([&](const std::string&, Matrix& x) { v.push_back(&x); }));
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto pa = p[i]->array();
    const auto ga = g[i]->array();
    auto ma = m[i]->array();
    auto va = v[i]->array();
    pa *= 1.0 - cfg.lr * cfg.weight_decay;
    ma = cfg.beta1 * ma + (1.0 - cfg.beta1) * ga;
    va = cfg.beta2 * va + (1.0 - cfg.beta2) * ga.square();
    pa -= cfg.lr * (ma / bc1) / ((va / bc2).sqrt() + cfg.eps);
  }
}

double validation_loss(const ModelState& state, const std::vector<PatchGrid>& epochs, std::uint64_t seed) {
  if (epochs.empty()) throw DataError("validation_loss: empty validation set");
  std::vector<double> losses(epochs.size());
  parallel_for(epochs.size(), [&](std::size_t i) {
    auto rng = make_rng(seed, {tag(Stream::kValMask), i});
    const MaskSpec mask = sample_mask(state.config, rng);
    losses[i] = reconstruction_loss(forward(state, epochs[i], mask).reconstruction, epochs[i], mask);
  });
  double sum = 0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(losses.size());
}

namespace {

std::vector<PatchGrid> to_grids(const std::vector<SleepEpoch>& epochs, const ModelConfig& cfg) {
  std::vector<PatchGrid> out;
  out.reserve(epochs.size());
  for (const auto& e : epochs) {
    if (e.data.rows() != cfg.channels || e.data.cols() != cfg.samples)
      throw DataError("epoch " + e.recording_id + "#" + std::to_string(e.epoch_index) + " has shape " +
                      std::to_string(e.data.rows()) + "x" + std::to_string(e.data.cols()) + ", model expects " +
                      std::to_string(cfg.channels) + "x" + std::to_string(cfg.samples));
    out.push_back(patchify(e.data, cfg.patch));
  }
  return out;
}

// Samples per gradient chunk. Chunks are reduced in index order, so the
// summed gradient does not depend on how many workers ran them.
constexpr std::size_t kChunk = 4;

double global_norm(const ModelState& g) {
  double s = 0;
  g.visit(ConstParamVisitor([&](const std::string&, const Matrix& m) { s += m.squaredNorm(); }));
  return std::sqrt(s);
}

void add_into(ModelState& dst, const ModelState& src) {
  std::vector<const Matrix*> s;
  src.visit(ConstParamVisitor([&](const std::string&, const Matrix& m) { s.push_back(&m); }));
  std::size_t i = 0;
  dst.visit(ParamVisitor([&](const std::string&, Matrix& m) { m += *s[i++]; }));
}

void scale_state(ModelState& s, double f) {
  s.visit(ParamVisitor([&](const std::string&, Matrix& m) { m *= f; }));
}

class Trainer {
 public:
  Trainer(TrainResult& r, const std::vector<SleepEpoch>& train_epochs, const std::vector<SleepEpoch>& val_epochs,
          const TrainOptions& options)
      : r_(r),
        train_(to_grids(train_epochs, r.state.config)),
        val_(to_grids(val_epochs, r.state.config)),
        options_(options) {
    if (train_.empty()) throw DataError("train: empty training set");
  }

  void run() {
    const auto& cfg = r_.config;
    const auto start = std::chrono::steady_clock::now();
    if (r_.optimizer.step == 0 && !val_.empty()) {
      const double v = validation_loss(r_.state, val_, cfg.seed);
      r_.log.rows.push_back({0, "val", v});
      r_.best = r_.state;
      r_.best_val = v;
    }
    while (r_.optimizer.step < cfg.total_steps()) {
      step();
      if (r_.optimizer.step % cfg.iterations_per_epoch == 0) end_of_epoch();
    }
    r_.log.wall_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }

 private:
  void step() {
    const auto& cfg = r_.config;
    const std::int64_t iteration = r_.optimizer.step + 1;
    auto rng = make_rng(cfg.seed, {tag(Stream::kBatch), static_cast<std::uint64_t>(iteration)});
    const auto B = static_cast<std::size_t>(cfg.batch_size);
    std::vector<std::size_t> ids(B);
    std::vector<MaskSpec> masks(B);
    for (std::size_t b = 0; b < B; ++b) {
      ids[b] = uniform_index(train_.size(), rng);
      masks[b] = sample_mask(r_.state.config, rng);
    }

    const std::size_t chunks = (B + kChunk - 1) / kChunk;
    std::vector<ModelState> chunk_grads(chunks, ModelState::zeros(r_.state.config));
    std::vector<double> losses(B);
    try {
      parallel_for(chunks, [&](std::size_t c) {
        for (std::size_t b = c * kChunk; b < std::min(B, (c + 1) * kChunk); ++b)
          losses[b] = loss_and_grad(r_.state, train_[ids[b]], masks[b], chunk_grads[c], 1.0 / static_cast<double>(B));
      });
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at iteration " + std::to_string(iteration) + batch_dump(ids));
    }
    double loss = 0;
    for (double l : losses) loss += l;
    loss /= static_cast<double>(B);
    if (!std::isfinite(loss))
      throw NumericError("non-finite training loss at iteration " + std::to_string(iteration) + batch_dump(ids));

    ModelState& grad = chunk_grads[0];
    for (std::size_t c = 1; c < chunks; ++c) add_into(grad, chunk_grads[c]);
    if (cfg.grad_clip > 0) {
      const double norm = global_norm(grad);
      if (norm > cfg.grad_clip) scale_state(grad, cfg.grad_clip / norm);
    }
    adamw_step(r_.state, grad, r_.optimizer, cfg);
    r_.log.rows.push_back({iteration, "train", loss});
  }

  static std::string batch_dump(const std::vector<std::size_t>& ids) {
    std::ostringstream s;
    s << "; batch ids [";
    for (std::size_t i = 0; i < ids.size(); ++i) s << (i ? "," : "") << ids[i];
    s << "]";
    return s.str();
  }

  void end_of_epoch() {
    const auto& cfg = r_.config;
    const std::int64_t step = r_.optimizer.step;
    if (!val_.empty()) {
      const double v = validation_loss(r_.state, val_, cfg.seed);
      r_.log.rows.push_back({step, "val", v});
      if (v <= r_.best_val) {
        r_.best = r_.state;
        r_.best_val = v;
      }
    } else {
      r_.best = r_.state;
    }
    const auto epoch = step / cfg.iterations_per_epoch;
    if (options_.checkpoint_dir && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      std::filesystem::create_directories(*options_.checkpoint_dir);
      char name[48];
      std::snprintf(name, sizeof name, "ckpt-epoch-%05lld.psgt", static_cast<long long>(epoch));
      save_training_checkpoint(*options_.checkpoint_dir / name, r_);
      save_training_checkpoint(*options_.checkpoint_dir / "last.psgt", r_);
      r_.log.events.push_back(std::string("checkpoint ") + name);
    }
  }

  TrainResult& r_;
  std::vector<PatchGrid> train_;
  std::vector<PatchGrid> val_;
  TrainOptions options_;
};

}  // namespace

TrainResult train(const TrainConfig& cfg, const ModelConfig& model_cfg, const std::vector<SleepEpoch>& train_epochs,
                  const std::vector<SleepEpoch>& val_epochs, const TrainOptions& options) {
  cfg.validate();
  model_cfg.validate();
  TrainResult r;
  r.config = cfg;
  r.state = ModelState::initialize(model_cfg);
  r.best = r.state;
  r.best_val = std::numeric_limits<double>::infinity();
  r.optimizer = {ModelState::zeros(model_cfg), ModelState::zeros(model_cfg), 0};
  r.log.seed = cfg.seed;
  r.log.config_hash = config_hash(cfg, model_cfg);
  Trainer(r, train_epochs, val_epochs, options).run();
  return r;
}

void save_training_checkpoint(const std::filesystem::path& path, const TrainResult& r) {
  TensorFile f;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.log.rows) rows.push_back({row.iteration, row.split, row.loss});
  f.meta = {{"kind", "training"},
            {"model_config", to_json(r.state.config)},
            {"train_config", to_json(r.config)},
            {"step", r.optimizer.step},
            {"best_val", r.best_val},
            {"log", {{"rows", rows}, {"events", r.log.events}, {"seed", r.log.seed},
                     {"config_hash", r.log.config_hash}}}};
  append_state(f, "model/", r.state);
  append_state(f, "best/", r.best);
  append_state(f, "adam_m/", r.optimizer.m);
  append_state(f, "adam_v/", r.optimizer.v);
  write_tensor_file(path, f);
}

TrainResult resume(const std::filesystem::path& checkpoint, const TrainConfig& cfg, const ModelConfig& model_cfg,
                   const std::vector<SleepEpoch>& train_epochs, const std::vector<SleepEpoch>& val_epochs,
                   const TrainOptions& options) {
  cfg.validate();
  model_cfg.validate();
  const TensorFile f = read_tensor_file(checkpoint);
  if (f.meta.value("kind", std::string()) != "training")
    throw DataError(checkpoint.string() + " is not a training checkpoint");

  TrainResult r;
  r.state = extract_state(f, "model/", model_cfg);
  r.best = extract_state(f, "best/", model_cfg);
  r.optimizer.m = extract_state(f, "adam_m/", model_cfg);
  r.optimizer.v = extract_state(f, "adam_v/", model_cfg);
  r.optimizer.step = f.meta.at("step").get<std::int64_t>();
  r.best_val = f.meta.at("best_val").get<double>();
  r.config = cfg;

  const auto& log = f.meta.at("log");
  for (const auto& row : log.at("rows")) r.log.rows.push_back({row[0].get<std::int64_t>(), row[1].get<std::string>(), row[2].get<double>()});
  r.log.events = log.at("events").get<std::vector<std::string>>();
  r.log.seed = log.at("seed").get<std::uint64_t>();
  r.log.config_hash = config_hash(cfg, model_cfg);

  const TrainConfig old = train_config_from_json(f.meta.at("train_config"));
  const auto old_j = to_json(old);
  const auto new_j = to_json(cfg);
  for (const auto& [key, value] : new_j.items())
    if (old_j.at(key) != value)
      r.log.events.push_back("resume at step " + std::to_string(r.optimizer.step) + ": " + key + " changed " +
                             old_j.at(key).dump() + " -> " + value.dump());

  Trainer(r, train_epochs, val_epochs, options).run();
  return r;
}

std::vector<SweepCell> sweep(const TrainConfig& cfg, const ModelConfig& base, const std::vector<double>& mask_ratios,
                             const std::vector<int>& patches, const std::vector<SleepEpoch>& train_epochs,
                             const std::vector<SleepEpoch>& val_epochs) {
  std::vector<SweepCell> cells;
  for (double m : mask_ratios) {
    for (int p : patches) {
      ModelConfig mc = base;
      mc.mask_ratio = m;
      mc.patch = p;
      auto r = train(cfg, mc, train_epochs, val_epochs);
      cells.push_back({m, p, r.best_val, std::move(r.log)});
    }
  }
  return cells;
}

}  // namespace pedsleep
