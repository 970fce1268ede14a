#include "commands.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "json.hpp"
#include "pedsleep/analysis.hpp"
#include "pedsleep/checkpoint.hpp"
#include "pedsleep/container.hpp"
#include "pedsleep/data.hpp"
#include "pedsleep/edf.hpp"
#include "pedsleep/errors.hpp"
#include "pedsleep/generate.hpp"
#include "pedsleep/impute.hpp"
#include "pedsleep/parallel.hpp"
#include "pedsleep/pretrain.hpp"
#include "pedsleep/probe.hpp"
#include "pedsleep/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pedsleep;

namespace cli {

namespace {

// ---------------------------------------------------------------- plumbing

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// One output directory per invocation: resolved config, a log, and outputs.
class Run {
 public:
  Run(const fs::path& dir, const std::string& command, json config)
      : dir_(dir), start_(std::chrono::steady_clock::now()) {
    fs::create_directories(dir_);
    config["command"] = command;
    config["workers"] = worker_count();
    write_json(dir_ / "resolved-config.json", config);
    log_.open(dir_ / "run.log");
    log("pedsleep " + command);
  }

  void log(const std::string& msg) {
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    char stamp[32];
    std::snprintf(stamp, sizeof stamp, "[%8.2fs] ", t);
    log_ << stamp << msg << std::endl;
    std::cerr << stamp << msg << "\n";
  }

  fs::path operator/(const std::string& name) const { return dir_ / name; }

 private:
  fs::path dir_;
  std::ofstream log_;
  std::chrono::steady_clock::time_point start_;
};

std::uint64_t resolve_seed(const Globals& g, const json* config = nullptr) {
  if (g.seed) return *g.seed;
  if (config && config->contains("seed")) return config->at("seed").get<std::uint64_t>();
  if (const char* env = std::getenv("PEDSLEEP_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("PEDSLEEP_SEED is not an unsigned integer: '") + env + "'");
  }
  return 0;
}

// ---------------------------------------------------------------- datasets

struct Dataset {
  std::vector<SleepEpoch> epochs;
  std::vector<std::string> channels;
  double sample_rate = 0;
  double epoch_seconds = 30;
};

struct DataOptions {
  std::string dir;
  std::optional<double> epoch_seconds;
  std::string split = "all";
  std::string split_by = "recording";
  std::optional<std::uint64_t> split_seed;

  void add(CLI::App* app, bool with_split = true, const std::string& default_split = "all") {
    split = default_split;
    app->add_option("--data", dir, "Directory of .psgt recordings")->required();
    app->add_option("--epoch-seconds", epoch_seconds, "Epoch length (default: dataset.json, else 30)");
    if (!with_split) return;
    app->add_option("--split", split, "Which part of the data to use")
        ->check(CLI::IsMember({"all", "train", "val", "test"}))
        ->capture_default_str();
    app->add_option("--split-by", split_by, "Split unit")
        ->check(CLI::IsMember({"recording", "epoch"}))
        ->capture_default_str();
    app->add_option("--split-seed", split_seed, "Seed for the split (default: global seed)");
  }

  json to_json(std::uint64_t seed) const {
    return {{"data", dir},
            {"epoch_seconds", epoch_seconds ? json(*epoch_seconds) : json(nullptr)},
            {"split", split},
            {"split_by", split_by},
            {"split_seed", split_seed.value_or(seed)}};
  }
};

Dataset load_dataset(const fs::path& dir, std::optional<double> epoch_seconds) {
  Dataset d;
  d.epoch_seconds = 30;
  if (fs::exists(dir / "dataset.json")) d.epoch_seconds = read_json(dir / "dataset.json").value("epoch_seconds", 30.0);
  if (epoch_seconds) d.epoch_seconds = *epoch_seconds;
  const auto recs = load_recording_dir(dir);
  if (recs.empty()) throw DataError("no .psgt recordings in " + dir.string());
  for (const auto& c : recs.front().channels) d.channels.push_back(c.name);
  d.sample_rate = recs.front().sample_rate;
  for (const auto& r : recs) {
    std::vector<std::string> names;
    for (const auto& c : r.channels) names.push_back(c.name);
    if (names != d.channels) throw DataError("recording " + r.recording_id + " has a different channel list");
    if (r.sample_rate != d.sample_rate) throw DataError("recording " + r.recording_id + " has a different sample rate");
    for (auto& e : segment_epochs(r, d.epoch_seconds)) d.epochs.push_back(std::move(e));
  }
  if (d.epochs.empty()) throw DataError("recordings in " + dir.string() + " are shorter than one epoch");
  return d;
}

DatasetSplit make_split(const std::vector<SleepEpoch>& epochs, const std::string& by, std::uint64_t seed) {
  return by == "epoch" ? split_dataset(epochs.size(), {}, seed) : split_by_recording(epochs, {}, seed);
}

std::vector<SleepEpoch> select(const std::vector<SleepEpoch>& epochs, const std::string& part, const std::string& by,
                               std::uint64_t seed) {
  if (part == "all") return epochs;
  const auto s = make_split(epochs, by, seed);
  const auto& idx = part == "train" ? s.train : part == "val" ? s.val : s.test;
  std::vector<SleepEpoch> out;
  for (auto i : idx) out.push_back(epochs[i]);
  if (out.empty()) throw DataError("split '" + part + "' is empty");
  return out;
}

std::vector<SleepEpoch> select(const Dataset& d, const DataOptions& o, std::uint64_t seed, const std::string& part) {
  return select(d.epochs, part, o.split_by, o.split_seed.value_or(seed));
}

Matrix embed_all(const ModelState& state, const std::vector<SleepEpoch>& epochs) {
  Matrix out(static_cast<Eigen::Index>(epochs.size()), state.config.tokens());
  parallel_for(epochs.size(), [&](std::size_t i) {
    out.row(static_cast<Eigen::Index>(i)) = embed_epoch(state, epochs[i]).first.vector.transpose();
  });
  return out;
}

void check_compatible(const ModelState& st, const Dataset& d) {
  const int T = samples_per_epoch(d.sample_rate, d.epoch_seconds);
  if (st.config.channels != static_cast<int>(d.channels.size()) || st.config.samples != T)
    throw DataError("model expects C=" + std::to_string(st.config.channels) + ", T=" + std::to_string(st.config.samples) +
                    " but data has C=" + std::to_string(d.channels.size()) + ", T=" + std::to_string(T));
}

int channel_index(const Dataset& d, const std::string& name) {
  for (std::size_t i = 0; i < d.channels.size(); ++i)
    if (d.channels[i] == name) return static_cast<int>(i);
  throw DataError("unknown channel '" + name + "'");
}

// Stage name ("REM", "N2", ...) or event flag ("apnea", ...).
EpochSelector label_selector(const std::string& label) {
  if (auto stage = parse_sleep_stage(label))
    return [s = *stage](const SleepEpoch& e) { return e.labels.stage == s; };
  if (auto task = parse_probe_task(label); task && is_binary(*task))
    return [t = *task](const SleepEpoch& e) { return task_label(t, e.labels) == 1; };
  throw UsageError("unknown label '" + label + "' (use a stage name or an event such as apnea)");
}

RetrievalSpace parse_space(const std::string& s) {
  return s == "embedding" ? RetrievalSpace::kEmbedding : RetrievalSpace::kGeneratedSignal;
}
DistanceMetric parse_metric(const std::string& s) {
  return s == "dtw" ? DistanceMetric::kDtw : DistanceMetric::kEuclidean;
}

// ---------------------------------------------------------------- data

void add_data(CLI::App& app, Globals& g, std::function<void()>& action) {
  auto* data = app.add_subcommand("data", "Synthesize, ingest and split recordings");
  data->require_subcommand(1);

  {
    struct Opts {
      std::string out;
      SynthConfig cfg;
    };
    auto o = std::make_shared<Opts>();
    auto* c = data->add_subcommand("synth", "Write deterministic synthetic recordings");
    c->add_option("--out", o->out, "Output directory")->required();
    c->add_option("--channels", o->cfg.channels)->capture_default_str();
    c->add_option("--sample-rate", o->cfg.sample_rate)->capture_default_str();
    c->add_option("--epoch-seconds", o->cfg.epoch_seconds)->capture_default_str();
    c->add_option("--epochs-per-recording", o->cfg.epochs_per_recording)->capture_default_str();
    c->add_option("--recordings", o->cfg.recordings)->capture_default_str();
    c->add_option("--states", o->cfg.states)->capture_default_str();
    c->add_option("--noise", o->cfg.noise)->capture_default_str();
    c->callback([o, &g, &action] {
      action = [o, &g] {
        const auto seed = resolve_seed(g);
        const auto& s = o->cfg;
        const json cfg = {{"seed", seed},
                          {"channels", s.channels},
                          {"sample_rate", s.sample_rate},
                          {"epoch_seconds", s.epoch_seconds},
                          {"epochs_per_recording", s.epochs_per_recording},
                          {"recordings", s.recordings},
                          {"states", s.states},
                          {"stay_probability", s.stay_probability},
                          {"base_frequency", s.base_frequency},
                          {"noise", s.noise},
                          {"coupling_noise", s.coupling_noise},
                          {"phase_jitter", s.phase_jitter}};
        Run run(o->out, "data synth", cfg);
        const auto recs = synth_generate(s, seed);
        std::vector<std::string> ids;
        for (const auto& r : recs) {
          save_recording(run / (r.recording_id + ".psgt"), r);
          ids.push_back(r.recording_id);
        }
        std::vector<std::string> names;
        for (const auto& c : recs.front().channels) names.push_back(c.name);
        write_json(run / "dataset.json", {{"epoch_seconds", s.epoch_seconds},
                                          {"sample_rate", s.sample_rate},
                                          {"channels", names},
                                          {"recordings", ids},
                                          {"source", "synthetic"}});
        run.log("wrote " + std::to_string(recs.size()) + " recordings");
      };
    });
  }

  {
    struct Opts {
      std::vector<std::string> edf;
      std::string out;
      double rate = 128;
      double epoch_seconds = 30;
      std::string aliases;
    };
    auto o = std::make_shared<Opts>();
    auto* c = data->add_subcommand("ingest", "Convert EDF recordings to normalized .psgt");
    c->add_option("--edf", o->edf, "EDF files")->required()->check(CLI::ExistingFile);
    c->add_option("--out", o->out, "Output directory")->required();
    c->add_option("--rate", o->rate, "Common sample rate (Hz)")->capture_default_str();
    c->add_option("--epoch-seconds", o->epoch_seconds)->capture_default_str();
    c->add_option("--aliases", o->aliases, "JSON object mapping source labels to canonical names")
        ->check(CLI::ExistingFile);
    c->callback([o, &action] {
      action = [o] {
        EdfOptions opts;
        opts.target_rate = o->rate;
        if (!o->aliases.empty()) {
          const json aliases = read_json(o->aliases);
          for (const auto& [k, v] : aliases.items()) opts.aliases[k] = v.get<std::string>();
        }
        Run run(o->out, "data ingest",
                {{"edf", o->edf}, {"rate", o->rate}, {"epoch_seconds", o->epoch_seconds}, {"aliases", o->aliases}});
        json report = json::array();
        std::vector<std::string> ids;
        std::vector<std::string> names;
        for (const auto& path : o->edf) {
          auto r = ingest_edf(path, opts);
          const auto rec = normalize_recording(r.recording);
          save_recording(run / (rec.recording_id + ".psgt"), rec);
          ids.push_back(rec.recording_id);
          names.clear();
          for (const auto& ch : rec.channels) names.push_back(ch.name);
          report.push_back({{"file", path},
                            {"recording_id", rec.recording_id},
                            {"channels", names},
                            {"missing_channels", r.missing_channels},
                            {"dropped_channels", r.dropped_channels},
                            {"warnings", rec.warnings}});
          run.log("ingested " + path + " (" + std::to_string(rec.channel_count()) + " channels)");
        }
        write_json(run / "ingest-report.json", report);
        write_json(run / "dataset.json", {{"epoch_seconds", o->epoch_seconds},
                                          {"sample_rate", o->rate},
                                          {"channels", names},
                                          {"recordings", ids},
                                          {"source", "edf"}});
      };
    });
  }

  {
    struct Opts {
      DataOptions data;
      std::string out;
    };
    auto o = std::make_shared<Opts>();
    auto* c = data->add_subcommand("split", "Write the train/val/test split");
    o->data.add(c, true);
    c->add_option("--out", o->out, "Output directory")->required();
    c->callback([o, &g, &action] {
      action = [o, &g] {
        const auto seed = resolve_seed(g);
        const auto split_seed = o->data.split_seed.value_or(seed);
        Run run(o->out, "data split", o->data.to_json(seed));
        const auto d = load_dataset(o->data.dir, o->data.epoch_seconds);
        const auto s = make_split(d.epochs, o->data.split_by, split_seed);
        auto ids = [&](const std::vector<std::size_t>& idx) {
          std::vector<std::string> v;
          for (auto i : idx) v.push_back(epoch_id(d.epochs[i]));
          return v;
        };
        write_json(run / "split.json", {{"seed", split_seed},
                                        {"by", o->data.split_by},
                                        {"train", ids(s.train)},
                                        {"val", ids(s.val)},
                                        {"test", ids(s.test)}});
        run.log("split " + std::to_string(d.epochs.size()) + " epochs into " + std::to_string(s.train.size()) + "/" +
                std::to_string(s.val.size()) + "/" + std::to_string(s.test.size()));
      };
    });
  }
}

// ---------------------------------------------------------------- pretrain

const std::set<std::string> kTrainKeys = {"lr",     "weight_decay",    "batch_size", "epochs", "iterations_per_epoch",
                                          "seed",   "checkpoint_every", "grad_clip", "beta1",  "beta2",
                                          "eps"};
const std::set<std::string> kModelKeys = {"channels",   "samples",    "patch",      "dim",   "mask_ratio",
                                          "enc_layers", "dec_layers", "heads",      "mlp_ratio",
                                          "stratified_mask"};

void add_pretrain(CLI::App& app, Globals& g, std::function<void()>& action) {
  struct Opts {
    std::string config, out, resume;
    DataOptions data;
  };
  auto o = std::make_shared<Opts>();
  auto* c = app.add_subcommand("pretrain", "Self-supervised masked reconstruction training");
  c->add_option("--config", o->config, "Flat JSON config (train + model keys)")->check(CLI::ExistingFile);
  o->data.add(c, false);
  c->add_option("--split-by", o->data.split_by)->check(CLI::IsMember({"recording", "epoch"}))->capture_default_str();
  c->add_option("--split-seed", o->data.split_seed);
  c->add_option("--out", o->out, "Run directory")->required();
  c->add_option("--resume", o->resume, "Training checkpoint to continue from")->check(CLI::ExistingFile);
  c->callback([o, &g, &action] {
    action = [o, &g] {
      json file = o->config.empty() ? json::object() : read_json(o->config);
      if (!file.is_object()) throw UsageError("config must be a flat JSON object");
      for (const auto& [k, v] : file.items())
        if (!kTrainKeys.count(k) && !kModelKeys.count(k) && k != "split_by" && k != "split_seed")
          throw UsageError("unknown config key '" + k + "'");

      const auto seed = resolve_seed(g, &file);
      file["seed"] = seed;
      const auto d = load_dataset(o->data.dir, o->data.epoch_seconds);
      json train_j, model_j;
      for (const auto& [k, v] : file.items()) {
        if (kTrainKeys.count(k)) train_j[k] = v;
        if (kModelKeys.count(k)) model_j[k] = v;
      }
      const int T = samples_per_epoch(d.sample_rate, d.epoch_seconds);
      if (!model_j.contains("channels")) model_j["channels"] = d.channels.size();
      if (!model_j.contains("samples")) model_j["samples"] = T;
      model_j["seed"] = seed;
      const TrainConfig tc = train_config_from_json(train_j);
      const ModelConfig mc = model_config_from_json(model_j);
      if (mc.channels != static_cast<int>(d.channels.size()) || mc.samples != T)
        throw DataError("config asks for C=" + std::to_string(mc.channels) + ", T=" + std::to_string(mc.samples) +
                        " but data has C=" + std::to_string(d.channels.size()) + ", T=" + std::to_string(T));
      const std::string split_by = file.value("split_by", o->data.split_by);
      const std::uint64_t split_seed = file.value("split_seed", o->data.split_seed.value_or(seed));

      json resolved = to_json(tc);
      resolved.update(to_json(mc));
      resolved["split_by"] = split_by;
      resolved["split_seed"] = split_seed;
      resolved["data"] = o->data.dir;
      resolved["epoch_seconds"] = d.epoch_seconds;
      resolved["resume"] = o->resume;
      Run run(o->out, "pretrain", resolved);

      const auto train_set = select(d.epochs, "train", split_by, split_seed);
      const auto val_set = select(d.epochs, "val", split_by, split_seed);
      run.log("train epochs " + std::to_string(train_set.size()) + ", val epochs " + std::to_string(val_set.size()) +
              ", parameters " + std::to_string(ModelState::zeros(mc).param_count()) + ", steps " +
              std::to_string(tc.total_steps()));

      TrainOptions topts;
      topts.checkpoint_dir = run / "checkpoints";
      const TrainResult r = o->resume.empty() ? train(tc, mc, train_set, val_set, topts)
                                              : resume(o->resume, tc, mc, train_set, val_set, topts);
      fs::create_directories(run / "checkpoints");
      save_training_checkpoint(run / "checkpoints" / "last.psgt", r);
      save_model(run / "model.psgt", r.best);
      r.log.write_csv(run / "train_log.csv");
      const auto val = r.log.losses("val");
      write_json(run / "train_summary.json", {{"steps", r.optimizer.step},
                                              {"initial_val_loss", val.empty() ? json(nullptr) : json(val.front())},
                                              {"final_val_loss", val.empty() ? json(nullptr) : json(val.back())},
                                              {"best_val_loss", r.best_val},
                                              {"parameters", r.state.param_count()},
                                              {"config_hash", r.log.config_hash},
                                              {"events", r.log.events}});
      for (const auto& e : r.log.events) run.log(e);
      run.log("done in " + num(r.log.wall_seconds) + " s; best val " + num(r.best_val));
    };
  });
}

// ---------------------------------------------------------------- embed / export

void write_embeddings(const fs::path& path, const Matrix& emb, const std::vector<SleepEpoch>& epochs,
                      const ModelConfig& cfg, const std::string& split) {
  TensorFile f;
  json ids = json::array(), labels = json::array();
  for (const auto& e : epochs) {
    ids.push_back(epoch_id(e));
    labels.push_back(to_json(e.labels));
  }
  f.meta = {{"kind", "embeddings"}, {"epoch_ids", ids}, {"labels", labels}, {"model_config", to_json(cfg)},
            {"split", split}};
  f.tensors.emplace_back("embeddings", emb);
  write_tensor_file(path, f);
}

Matrix read_embeddings(const fs::path& path) {
  const auto f = read_tensor_file(path);
  const Matrix* m = f.find("embeddings");
  if (!m) throw DataError(path.string() + ": no 'embeddings' tensor");
  return *m;
}

void add_embed(CLI::App& app, Globals& g, std::function<void()>& action) {
  struct Opts {
    std::string ckpt, out;
    DataOptions data;
  };
  {
    auto o = std::make_shared<Opts>();
    auto* c = app.add_subcommand("embed", "Pooled embeddings of every selected epoch");
    c->add_option("--ckpt", o->ckpt, "Model or training checkpoint")->required()->check(CLI::ExistingFile);
    o->data.add(c);
    c->add_option("--out", o->out, "Run directory")->required();
    c->callback([o, &g, &action] {
      action = [o, &g] {
        const auto seed = resolve_seed(g);
        auto cfg = o->data.to_json(seed);
        cfg["ckpt"] = o->ckpt;
        Run run(o->out, "embed", cfg);
        const auto st = load_model(o->ckpt);
        const auto d = load_dataset(o->data.dir, o->data.epoch_seconds);
        check_compatible(st, d);
        const auto epochs = select(d, o->data, seed, o->data.split);
        write_embeddings(run / "embeddings.psgt", embed_all(st, epochs), epochs, st.config, o->data.split);
        run.log("embedded " + std::to_string(epochs.size()) + " epochs, dim " + std::to_string(st.config.tokens()));
      };
    });
  }
  {
    auto o = std::make_shared<Opts>();
    auto* c = app.add_subcommand("export-proj", "Embedding matrix with labels as CSV, for external 2-D projection");
    c->add_option("--ckpt", o->ckpt, "Model or training checkpoint")->required()->check(CLI::ExistingFile);
    o->data.add(c);
    c->add_option("--out", o->out, "Run directory")->required();
    c->callback([o, &g, &action] {
      action = [o, &g] {
        const auto seed = resolve_seed(g);
        auto cfg = o->data.to_json(seed);
        cfg["ckpt"] = o->ckpt;
        Run run(o->out, "export-proj", cfg);
        const auto st = load_model(o->ckpt);
        const auto d = load_dataset(o->data.dir, o->data.epoch_seconds);
        check_compatible(st, d);
        const auto epochs = select(d, o->data, seed, o->data.split);
        const Matrix emb = embed_all(st, epochs);
        std::ofstream out(run / "projection.csv");
        out << "epoch_id,recording_id,epoch_index,stage,oxygen_desaturation,eeg_arousal,apnea,hypopnea,apnea_hypopnea";
        for (Eigen::Index k = 0; k < emb.cols(); ++k) out << ",e" << k;
        out << "\n";
        for (std::size_t i = 0; i < epochs.size(); ++i) {
          const auto& e = epochs[i];
          const auto& l = e.labels;
          out << epoch_id(e) << ',' << e.recording_id << ',' << e.epoch_index << ',' << to_string(l.stage) << ','
              << l.oxygen_desaturation << ',' << l.eeg_arousal << ',' << l.apnea << ',' << l.hypopnea << ','
              << l.apnea_hypopnea();
          for (Eigen::Index k = 0; k < emb.cols(); ++k) out << ',' << num(emb(static_cast<Eigen::Index>(i), k));
          out << "\n";
        }
        run.log("exported " + std::to_string(epochs.size()) + " x " + std::to_string(emb.cols()) + " embeddings");
      };
    });
  }
}

// ---------------------------------------------------------------- probe

std::pair<Matrix, std::vector<int>> labeled(const ModelState& st, const std::vector<SleepEpoch>& epochs, ProbeTask t) {
  std::vector<SleepEpoch> keep;
  std::vector<int> y;
  for (const auto& e : epochs) {
    const int label = task_label(t, e.labels);
    if (label < 0) continue;
    keep.push_back(e);
    y.push_back(label);
  }
  if (keep.empty()) throw DataError(std::string("no epochs labeled for task ") + to_string(t));
  return {embed_all(st, keep), y};
}

void add_probe(CLI::App& app, Globals& g, std::function<void()>& action) {
  auto* probe = app.add_subcommand("probe", "Linear probes on frozen embeddings");
  probe->require_subcommand(1);
  {
    struct Opts {
      std::string task = "apnea", ckpt, out, config;
      DataOptions data;
      std::optional<int> epochs, iterations, batch;
      std::optional<double> lr, wd;
      bool no_weighting = false;
    };
    auto o = std::make_shared<Opts>();
    auto* c = probe->add_subcommand("train", "Train a probe (threshold picked on the validation split)");
    c->add_option("--task", o->task)->required()->check(CLI::IsMember({"sleep_stage_5", "oxygen_desaturation",
                                                                          "eeg_arousal", "apnea", "hypopnea",
                                                                          "apnea_hypopnea"}));
    c->add_option("--ckpt", o->ckpt, "Model or training checkpoint")->required()->check(CLI::ExistingFile);
    o->data.add(c, false);
    c->add_option("--split-by", o->data.split_by)->check(CLI::IsMember({"recording", "epoch"}))->capture_default_str();
    c->add_option("--split-seed", o->data.split_seed);
    c->add_option("--config", o->config, "Flat JSON probe config")->check(CLI::ExistingFile);
    c->add_option("--epochs", o->epochs);
    c->add_option("--iterations-per-epoch", o->iterations);
    c->add_option("--batch-size", o->batch);
    c->add_option("--lr", o->lr);
    c->add_option("--weight-decay", o->wd);
    c->add_flag("--no-class-weighting", o->no_weighting);
    c->add_option("--out", o->out, "Run directory")->required();
    c->callback([o, &g, &action] {
      action = [o, &g] {
        json file = o->config.empty() ? json::object() : read_json(o->config);
        const auto seed = resolve_seed(g, &file);
        file["seed"] = seed;
        file["task"] = o->task;
        ProbeConfig pc = probe_config_from_json(file);
        if (o->epochs) pc.epochs = *o->epochs;
        if (o->iterations) pc.iterations_per_epoch = *o->iterations;
        if (o->batch) pc.batch_size = *o->batch;
        if (o->lr) pc.lr = *o->lr;
        if (o->wd) pc.weight_decay = *o->wd;
        if (o->no_weighting) pc.class_weighting = false;
        json cfg = to_json(pc);
        cfg.update(o->data.to_json(seed));
        cfg["ckpt"] = o->ckpt;
        Run run(o->out, "probe train", cfg);

        const auto st = load_model(o->ckpt);
        const auto d = load_dataset(o->data.dir, o->data.epoch_seconds);
        check_compatible(st, d);
        const auto [xtr, ytr] = labeled(st, select(d, o->data, seed, "train"), pc.task);
        auto p = train_probe(xtr, ytr, pc);
        json summary = {{"task", o->task}, {"train_samples", ytr.size()}};
        if (is_binary(pc.task)) {
          const auto [xva, yva] = labeled(st, select(d, o->data, seed, "val"), pc.task);
          const auto choice = select_threshold(p.positive_scores(xva), yva);
          p.threshold = choice.threshold;
          summary["threshold"] = choice.threshold;
          summary["val_f1"] = choice.f1;
          summary["val_samples"] = yva.size();
          run.log("threshold " + num(choice.threshold) + " (val F1 " + num(choice.f1) + ")");
        }
        save_probe(run / "probe.psgt", p, pc);
        write_json(run / "probe_summary.json", summary);
      };
    });
  }
  {
    struct Opts {
      std::string probe, ckpt, out;
      DataOptions data;
    };
    auto o = std::make_shared<Opts>();
    auto* c = probe->add_subcommand("eval", "Evaluate a probe: JSON report and confusion-matrix CSV");
    c->add_option("--probe", o->probe, "Probe file from 'probe train'")->required()->check(CLI::ExistingFile);
    c->add_option("--ckpt", o->ckpt, "Model or training checkpoint")->required()->check(CLI::ExistingFile);
    o->data.add(c, true, "test");
    c->add_option("--out", o->out, "Run directory")->required();
    c->callback([o, &g, &action] {
      action = [o, &g] {
        const auto seed = resolve_seed(g);
        auto cfg = o->data.to_json(seed);
        cfg["probe"] = o->probe;
        cfg["ckpt"] = o->ckpt;
        Run run(o->out, "probe eval", cfg);
        const auto p = load_probe(o->probe);
        const auto st = load_model(o->ckpt);
        const auto d = load_dataset(o->data.dir, o->data.epoch_seconds);
        check_compatible(st, d);
        const auto [x, y] = labeled(st, select(d, o->data, seed, o->data.split), p.task);
        const auto report = evaluate_probe(p, x, y);
        write_json(run / "report.json", report.to_json());
        report.write_confusion_csv(run / "confusion.csv");
        run.log(report.task + ": accuracy " + num(report.accuracy) + ", F1 " + num(report.f1));
      };
    });
  }
}

// ---------------------------------------------------------------- analyze

void add_analyze(CLI::App& app, Globals& g, std::function<void()>& action) {
  auto* analyze = app.add_subcommand("analyze", "Cohort silhouettes and distance correlation");
  analyze->require_subcommand(1);
  {
    struct Opts {
      std::string a, b, out, ci = "normal";
      std::size_t n = 2500;
      int repeats = 100, shuffles = 20;
    };
    auto o = std::make_shared<Opts>();
    auto* c = analyze->add_subcommand("cohorts", "Silhouette CI of two cohorts against shuffled baselines");
    c->add_option("--a", o->a, "Embeddings file for cohort A")->required()->check(CLI::ExistingFile);
    c->add_option("--b", o->b, "Embeddings file for cohort B")->required()->check(CLI::ExistingFile);
    c->add_option("--n", o->n, "Embeddings drawn per cohort per repeat")->capture_default_str();
    c->add_option("--repeats", o->repeats)->capture_default_str();
    c->add_option("--shuffles", o->shuffles)->capture_default_str();
    c->add_option("--ci", o->ci)->check(CLI::IsMember({"normal", "percentile"}))->capture_default_str();
    c->add_option("--out", o->out, "Run directory")->required();
    c->callback([o, &g, &action] {
      action = [o, &g] {
        const auto seed = resolve_seed(g);
        Run run(o->out, "analyze cohorts",
                {{"a", o->a}, {"b", o->b}, {"n", o->n}, {"repeats", o->repeats}, {"shuffles", o->shuffles},
                 {"ci", o->ci}, {"seed", seed}});
        const Matrix a = read_embeddings(o->a), b = read_embeddings(o->b);
        CohortOptions opts;
        opts.n_per_cohort = o->n;
        opts.repeats = o->repeats;
        opts.seed = seed;
        opts.ci = o->ci == "percentile" ? CiMethod::kPercentile : CiMethod::kNormal;
        const auto truth = cohort_silhouette_ci(a, b, opts);
        const auto shuffled = shuffled_baseline(a, b, opts, o->shuffles);
        const auto tests = cohort_ttest(truth.scores, shuffled);
        json sj = json::array(), tj = json::array();
        bool any_overlap = false;
        for (std::size_t i = 0; i < shuffled.size(); ++i) {
          sj.push_back(shuffled[i].to_json());
          tj.push_back({{"t", tests[i].t}, {"dof", tests[i].dof}, {"p", tests[i].p}, {"p_string", tests[i].p_string()},
                        {"p_underflow", tests[i].p_underflow}});
          any_overlap |= truth.overlaps(shuffled[i]);
        }
        write_json(run / "cohorts.json",
                   {{"true", truth.to_json()}, {"shuffled", sj}, {"ttests", tj}, {"overlaps_any_shuffle", any_overlap}});
        std::ofstream csv(run / "scores.csv");
        csv << "partition,repeat,silhouette\n";
        for (std::size_t r = 0; r < truth.scores.size(); ++r) csv << "true," << r << ',' << num(truth.scores[r]) << "\n";
        for (std::size_t s = 0; s < shuffled.size(); ++s)
          for (std::size_t r = 0; r < shuffled[s].scores.size(); ++r)
            csv << "shuffle_" << s << ',' << r << ',' << num(shuffled[s].scores[r]) << "\n";
        run.log("true CI [" + num(truth.lo) + ", " + num(truth.hi) + "]" +
                (any_overlap ? " overlaps a shuffled CI" : " disjoint from all shuffled CIs"));
      };
    });
  }
  {
    struct Opts {
      std::string ckpt, out, metric = "euclidean";
      DataOptions data;
      std::size_t n = 1000, max_pairs = 2000;
      std::optional<int> radius;
    };
    auto o = std::make_shared<Opts>();
    auto* c = analyze->add_subcommand("correlate", "Embedding vs generated-signal pairwise distance correlation");
    c->add_option("--ckpt", o->ckpt, "Model or training checkpoint")->required()->check(CLI::ExistingFile);
    o->data.add(c);
    c->add_option("--metric", o->metric)->check(CLI::IsMember({"euclidean", "dtw"}))->capture_default_str();
    c->add_option("--n", o->n, "Epochs sampled")->capture_default_str();
    c->add_option("--max-pairs", o->max_pairs, "Pairs kept in the scatter CSV")->capture_default_str();
    c->add_option("--dtw-radius", o->radius, "FastDTW radius (exact DTW when absent)");
    c->add_option("--out", o->out, "Run directory")->required();
    c->callback([o, &g, &action] {
      action = [o, &g] {
        const auto seed = resolve_seed(g);
        auto cfg = o->data.to_json(seed);
        cfg.update({{"ckpt", o->ckpt}, {"metric", o->metric}, {"n", o->n}, {"max_pairs", o->max_pairs},
                    {"dtw_radius", o->radius ? json(*o->radius) : json(nullptr)}, {"seed", seed}});
        Run run(o->out, "analyze correlate", cfg);
        const auto st = load_model(o->ckpt);
        const auto d = load_dataset(o->data.dir, o->data.epoch_seconds);
        check_compatible(st, d);
        const auto epochs = select(d, o->data, seed, o->data.split);
        CorrelationOptions opts;
        opts.metric = parse_metric(o->metric);
        opts.n_samples = o->n;
        opts.max_pairs = o->max_pairs;
        opts.seed = seed;
        opts.dtw_radius = o->radius;
        const auto r = distance_correlation(st, epochs, opts);
        write_json(run / "correlation.json", r.to_json());
        r.write_scatter_csv(run / "scatter.csv");
        run.log("rho " + num(r.rho) + " over " + std::to_string(r.pairs) + " pairs");
      };
    });
  }
}

// ---------------------------------------------------------------- generate / retrieve

void write_generated(const fs::path& path, const GeneratedEpoch& g, const std::vector<std::string>& channels,
                     const std::string& selector) {
  TensorFile f;
  f.meta = {{"kind", "generated"}, {"provenance", g.provenance}, {"selector", selector},
            {"sources", g.sources}, {"channels", channels}};
  f.tensors.emplace_back("signal", g.data);
  f.tensors.emplace_back("latent", g.latent.tokens);
  f.meta["latent_grid"] = {g.latent.channels, g.latent.patches};
  write_tensor_file(path, f);
}

GeneratedEpoch read_generated(const fs::path& path) {
  const auto f = read_tensor_file(path);
  if (f.meta.value("kind", std::string()) != "generated") throw DataError(path.string() + " is not a generated epoch");
  GeneratedEpoch g;
  g.data = *f.find("signal");
  g.provenance = f.meta.value("provenance", std::string());
  g.sources = f.meta.value("sources", std::vector<std::string>{});
  if (const Matrix* l = f.find("latent")) {
    g.latent.tokens = *l;
    g.latent.channels = f.meta.at("latent_grid")[0].get<int>();
    g.latent.patches = f.meta.at("latent_grid")[1].get<int>();
  }
  return g;
}

void write_ranking(Run& run, const std::string& name, const std::vector<RankedEpoch>& r) {
  std::ofstream csv(run / name);
  csv << "rank,epoch_id,distance\n";
  for (std::size_t i = 0; i < r.size(); ++i) csv << i + 1 << ',' << r[i].id << ',' << num(r[i].distance) << "\n";
}

void add_generate(CLI::App& app, Globals& g, std::function<void()>& action) {
  auto* gen = app.add_subcommand("generate", "Decode representative signals from averaged latents");
  gen->require_subcommand(1);
  {
    struct Opts {
      std::string ckpt, out, label, recording;
      DataOptions data;
    };
    auto o = std::make_shared<Opts>();
    auto* c = gen->add_subcommand("average", "Decode the mean latent of all epochs with a label");
    c->add_option("--ckpt", o->ckpt, "Model or training checkpoint")->required()->check(CLI::ExistingFile);
    o->data.add(c);
    c->add_option("--label", o->label, "Stage (Wake, N1, N2, N3, REM) or event (apnea, ...)")->required();
    c->add_option("--recording", o->recording, "Restrict to one recording id");
    c->add_option("--out", o->out, "Run directory")->required();
    c->callback([o, &g, &action] {
      action = [o, &g] {
        const auto seed = resolve_seed(g);
        auto cfg = o->data.to_json(seed);
        cfg.update({{"ckpt", o->ckpt}, {"label", o->label}, {"recording", o->recording}});
        const auto by_label = label_selector(o->label);
        Run run(o->out, "generate average", cfg);
        const auto st = load_model(o->ckpt);
        const auto d = load_dataset(o->data.dir, o->data.epoch_seconds);
        check_compatible(st, d);
        const auto epochs = select(d, o->data, seed, o->data.split);
        const std::string rec = o->recording;
        const EpochSelector sel = [&](const SleepEpoch& e) {
          return by_label(e) && (rec.empty() || e.recording_id == rec);
        };
        const std::string name = "label=" + o->label + (rec.empty() ? "" : ", recording=" + rec);
        const auto gen_epoch = generate_average(st, epochs, sel, name);
        write_generated(run / "generated.psgt", gen_epoch, d.channels, name);
        std::ofstream csv(run / "generated.csv");
        csv << "sample,time_s";
        for (const auto& ch : d.channels) csv << ',' << ch;
        csv << "\n";
        for (Eigen::Index t = 0; t < gen_epoch.data.cols(); ++t) {
          csv << t << ',' << num(static_cast<double>(t) / d.sample_rate);
          for (Eigen::Index ch = 0; ch < gen_epoch.data.rows(); ++ch) csv << ',' << num(gen_epoch.data(ch, t));
          csv << "\n";
        }
        run.log("averaged " + std::to_string(gen_epoch.sources.size()) + " epochs for " + name);
      };
    });
  }

  auto* ret = app.add_subcommand("retrieve", "Nearest-neighbour retrieval and outlier ranking");
  ret->require_subcommand(1);
  {
    struct Opts {
      std::string ckpt, out, reference, reference_epoch, space = "signal", metric = "euclidean";
      DataOptions data;
      std::size_t k = 5;
    };
    auto o = std::make_shared<Opts>();
    auto* c = ret->add_subcommand("knn", "Closest real epochs to a generated (or real) reference");
    c->add_option("--ckpt", o->ckpt, "Model or training checkpoint")->required()->check(CLI::ExistingFile);
    o->data.add(c);
    auto* ref = c->add_option("--reference", o->reference, "Generated epoch file")->check(CLI::ExistingFile);
    auto* ref_epoch = c->add_option("--reference-epoch", o->reference_epoch, "Epoch id (recording#index)");
    ref->excludes(ref_epoch);
    c->add_option("--space", o->space)->check(CLI::IsMember({"signal", "embedding"}))->capture_default_str();
    c->add_option("--metric", o->metric)->check(CLI::IsMember({"euclidean", "dtw"}))->capture_default_str();
    c->add_option("-k", o->k)->capture_default_str();
    c->add_option("--out", o->out, "Run directory")->required();
    c->callback([o, &g, &action] {
      action = [o, &g] {
        if (o->reference.empty() == o->reference_epoch.empty())
          throw UsageError("give exactly one of --reference or --reference-epoch");
        const auto seed = resolve_seed(g);
        auto cfg = o->data.to_json(seed);
        cfg.update({{"ckpt", o->ckpt}, {"reference", o->reference}, {"reference_epoch", o->reference_epoch},
                    {"space", o->space}, {"metric", o->metric}, {"k", o->k}});
        Run run(o->out, "retrieve knn", cfg);
        const auto st = load_model(o->ckpt);
        const auto d = load_dataset(o->data.dir, o->data.epoch_seconds);
        check_compatible(st, d);
        const auto epochs = select(d, o->data, seed, o->data.split);
        GeneratedEpoch reference;
        if (!o->reference.empty()) {
          reference = read_generated(o->reference);
        } else {
          const auto it = std::find_if(d.epochs.begin(), d.epochs.end(),
                                       [&](const SleepEpoch& e) { return epoch_id(e) == o->reference_epoch; });
          if (it == d.epochs.end()) throw DataError("no epoch '" + o->reference_epoch + "'");
          reference = full_decode(st, *it);
        }
        const auto r = nearest_neighbor(st, reference, epochs, parse_space(o->space), parse_metric(o->metric),
                                        std::min(o->k, epochs.size()));
        write_ranking(run, "neighbors.csv", r);
        run.log("nearest: " + r.front().id + " at " + num(r.front().distance));
      };
    });
  }
  {
    struct Opts {
      std::string ckpt, out, space = "signal", metric = "euclidean";
      DataOptions data;
    };
    auto o = std::make_shared<Opts>();
    auto* c = ret->add_subcommand("outliers", "Rank epochs by distance to the mean representation");
    c->add_option("--ckpt", o->ckpt, "Model or training checkpoint")->required()->check(CLI::ExistingFile);
    o->data.add(c);
    c->add_option("--space", o->space)->check(CLI::IsMember({"signal", "embedding"}))->capture_default_str();
    c->add_option("--metric", o->metric)->check(CLI::IsMember({"euclidean", "dtw"}))->capture_default_str();
    c->add_option("--out", o->out, "Run directory")->required();
    c->callback([o, &g, &action] {
      action = [o, &g] {
        const auto seed = resolve_seed(g);
        auto cfg = o->data.to_json(seed);
        cfg.update({{"ckpt", o->ckpt}, {"space", o->space}, {"metric", o->metric}});
        Run run(o->out, "retrieve outliers", cfg);
        const auto st = load_model(o->ckpt);
        const auto d = load_dataset(o->data.dir, o->data.epoch_seconds);
        check_compatible(st, d);
        const auto epochs = select(d, o->data, seed, o->data.split);
        write_ranking(run, "outliers.csv", outlier_rank(st, epochs, parse_space(o->space), parse_metric(o->metric)));
      };
    });
  }
}

// ---------------------------------------------------------------- impute

void add_impute(CLI::App& app, Globals& g, std::function<void()>& action) {
  auto* imp = app.add_subcommand("impute", "Whole-channel imputation");
  imp->require_subcommand(1);
  {
    struct Opts {
      std::string ckpt, out;
      DataOptions data;
      std::size_t n = 5000;
      std::optional<int> radius;
      std::string cost = "abs";
    };
    auto o = std::make_shared<Opts>();
    auto* c = imp->add_subcommand("eval", "MSE and DTW per channel, one channel masked at a time");
    c->add_option("--ckpt", o->ckpt, "Model or training checkpoint")->required()->check(CLI::ExistingFile);
    o->data.add(c, true, "test");
    c->add_option("--n", o->n, "Epochs sampled")->capture_default_str();
    c->add_option("--dtw-radius", o->radius, "FastDTW radius (exact DTW when absent)");
    c->add_option("--dtw-cost", o->cost)->check(CLI::IsMember({"abs", "squared"}))->capture_default_str();
    c->add_option("--out", o->out, "Run directory")->required();
    c->callback([o, &g, &action] {
      action = [o, &g] {
        const auto seed = resolve_seed(g);
        auto cfg = o->data.to_json(seed);
        cfg.update({{"ckpt", o->ckpt}, {"n", o->n}, {"dtw_radius", o->radius ? json(*o->radius) : json(nullptr)},
                    {"dtw_cost", o->cost}, {"seed", seed}});
        Run run(o->out, "impute eval", cfg);
        const auto st = load_model(o->ckpt);
        const auto d = load_dataset(o->data.dir, o->data.epoch_seconds);
        check_compatible(st, d);
        const auto epochs = select(d, o->data, seed, o->data.split);
        ImputationOptions opts;
        opts.n_samples = std::min(o->n, epochs.size());
        if (opts.n_samples < o->n)
          run.log("only " + std::to_string(epochs.size()) + " epochs available; using all of them");
        opts.seed = seed;
        opts.dtw_radius = o->radius;
        opts.dtw_cost = o->cost == "squared" ? DtwCost::kSquared : DtwCost::kAbs;
        const auto r = evaluate_imputation(st, epochs, d.channels, opts);
        write_json(run / "report.json", r.to_json());
        std::ofstream csv(run / "report.csv");
        csv << "channel,mse_mean,mse_sd,dtw_mean,dtw_sd\n";
        for (const auto& row : r.rows)
          csv << '"' << row.channel << "\"," << num(row.mse_mean) << ',' << num(row.mse_sd) << ',' << num(row.dtw_mean)
              << ',' << num(row.dtw_sd) << "\n";
        for (const auto& row : r.rows) run.log(row.channel + ": MSE " + num(row.mse_mean));
      };
    });
  }
  {
    struct Opts {
      std::string ckpt, out, recording, channel;
      DataOptions data;
      int epoch = 0;
    };
    auto o = std::make_shared<Opts>();
    auto* c = imp->add_subcommand("one", "Original and imputed trace of one channel of one epoch");
    c->add_option("--ckpt", o->ckpt, "Model or training checkpoint")->required()->check(CLI::ExistingFile);
    o->data.add(c, false);
    c->add_option("--recording", o->recording)->required();
    c->add_option("--epoch", o->epoch)->required();
    c->add_option("--channel", o->channel)->required();
    c->add_option("--out", o->out, "Run directory")->required();
    c->callback([o, &g, &action] {
      action = [o, &g] {
        const auto seed = resolve_seed(g);
        auto cfg = o->data.to_json(seed);
        cfg.update({{"ckpt", o->ckpt}, {"recording", o->recording}, {"epoch", o->epoch}, {"channel", o->channel}});
        Run run(o->out, "impute one", cfg);
        const auto st = load_model(o->ckpt);
        const auto d = load_dataset(o->data.dir, o->data.epoch_seconds);
        check_compatible(st, d);
        const int ch = channel_index(d, o->channel);
        const auto it = std::find_if(d.epochs.begin(), d.epochs.end(), [&](const SleepEpoch& e) {
          return e.recording_id == o->recording && e.epoch_index == o->epoch;
        });
        if (it == d.epochs.end())
          throw DataError("no epoch " + std::to_string(o->epoch) + " in recording '" + o->recording + "'");
        const Eigen::VectorXd imputed = impute_channel(st, *it, ch);
        const Eigen::VectorXd original = it->data.row(ch).transpose().cast<double>();
        std::ofstream csv(run / "trace.csv");
        csv << "sample,time_s,original,imputed\n";
        for (Eigen::Index t = 0; t < imputed.size(); ++t)
          csv << t << ',' << num(static_cast<double>(t) / d.sample_rate) << ',' << num(original(t)) << ','
              << num(imputed(t)) << "\n";
        const auto n = static_cast<std::size_t>(imputed.size());
        const double m = mse(std::span<const double>(imputed.data(), n), std::span<const double>(original.data(), n));
        const double w = dtw(std::span<const double>(imputed.data(), n), std::span<const double>(original.data(), n));
        write_json(run / "summary.json", {{"epoch_id", epoch_id(*it)}, {"channel", o->channel}, {"mse", m}, {"dtw", w}});
        run.log(o->channel + ": MSE " + num(m) + ", DTW " + num(w));
      };
    });
  }
}

}  // namespace

void add_commands(CLI::App& app, Globals& globals, std::function<void()>& action) {
  add_data(app, globals, action);
  add_pretrain(app, globals, action);
  add_embed(app, globals, action);
  add_probe(app, globals, action);
  add_analyze(app, globals, action);
  add_generate(app, globals, action);
  add_impute(app, globals, action);
}

}  // namespace cli
