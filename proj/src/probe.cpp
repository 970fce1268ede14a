#include "pedsleep/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pedsleep/checkpoint.hpp"
#include "pedsleep/errors.hpp"
#include "pedsleep/rng.hpp"

namespace pedsleep {

namespace {
constexpr std::array<const char*, 6> kTaskNames = {"sleep_stage_5", "oxygen_desaturation", "eeg_arousal",
                                                   "apnea",         "hypopnea",            "apnea_hypopnea"};
}  // namespace

const char* to_string(ProbeTask t) { return kTaskNames[static_cast<std::size_t>(t)]; }

std::optional<ProbeTask> parse_probe_task(std::string_view s) {
  for (std::size_t i = 0; i < kTaskNames.size(); ++i)
    if (s == kTaskNames[i]) return static_cast<ProbeTask>(i);
  return std::nullopt;
}

int task_classes(ProbeTask t) { return t == ProbeTask::kSleepStage5 ? kNumSleepStages : 2; }
bool is_binary(ProbeTask t) { return t != ProbeTask::kSleepStage5; }

int task_label(ProbeTask t, const EventLabel& l) {
  switch (t) {
    case ProbeTask::kSleepStage5:
      return l.stage == SleepStage::kUnlabeled ? -1 : static_cast<int>(l.stage);
    case ProbeTask::kOxygenDesaturation:
      return l.oxygen_desaturation;
    case ProbeTask::kEegArousal:
      return l.eeg_arousal;
    case ProbeTask::kApnea:
      return l.apnea;
    case ProbeTask::kHypopnea:
      return l.hypopnea;
    case ProbeTask::kApneaHypopnea:
      return l.apnea_hypopnea();
  }
  return -1;
}

nlohmann::json to_json(const ProbeConfig& c) {
  return {{"task", to_string(c.task)},  {"batch_size", c.batch_size},
          {"lr", c.lr},                 {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},         {"iterations_per_epoch", c.iterations_per_epoch},
          {"seed", c.seed},             {"class_weighting", c.class_weighting}};
}

ProbeConfig probe_config_from_json(const nlohmann::json& j) {
  ProbeConfig c;
  if (j.contains("task")) {
    auto t = parse_probe_task(j.at("task").get<std::string>());
    if (!t) throw DataError("unknown probe task '" + j.at("task").get<std::string>() + "'");
    c.task = *t;
  }
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.epochs = j.value("epochs", c.epochs);
  c.iterations_per_epoch = j.value("iterations_per_epoch", c.iterations_per_epoch);
  c.seed = j.value("seed", c.seed);
  c.class_weighting = j.value("class_weighting", c.class_weighting);
  return c;
}

Matrix LinearProbe::probabilities(const Matrix& x) const {
  if (x.cols() != weight.rows())
    throw DataError("probe expects " + std::to_string(weight.rows()) + "-dim embeddings, got " +
                    std::to_string(x.cols()));
  Matrix z = x * weight;
  z.rowwise() += bias.row(0);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    z.row(i).array() -= z.row(i).maxCoeff();
    z.row(i) = z.row(i).array().exp().matrix();
    z.row(i) /= z.row(i).sum();
  }
  return z;
}

std::vector<double> LinearProbe::positive_scores(const Matrix& x) const {
  if (classes() != 2) throw DataError("positive_scores: probe is not binary");
  const Matrix p = probabilities(x);
  std::vector<double> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) out[static_cast<std::size_t>(i)] = p(i, 1);
  return out;
}

std::vector<int> LinearProbe::predict(const Matrix& x) const {
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  if (classes() == 2) {
    const double thr = threshold.value_or(0.5);
    const auto s = positive_scores(x);
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] >= thr;
    return out;
  }
  const Matrix p = probabilities(x);
  for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i).maxCoeff(&out[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<double> class_weights(std::span<const int> labels, int classes) {
  std::vector<double> count(static_cast<std::size_t>(classes), 0.0);
  for (int y : labels) {
    if (y < 0 || y >= classes) throw DataError("label " + std::to_string(y) + " out of range");
    count[static_cast<std::size_t>(y)] += 1;
  }
  std::vector<int> absent;
  for (int k = 0; k < classes; ++k)
    if (count[static_cast<std::size_t>(k)] == 0) absent.push_back(k);
  if (!absent.empty()) {
    std::string list;
    for (int k : absent) list += (list.empty() ? "" : ", ") + std::to_string(k);
    throw DataError("class(es) absent from training labels: " + list);
  }
  std::vector<double> w(static_cast<std::size_t>(classes));
  double mean = 0;
  for (int k = 0; k < classes; ++k) mean += (w[k] = 1.0 / count[static_cast<std::size_t>(k)]);
  mean /= classes;
  for (double& v : w) v /= mean;
  return w;
}

LinearProbe init_probe(int dim, ProbeTask task, std::uint64_t seed) {
  LinearProbe p;
  p.task = task;
  const int K = task_classes(task);
  p.weight.resize(dim, K);
  p.bias.resize(1, K);
  auto rng = make_rng(seed, {tag(Stream::kProbe), 0});
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  for (Eigen::Index i = 0; i < p.weight.size(); ++i) p.weight.data()[i] = bound * (2 * uniform01(rng) - 1);
  for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias.data()[i] = bound * (2 * uniform01(rng) - 1);
  return p;
}

LinearProbe train_probe(const Matrix& x, std::span<const int> labels, const ProbeConfig& cfg) {
  if (x.rows() == 0 || static_cast<std::size_t>(x.rows()) != labels.size())
    throw DataError("train_probe: embeddings and labels must be non-empty and aligned");
  const int K = task_classes(cfg.task);
  const auto weights = class_weights(labels, K);
  LinearProbe p = init_probe(static_cast<int>(x.cols()), cfg.task, cfg.seed);

  Matrix mw = Matrix::Zero(p.weight.rows(), p.weight.cols()), vw = mw;
  Matrix mb = Matrix::Zero(1, K), vb = mb;
  const auto n = static_cast<std::size_t>(x.rows());
  const auto B = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t steps = static_cast<std::int64_t>(cfg.epochs) * cfg.iterations_per_epoch;
  Matrix xb(static_cast<Eigen::Index>(B), x.cols());
  std::vector<int> yb(B);
  for (std::int64_t t = 1; t <= steps; ++t) {
    auto rng = make_rng(cfg.seed, {tag(Stream::kProbe), 1, static_cast<std::uint64_t>(t)});
    for (std::size_t b = 0; b < B; ++b) {
      const auto i = uniform_index(n, rng);
      xb.row(static_cast<Eigen::Index>(b)) = x.row(static_cast<Eigen::Index>(i));
      yb[b] = labels[i];
    }
    Matrix grad = p.probabilities(xb);  // becomes dLoss/dlogits
    double wsum = 0;
    for (std::size_t b = 0; b < B; ++b) wsum += cfg.class_weighting ? weights[static_cast<std::size_t>(yb[b])] : 1.0;
    for (std::size_t b = 0; b < B; ++b) {
      const double w = cfg.class_weighting ? weights[static_cast<std::size_t>(yb[b])] : 1.0;
      grad(static_cast<Eigen::Index>(b), yb[b]) -= 1.0;
      grad.row(static_cast<Eigen::Index>(b)) *= w / wsum;
    }
    const Matrix gw = xb.transpose() * grad;
    const Matrix gb = grad.colwise().sum();

    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    auto update = [&](Matrix& param, Matrix& m, Matrix& v, const Matrix& g) {
      param *= 1.0 - cfg.lr * cfg.weight_decay;
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
      param.array() -= cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
    };
    update(p.weight, mw, vw, gw);
    update(p.bias, mb, vb, gb);
  }
  if (!p.weight.allFinite() || !p.bias.allFinite()) throw NumericError("train_probe: non-finite probe weights");
  return p;
}

ThresholdChoice select_threshold(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw DataError("select_threshold: scores and labels must be non-empty and aligned");
  if (std::none_of(labels.begin(), labels.end(), [](int y) { return y == 1; }))
    throw DataError("select_threshold: no positive labels in validation set");

  std::vector<double> uniq(scores.begin(), scores.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::vector<double> candidates = {uniq.front()};
  for (std::size_t i = 1; i < uniq.size(); ++i) candidates.push_back(0.5 * (uniq[i - 1] + uniq[i]));

  ThresholdChoice best{candidates.front(), -1.0};
  std::vector<int> pred(scores.size());
  for (double thr : candidates) {
    for (std::size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] >= thr;
    const double f = f1_score(labels, pred, F1Mode::kBinary);
    if (f >= best.f1) best = {thr, f};  // candidates ascend: ties keep the higher threshold
  }
  return best;
}

void select_threshold(LinearProbe& probe, const Matrix& x, std::span<const int> labels) {
  if (!is_binary(probe.task)) throw DataError("select_threshold: task is not binary");
  const auto s = probe.positive_scores(x);
  probe.threshold = select_threshold(s, labels).threshold;
}

MetricReport evaluate_probe(const LinearProbe& probe, const Matrix& x, std::span<const int> labels) {
  if (x.rows() == 0 || static_cast<std::size_t>(x.rows()) != labels.size())
    throw DataError("evaluate_probe: embeddings and labels must be non-empty and aligned");
  MetricReport r;
  r.task = to_string(probe.task);
  r.samples = labels.size();
  const auto pred = probe.predict(x);
  r.accuracy = accuracy(labels, pred);
  r.confusion = confusion(labels, pred, probe.classes());
  if (probe.classes() == 2) {
    const auto s = probe.positive_scores(x);
    r.f1 = f1_score(labels, pred, F1Mode::kBinary);
    r.threshold = probe.threshold.value_or(0.5);
    r.prevalence = static_cast<double>(std::count(labels.begin(), labels.end(), 1)) / static_cast<double>(labels.size());
    if (std::all_of(s.begin(), s.end(), [&](double v) { return v == s.front(); })) {
      r.auroc_flag = "undefined: degenerate (constant) scores";
    } else {
      try {
        r.auroc = auroc_binary(labels, s);
      } catch (const NumericError&) {
        r.auroc_flag = "undefined: single class in labels";
      }
    }
  } else {
    r.f1 = f1_score(labels, pred, F1Mode::kWeighted);
    const Matrix p = probe.probabilities(x);
    try {
      r.auroc = auroc_weighted_ovr(labels, p);
    } catch (const NumericError&) {
      r.auroc_flag = "undefined: single class in labels";
    }
  }
  return r;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j = {{"task", task}, {"samples", samples}, {"accuracy", accuracy}, {"f1", f1}};
  j["auroc"] = auroc ? nlohmann::json(*auroc) : nlohmann::json("undefined");
  if (!auroc_flag.empty()) j["auroc_flag"] = auroc_flag;
  if (prevalence) j["prevalence"] = *prevalence;
  if (threshold) j["threshold"] = *threshold;
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < confusion.row_normalized.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(confusion.row_normalized.cols()));
    for (Eigen::Index c = 0; c < confusion.row_normalized.cols(); ++c) row[c] = confusion.row_normalized(r, c);
    rows.push_back(row);
  }
  j["confusion_row_normalized"] = rows;
  std::vector<bool> empty = confusion.empty_rows;
  j["confusion_empty_rows"] = empty;
  return j;
}

void MetricReport::write_confusion_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const auto K = confusion.counts.rows();
  out << "true\\pred";
  for (Eigen::Index c = 0; c < K; ++c) out << ',' << c;
  out << ",count\n";
  for (Eigen::Index r = 0; r < K; ++r) {
    out << r;
    for (Eigen::Index c = 0; c < K; ++c) out << ',' << confusion.row_normalized(r, c);
    out << ',' << confusion.counts.row(r).sum() << '\n';
  }
}

void save_probe(const std::filesystem::path& path, const LinearProbe& probe, const ProbeConfig& cfg) {
  TensorFile f;
  f.meta = {{"kind", "probe"}, {"task", to_string(probe.task)}, {"probe_config", to_json(cfg)}};
  if (probe.threshold) f.meta["threshold"] = *probe.threshold;
  f.tensors.emplace_back("weight", probe.weight);
  f.tensors.emplace_back("bias", probe.bias);
  write_tensor_file(path, f);
}

LinearProbe load_probe(const std::filesystem::path& path) {
  const TensorFile f = read_tensor_file(path);
  if (f.meta.value("kind", std::string()) != "probe") throw DataError(path.string() + " is not a probe file");
  LinearProbe p;
  auto task = parse_probe_task(f.meta.at("task").get<std::string>());
  if (!task) throw DataError(path.string() + ": unknown task");
  p.task = *task;
  const Matrix* w = f.find("weight");
  const Matrix* b = f.find("bias");
  if (!w || !b) throw DataError(path.string() + ": missing weight or bias tensor");
  p.weight = *w;
  p.bias = *b;
  if (f.meta.contains("threshold")) p.threshold = f.meta.at("threshold").get<double>();
  return p;
}

}  // namespace pedsleep
