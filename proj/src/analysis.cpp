#include "pedsleep/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pedsleep/errors.hpp"
#include "pedsleep/parallel.hpp"
#include "pedsleep/rng.hpp"

namespace pedsleep {

nlohmann::json CohortCIResult::to_json() const {
  return {{"mean", mean}, {"ci_lo", lo}, {"ci_hi", hi}, {"repeats", scores.size()},
          {"size_a", size_a}, {"size_b", size_b}, {"seed", seed}};
}

namespace {

std::uint64_t rows_fingerprint(const Matrix& pool, std::span<const std::size_t> rows) {
  std::uint64_t h = fnv1a(std::string_view("cohort"));
  for (auto r : rows)
    h = fnv1a(std::span<const double>(pool.row(static_cast<Eigen::Index>(r)).data(), static_cast<std::size_t>(pool.cols())), h);
  return h;
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double x = q * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(x));
  const auto j = std::min(i + 1, v.size() - 1);
  return v[i] + (x - static_cast<double>(i)) * (v[j] - v[i]);
}

CohortCIResult cohort_ci_rows(const Matrix& pool, std::span<const std::size_t> rows_a,
                              std::span<const std::size_t> rows_b, const CohortOptions& opts) {
  const std::size_t n = opts.n_per_cohort;
  if (opts.repeats < 2) throw DataError("cohort analysis: need at least 2 repeats");
  if (n == 0) throw DataError("cohort analysis: n_per_cohort must be positive");
  for (auto size : {rows_a.size(), rows_b.size()})
    if (size < n)
      throw DataError("cohort of " + std::to_string(size) + " embeddings is smaller than n_per_cohort=" +
                      std::to_string(n) + "; use n_per_cohort <= " + std::to_string(std::min(rows_a.size(), rows_b.size())));

  const auto fa = rows_fingerprint(pool, rows_a);
  const auto fb = rows_fingerprint(pool, rows_b);
  CohortCIResult r;
  r.size_a = rows_a.size();
  r.size_b = rows_b.size();
  r.seed = opts.seed;
  r.scores.resize(static_cast<std::size_t>(opts.repeats));
  parallel_for(r.scores.size(), [&](std::size_t rep) {
    auto rng_a = make_rng(opts.seed, {tag(Stream::kCohort), rep, fa});
    auto rng_b = make_rng(opts.seed, {tag(Stream::kCohort), rep, fb});
    const auto pick_a = sample_without_replacement(rows_a.size(), n, rng_a);
    const auto pick_b = sample_without_replacement(rows_b.size(), n, rng_b);
    Matrix points(static_cast<Eigen::Index>(2 * n), pool.cols());
    std::vector<int> labels(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      points.row(static_cast<Eigen::Index>(i)) = pool.row(static_cast<Eigen::Index>(rows_a[pick_a[i]]));
      points.row(static_cast<Eigen::Index>(n + i)) = pool.row(static_cast<Eigen::Index>(rows_b[pick_b[i]]));
      labels[i] = 0;
      labels[n + i] = 1;
    }
    r.scores[rep] = silhouette(points, labels).mean_score;
  });

  const auto R = static_cast<double>(r.scores.size());
  double sum = 0;
  for (double s : r.scores) sum += s;
  r.mean = sum / R;
  if (opts.ci == CiMethod::kNormal) {
    double ss = 0;
    for (double s : r.scores) ss += (s - r.mean) * (s - r.mean);
    const double half = 1.96 * std::sqrt(ss / (R - 1)) / std::sqrt(R);
    r.lo = r.mean - half;
    r.hi = r.mean + half;
  } else {
    r.lo = std::min(percentile(r.scores, 0.025), r.mean);
    r.hi = std::max(percentile(r.scores, 0.975), r.mean);
  }
  return r;
}

Matrix stack(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw DataError("cohorts have different embedding dimensions");
  Matrix pool(a.rows() + b.rows(), a.cols());
  pool.topRows(a.rows()) = a;
  pool.bottomRows(b.rows()) = b;
  return pool;
}

std::vector<std::size_t> range(std::size_t from, std::size_t to) {
  std::vector<std::size_t> v;
  for (std::size_t i = from; i < to; ++i) v.push_back(i);
  return v;
}

}  // namespace

CohortCIResult cohort_silhouette_ci(const Matrix& a, const Matrix& b, const CohortOptions& opts) {
  const Matrix pool = stack(a, b);
  const auto na = static_cast<std::size_t>(a.rows());
  const auto rows_a = range(0, na);
  const auto rows_b = range(na, static_cast<std::size_t>(pool.rows()));
  return cohort_ci_rows(pool, rows_a, rows_b, opts);
}

std::vector<CohortCIResult> shuffled_baseline(const Matrix& a, const Matrix& b, const CohortOptions& opts,
                                              int n_shuffles) {
  const Matrix pool = stack(a, b);
  const auto na = static_cast<std::size_t>(a.rows());
  std::vector<CohortCIResult> out;
  for (int s = 0; s < n_shuffles; ++s) {
    auto rng = make_rng(opts.seed, {tag(Stream::kShuffle), static_cast<std::uint64_t>(s)});
    const auto perm = permutation(static_cast<std::size_t>(pool.rows()), rng);
    std::vector<std::size_t> rows_a(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(na));
    std::vector<std::size_t> rows_b(perm.begin() + static_cast<std::ptrdiff_t>(na), perm.end());
    CohortOptions o = opts;
    o.seed = derive_seed(opts.seed, {tag(Stream::kShuffle), static_cast<std::uint64_t>(s)});
    out.push_back(cohort_ci_rows(pool, rows_a, rows_b, o));
  }
  return out;
}

std::vector<WelchResult> cohort_ttest(std::span<const double> true_scores, std::span<const CohortCIResult> shuffles) {
  std::vector<WelchResult> out;
  for (const auto& s : shuffles) out.push_back(welch_t(true_scores, s.scores));
  return out;
}

nlohmann::json CorrelationReport::to_json() const {
  return {{"rho", rho}, {"pairs", pairs}, {"metric", to_string(metric)}, {"samples", epoch_ids.size()},
          {"scatter_pairs", scatter.size()}};
}

void CorrelationReport::write_scatter_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "pair_id,epoch_a,epoch_b,embedding_distance,signal_distance\n";
  out.precision(17);
  for (std::size_t k = 0; k < scatter.size(); ++k) {
    const auto& p = scatter[k];
    out << k << ',' << epoch_ids[p.i] << ',' << epoch_ids[p.j] << ',' << p.embedding_distance << ','
        << p.signal_distance << '\n';
  }
}

CorrelationReport distance_correlation(const ModelState& state, std::span<const SleepEpoch> epochs,
                                       const CorrelationOptions& opts) {
  if (opts.n_samples < 3)
    throw DataError("distance_correlation: n_samples must be >= 3 (" + std::to_string(opts.n_samples) +
                    " samples give fewer than 3 pairs, so no correlation is defined)");
  if (opts.n_samples > epochs.size())
    throw DataError("distance_correlation: n_samples exceeds available epochs (" + std::to_string(epochs.size()) + ")");
  auto rng = make_rng(opts.seed, {tag(Stream::kSample)});
  const auto pick = sample_without_replacement(epochs.size(), opts.n_samples, rng);
  const std::size_t n = pick.size();

  std::vector<Eigen::VectorXd> emb(n);
  std::vector<Matrix> sig(n);
  parallel_for(n, [&](std::size_t i) {
    const auto& e = epochs[pick[i]];
    const LatentGrid latent = encode(state, patchify(e.data, state.config.patch));
    emb[i] = pool_embedding(latent).vector;
    sig[i] = unpatchify(decode(state, latent));
  });

  CorrelationReport r;
  r.metric = opts.metric;
  for (auto i : pick) r.epoch_ids.push_back(epoch_id(epochs[i]));
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  std::vector<double> de(pairs.size()), ds(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    de[k] = (emb[i] - emb[j]).norm();
    ds[k] = representation_distance(sig[i], sig[j], opts.metric, opts.dtw_radius);
  });
  r.pairs = pairs.size();
  r.rho = pearson(de, ds);

  auto srng = make_rng(opts.seed, {tag(Stream::kScatter)});
  for (auto k : sample_without_replacement(pairs.size(), std::min(opts.max_pairs, pairs.size()), srng))
    r.scatter.push_back({pairs[k].first, pairs[k].second, de[k], ds[k]});
  return r;
}

}  // namespace pedsleep
