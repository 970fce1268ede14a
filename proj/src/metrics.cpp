#include "pedsleep/metrics.hpp"

#include <algorithm>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "pedsleep/errors.hpp"

namespace pedsleep {

namespace {

void check_pair(std::size_t a, std::size_t b, const char* what) {
  if (a == 0 || b == 0) throw DataError(std::string(what) + ": empty input");
  if (a != b) throw DataError(std::string(what) + ": length mismatch");
}

double f1_for(std::span<const int> y_true, std::span<const int> y_pred, int cls) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const bool t = y_true[i] == cls, p = y_pred[i] == cls;
    tp += t && p;
    fp += !t && p;
    fn += t && !p;
  }
  const double denom = 2.0 * static_cast<double>(tp) + static_cast<double>(fp + fn);
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

}  // namespace

double f1_score(std::span<const int> y_true, std::span<const int> y_pred, F1Mode mode) {
  check_pair(y_true.size(), y_pred.size(), "f1");
  if (mode == F1Mode::kBinary) {
    for (std::size_t i = 0; i < y_true.size(); ++i)
      if ((y_true[i] != 0 && y_true[i] != 1) || (y_pred[i] != 0 && y_pred[i] != 1))
        throw DataError("f1: binary mode requires labels in {0,1}");
    return f1_for(y_true, y_pred, 1);
  }
  std::map<int, std::size_t> support;
  for (int y : y_true) ++support[y];
  double sum = 0;
  for (const auto& [cls, n] : support) sum += static_cast<double>(n) * f1_for(y_true, y_pred, cls);
  return sum / static_cast<double>(y_true.size());
}

double accuracy(std::span<const int> y_true, std::span<const int> y_pred) {
  check_pair(y_true.size(), y_pred.size(), "accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) hit += y_true[i] == y_pred[i];
  return static_cast<double>(hit) / static_cast<double>(y_true.size());
}

double auroc_binary(std::span<const int> y_true, std::span<const double> scores) {
  check_pair(y_true.size(), scores.size(), "auroc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Average ranks over tie groups.
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y_true[i] != 0 && y_true[i] != 1) throw DataError("auroc: binary labels must be 0/1");
    if (y_true[i] == 1) {
      pos += 1;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) throw NumericError("auroc: undefined with a single class present");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

double auroc_weighted_ovr(std::span<const int> y_true, const Matrix& scores) {
  if (y_true.empty() || static_cast<Eigen::Index>(y_true.size()) != scores.rows())
    throw DataError("auroc: scores rows must match labels");
  std::map<int, std::size_t> support;
  for (int y : y_true) {
    if (y < 0 || y >= scores.cols()) throw DataError("auroc: label outside score columns");
    ++support[y];
  }
  if (support.size() < 2) throw NumericError("auroc: undefined with a single class present");
  double sum = 0;
  std::vector<int> bin(y_true.size());
  std::vector<double> col(y_true.size());
  for (const auto& [cls, n] : support) {
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      bin[i] = y_true[i] == cls;
      col[i] = scores(static_cast<Eigen::Index>(i), cls);
    }
    sum += static_cast<double>(n) * auroc_binary(bin, col);
  }
  return sum / static_cast<double>(y_true.size());
}

ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred, int classes) {
  check_pair(y_true.size(), y_pred.size(), "confusion");
  ConfusionMatrix cm;
  cm.counts = Eigen::MatrixXi::Zero(classes, classes);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_true[i] >= classes || y_pred[i] < 0 || y_pred[i] >= classes)
      throw DataError("confusion: label out of range [0, " + std::to_string(classes) + ")");
    ++cm.counts(y_true[i], y_pred[i]);
  }
  cm.row_normalized = Eigen::MatrixXd::Zero(classes, classes);
  cm.empty_rows.assign(static_cast<std::size_t>(classes), false);
  for (int r = 0; r < classes; ++r) {
    const int total = cm.counts.row(r).sum();
    if (total == 0) {
      cm.empty_rows[static_cast<std::size_t>(r)] = true;
      continue;
    }
    cm.row_normalized.row(r) = cm.counts.row(r).cast<double>() / static_cast<double>(total);
  }
  return cm;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("pearson: length mismatch");
  if (x.size() < 2) throw NumericError("pearson: undefined for fewer than 2 points");
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) throw NumericError("pearson: undefined for zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// --- DTW -------------------------------------------------------------------

namespace {

inline double local_cost(double a, double b, DtwCost cost) {
  const double d = a - b;
  return cost == DtwCost::kAbs ? std::abs(d) : d * d;
}

using Cell = std::pair<int, int>;

// DP restricted to a per-row inclusive column range (null: full matrix);
// returns the cost and, optionally, the optimal path.
double windowed_dtw(std::span<const double> a, std::span<const double> b, const std::vector<std::pair<int, int>>* rows,
                    DtwCost cost, std::vector<Cell>* path) {
  const int n = static_cast<int>(a.size()), m = static_cast<int>(b.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  // rows[i] = [lo, hi] inclusive column range allowed in row i.
  std::vector<int> lo(n), hi(n);
  for (int i = 0; i < n; ++i) {
    lo[i] = rows ? (*rows)[i].first : 0;
    hi[i] = rows ? (*rows)[i].second : m - 1;
  }
  std::vector<std::vector<double>> D(n);
  auto at = [&](int i, int j) -> double {
    if (i < 0 || j < 0 || j < lo[i] || j > hi[i]) return inf;
    return D[i][j - lo[i]];
  };
  for (int i = 0; i < n; ++i) {
    D[i].assign(static_cast<std::size_t>(hi[i] - lo[i] + 1), inf);
    for (int j = lo[i]; j <= hi[i]; ++j) {
      const double c = local_cost(a[i], b[j], cost);
      double best;
      if (i == 0 && j == 0) best = 0;
      else best = std::min({at(i - 1, j - 1), at(i - 1, j), at(i, j - 1)});
      D[i][j - lo[i]] = c + best;
    }
  }
  const double result = at(n - 1, m - 1);
  if (path) {
    path->clear();
    int i = n - 1, j = m - 1;
    path->push_back({i, j});
    while (i > 0 || j > 0) {
      const double diag = at(i - 1, j - 1), up = at(i - 1, j), left = at(i, j - 1);
      if (diag <= up && diag <= left) {
        --i;
        --j;
      } else if (up <= left) {
        --i;
      } else {
        --j;
      }
      path->push_back({i, j});
    }
    std::reverse(path->begin(), path->end());
  }
  return result;
}

std::vector<double> halve(std::span<const double> x) {
  std::vector<double> out((x.size() + 1) / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t k = 2 * i;
    out[i] = k + 1 < x.size() ? 0.5 * (x[k] + x[k + 1]) : x[k];
  }
  return out;
}

double fast_dtw_rec(std::span<const double> a, std::span<const double> b, int radius, DtwCost cost,
                    std::vector<Cell>* path) {
  const int min_size = radius + 2;
  const int n = static_cast<int>(a.size()), m = static_cast<int>(b.size());
  if (n <= min_size || m <= min_size) return windowed_dtw(a, b, nullptr, cost, path);

  const auto sa = halve(a), sb = halve(b);
  std::vector<Cell> coarse;
  fast_dtw_rec(sa, sb, radius, cost, &coarse);

  // Project each coarse cell to its 2x2 block, widen by radius.
  std::vector<std::pair<int, int>> rows(static_cast<std::size_t>(n), {m, -1});
  auto mark = [&](int i, int j) {
    if (i < 0 || i >= n) return;
    j = std::clamp(j, 0, m - 1);
    rows[i].first = std::min(rows[i].first, j);
    rows[i].second = std::max(rows[i].second, j);
  };
  for (const auto& [ci, cj] : coarse) {
    for (int di = -radius; di <= 1 + radius; ++di) {
      mark(2 * ci + di, 2 * cj - radius);
      mark(2 * ci + di, 2 * cj + 1 + radius);
    }
  }
  // Keep the band connected: every row must reach the previous row's range.
  for (int i = 0; i < n; ++i) {
    if (rows[i].second < 0) rows[i] = i > 0 ? rows[i - 1] : std::pair{0, 0};
    if (i > 0) rows[i].first = std::min(rows[i].first, rows[i - 1].second);
  }
  rows[0].first = 0;
  rows[static_cast<std::size_t>(n - 1)].second = m - 1;
  for (int i = n - 1; i > 0; --i) rows[i - 1].second = std::max(rows[i - 1].second, rows[i].first);
  return windowed_dtw(a, b, &rows, cost, path);
}

}  // namespace

double dtw(std::span<const double> a, std::span<const double> b, DtwCost cost) {
  if (a.empty() || b.empty()) throw DataError("dtw: empty sequence");
  const std::size_t m = b.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m, inf), cur(m, inf);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double best;
      if (i == 0 && j == 0) best = 0;
      else {
        best = inf;
        if (i > 0) best = std::min(best, prev[j]);
        if (j > 0) best = std::min(best, cur[j - 1]);
        if (i > 0 && j > 0) best = std::min(best, prev[j - 1]);
      }
      cur[j] = local_cost(a[i], b[j], cost) + best;
    }
    std::swap(prev, cur);
  }
  return prev[m - 1];
}

double fast_dtw(std::span<const double> a, std::span<const double> b, int radius, DtwCost cost) {
  if (a.empty() || b.empty()) throw DataError("dtw: empty sequence");
  if (radius < 0) throw DataError("dtw: radius must be non-negative");
  return fast_dtw_rec(a, b, radius, cost, nullptr);
}

double dtw_distance(std::span<const double> a, std::span<const double> b, std::optional<int> radius, DtwCost cost) {
  return radius ? fast_dtw(a, b, *radius, cost) : dtw(a, b, cost);
}

// --- silhouette ------------------------------------------------------------

SilhouetteResult silhouette(const Matrix& points, std::span<const int> labels) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (n != labels.size()) throw DataError("silhouette: labels must match points");
  std::map<int, int> ids;
  for (int l : labels) ids.emplace(l, 0);
  if (ids.size() < 2) throw DataError("silhouette: need at least 2 clusters");
  int next = 0;
  for (auto& [l, id] : ids) id = next++;
  const int K = next;
  std::vector<int> cluster(n);
  std::vector<std::size_t> size(static_cast<std::size_t>(K), 0);
  for (std::size_t i = 0; i < n; ++i) {
    cluster[i] = ids[labels[i]];
    ++size[static_cast<std::size_t>(cluster[i])];
  }

  SilhouetteResult r;
  r.scores.assign(n, 0.0);
  std::vector<std::vector<double>> sums(n, std::vector<double>(static_cast<std::size_t>(K), 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).norm();
      sums[i][static_cast<std::size_t>(cluster[j])] += d;
      sums[j][static_cast<std::size_t>(cluster[i])] += d;
    }
  }
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto own = static_cast<std::size_t>(cluster[i]);
    if (size[own] <= 1) continue;  // singleton: 0
    const double a = sums[i][own] / static_cast<double>(size[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < static_cast<std::size_t>(K); ++k)
      if (k != own) b = std::min(b, sums[i][k] / static_cast<double>(size[k]));
    const double denom = std::max(a, b);
    r.scores[i] = denom > 0 ? (b - a) / denom : 0.0;
    total += r.scores[i];
  }
  r.mean_score = total / static_cast<double>(n);
  return r;
}

// --- Welch -----------------------------------------------------------------

std::string WelchResult::p_string() const {
  if (p_underflow) return "< 1e-300";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", p);
  return buf;
}

WelchResult welch_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw DataError("welch_t: each sample needs at least 2 values");
  auto moments = [](std::span<const double> x) {
    const auto n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / (n - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  if (!std::isfinite(va) || !std::isfinite(vb)) throw NumericError("welch_t: non-finite variance");
  if (va == 0 && vb == 0) throw NumericError("welch_t: both samples have zero variance");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sa = va / na, sb = vb / nb;
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.dof = (sa + sb) * (sa + sb) / (sa * sa / (na - 1) + sb * sb / (nb - 1));
  // Two-sided p = I_{dof/(dof+t^2)}(dof/2, 1/2).
  const double x = r.dof / (r.dof + r.t * r.t);
  r.p = x >= 1.0 ? 1.0 : boost::math::ibeta(r.dof / 2.0, 0.5, x);
  if (r.p < 1e-300) {
    r.p = 0;
    r.p_underflow = true;
  }
  return r;
}

double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DataError("mse: shape mismatch");
  if (a.empty()) throw DataError("mse: empty input");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double mse(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DataError("mse: shape mismatch");
  return mse(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
             std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

}  // namespace pedsleep
