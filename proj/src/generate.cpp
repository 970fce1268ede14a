#include "pedsleep/generate.hpp"

#include <algorithm>

#include "pedsleep/errors.hpp"
#include "pedsleep/parallel.hpp"

namespace pedsleep {

std::string epoch_id(const SleepEpoch& e) { return e.recording_id + "#" + std::to_string(e.epoch_index); }

const char* to_string(RetrievalSpace s) { return s == RetrievalSpace::kGeneratedSignal ? "signal" : "embedding"; }
const char* to_string(DistanceMetric m) { return m == DistanceMetric::kEuclidean ? "euclidean" : "dtw"; }

GeneratedEpoch full_decode(const ModelState& state, const SleepEpoch& epoch) {
  const LatentGrid latent = encode(state, patchify(epoch.data, state.config.patch));
  return {unpatchify(decode(state, latent)), "full_decode", {epoch_id(epoch)}, latent};
}

LatentGrid average_latent(std::span<const LatentGrid> latents) {
  if (latents.empty()) throw DataError("average_latent: empty list");
  LatentGrid out = latents.front();
  for (std::size_t i = 1; i < latents.size(); ++i) {
    if (latents[i].tokens.rows() != out.tokens.rows() || latents[i].tokens.cols() != out.tokens.cols())
      throw DataError("average_latent: latent grids differ in shape");
    out.tokens += latents[i].tokens;
  }
  out.tokens /= static_cast<double>(latents.size());
  return out;
}

GeneratedEpoch generate_average(const ModelState& state, std::span<const SleepEpoch> epochs,
                                const EpochSelector& selector, const std::string& selector_name) {
  std::vector<const SleepEpoch*> chosen;
  for (const auto& e : epochs)
    if (selector(e)) chosen.push_back(&e);
  if (chosen.empty()) throw DataError("generate_average: no epoch matches selector '" + selector_name + "'");
  std::vector<LatentGrid> latents(chosen.size());
  parallel_for(chosen.size(), [&](std::size_t i) {
    latents[i] = encode(state, patchify(chosen[i]->data, state.config.patch));
  });
  GeneratedEpoch g;
  g.latent = average_latent(latents);
  g.data = unpatchify(decode(state, g.latent));
  g.provenance = "average";
  for (const auto* e : chosen) g.sources.push_back(epoch_id(*e));
  return g;
}

namespace {

Matrix embedding_matrix(const LatentGrid& latent) {
  const Embedding e = pool_embedding(latent);
  Matrix m(latent.channels, latent.patches);
  for (int c = 0; c < latent.channels; ++c)
    for (int n = 0; n < latent.patches; ++n) m(c, n) = e.vector(c * latent.patches + n);
  return m;
}

Matrix representation_of_signal(const ModelState& state, const Matrix& signal, RetrievalSpace space) {
  const LatentGrid latent = encode(state, patchify(signal, state.config.patch));
  if (space == RetrievalSpace::kEmbedding) return embedding_matrix(latent);
  return unpatchify(decode(state, latent));
}

std::vector<RankedEpoch> rank(std::vector<RankedEpoch> r, bool descending) {
  std::sort(r.begin(), r.end(), [&](const RankedEpoch& a, const RankedEpoch& b) {
    if (a.distance != b.distance) return descending ? a.distance > b.distance : a.distance < b.distance;
    return a.id < b.id;
  });
  return r;
}

}  // namespace

Matrix representation(const ModelState& state, const SleepEpoch& epoch, RetrievalSpace space) {
  return representation_of_signal(state, epoch.data.cast<double>(), space);
}

Matrix representation(const ModelState& state, const GeneratedEpoch& generated, RetrievalSpace space) {
  // A generated epoch already lives in signal space.
  if (space == RetrievalSpace::kGeneratedSignal) return generated.data;
  if (generated.latent.tokens.size() > 0) return embedding_matrix(generated.latent);
  return representation_of_signal(state, generated.data, space);
}

double representation_distance(const Matrix& a, const Matrix& b, DistanceMetric metric, std::optional<int> dtw_radius) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DataError("representation_distance: shape mismatch");
  if (metric == DistanceMetric::kEuclidean) return (a - b).norm();
  double sum = 0;
  for (Eigen::Index c = 0; c < a.rows(); ++c) {
    const auto n = static_cast<std::size_t>(a.cols());
    sum += dtw_distance(std::span<const double>(a.row(c).data(), n), std::span<const double>(b.row(c).data(), n),
                        dtw_radius);
  }
  return sum;
}

std::vector<RankedEpoch> nearest_neighbor(const ModelState& state, const Matrix& reference,
                                          std::span<const SleepEpoch> candidates, RetrievalSpace space,
                                          DistanceMetric metric, std::size_t k) {
  if (candidates.empty()) throw DataError("nearest_neighbor: no candidates");
  if (k > candidates.size()) throw DataError("nearest_neighbor: k exceeds number of candidates");
  std::vector<RankedEpoch> r(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t i) {
    r[i] = {i, epoch_id(candidates[i]),
            representation_distance(reference, representation(state, candidates[i], space), metric)};
  });
  r = rank(std::move(r), false);
  r.resize(k);
  return r;
}

std::vector<RankedEpoch> nearest_neighbor(const ModelState& state, const GeneratedEpoch& reference,
                                          std::span<const SleepEpoch> candidates, RetrievalSpace space,
                                          DistanceMetric metric, std::size_t k) {
  return nearest_neighbor(state, representation(state, reference, space), candidates, space, metric, k);
}

std::vector<RankedEpoch> outlier_rank(const ModelState& state, std::span<const SleepEpoch> epochs,
                                      RetrievalSpace space, DistanceMetric metric) {
  if (epochs.size() < 2) throw DataError("outlier_rank: need at least 2 epochs");
  std::vector<Matrix> reps(epochs.size());
  parallel_for(epochs.size(), [&](std::size_t i) { reps[i] = representation(state, epochs[i], space); });
  // Sum in id order so the mean does not depend on input order.
  std::vector<std::size_t> order(epochs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return epoch_id(epochs[a]) < epoch_id(epochs[b]); });
  Matrix mean = Matrix::Zero(reps[0].rows(), reps[0].cols());
  for (auto i : order) mean += reps[i];
  mean /= static_cast<double>(reps.size());
  std::vector<RankedEpoch> r(epochs.size());
  parallel_for(epochs.size(), [&](std::size_t i) {
    r[i] = {i, epoch_id(epochs[i]), representation_distance(reps[i], mean, metric)};
  });
  return rank(std::move(r), true);
}

}  // namespace pedsleep
