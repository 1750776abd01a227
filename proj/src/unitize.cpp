#include "dcslm/unitize.hpp"

#include "dcslm/errors.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace dcslm {

void FeatureStream::validate() const {
  if (frames.rows() < 1 || frames.cols() < 1) throw InvalidInput("feature stream is empty");
  if (!(frame_interval_ms > 0.0) || !std::isfinite(frame_interval_ms)) {
    throw InvalidInput("frame interval must be positive");
  }
  if (!frames.allFinite()) throw InvalidInput("feature stream contains non-finite values");
}

std::size_t UnitSequence::phonetic_size() const {
  std::size_t n = 0;
  for (const auto& g : phon) n += g.size();
  return n;
}

namespace {

double squared_distance(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = a(i) - b(i);
    s += d * d;
  }
  return s;
}

int nearest(const Matrix& points, Eigen::Index row, const Matrix& centroids, double* dist_out) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = squared_distance(points.row(row), centroids.row(c));
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist_out != nullptr) *dist_out = best_d;
  return best;
}

Matrix kmeans_plus_plus(const Matrix& points, int k, std::mt19937_64& rng) {
  const Eigen::Index n = points.rows();
  Matrix centroids(k, points.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centroids.row(0) = points.row(first(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = squared_distance(points.row(i), centroids.row(0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (acc > target && d2[static_cast<std::size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = first(rng);
    }
    centroids.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], squared_distance(points.row(i), centroids.row(c)));
    }
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iters) {
  if (k < 1) throw InvalidInput("k-means needs k >= 1");
  if (points.rows() < k) {
    throw InvalidInput("k-means needs at least k frames (have " + std::to_string(points.rows()) + ", k = " +
                       std::to_string(k) + ")");
  }
  if (points.cols() < 1) throw InvalidInput("k-means needs dim >= 1");
  if (!points.allFinite()) throw InvalidInput("k-means input contains non-finite values");
  if (max_iters < 1) throw InvalidInput("k-means needs max_iters >= 1");

  std::mt19937_64 rng(seed);
  KMeansResult result;
  Matrix centroids = kmeans_plus_plus(points, k, rng);
  const Eigen::Index n = points.rows();
  std::vector<int> assign(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) assign[static_cast<std::size_t>(i)] = nearest(points, i, centroids, nullptr);

  for (int iter = 0; iter < max_iters; ++iter) {
    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = assign[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      // An emptied cluster keeps its previous centroid.
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      }
    }
    double inertia = 0.0;
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      double d = 0.0;
      const int c = nearest(points, i, centroids, &d);
      inertia += d;
      if (c != assign[static_cast<std::size_t>(i)]) {
        changed = true;
        assign[static_cast<std::size_t>(i)] = c;
      }
    }
    result.inertia.push_back(inertia);
    result.iterations = iter + 1;
    if (!changed) break;
  }
  result.codebook.centroids = std::move(centroids);
  result.assignments = std::move(assign);
  return result;
}

Codebook train_codebook(std::span<const FeatureStream> features, int k, std::uint64_t seed, int max_iters) {
  if (features.empty()) throw InvalidInput("no feature streams to train a codebook on");
  const Eigen::Index dim = features[0].dim();
  Eigen::Index total = 0;
  for (const auto& f : features) {
    f.validate();
    if (f.dim() != dim) throw InvalidInput("feature streams disagree on dimension");
    total += f.n_frames();
  }
  Matrix points(total, dim);
  Eigen::Index row = 0;
  for (const auto& f : features) {
    points.middleRows(row, f.n_frames()) = f.frames;
    row += f.n_frames();
  }
  return kmeans(points, k, seed, max_iters).codebook;
}

int nearest_centroid(const Eigen::Ref<const Eigen::RowVectorXd>& frame, const Codebook& codebook) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < codebook.centroids.rows(); ++c) {
    const double d = squared_distance(frame, codebook.centroids.row(c));
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

std::vector<int> quantize(const FeatureStream& stream, const Codebook& codebook) {
  if (stream.dim() != codebook.dim()) {
    throw InvalidInput("stream dim " + std::to_string(stream.dim()) + " does not match codebook dim " +
                       std::to_string(codebook.dim()));
  }
  if (codebook.size() < 1) throw InvalidInput("empty codebook");
  std::vector<int> ids(static_cast<std::size_t>(stream.n_frames()));
  for (Eigen::Index i = 0; i < stream.n_frames(); ++i) {
    ids[static_cast<std::size_t>(i)] = nearest_centroid(stream.frames.row(i), codebook);
  }
  return ids;
}

AlignedUnits align(std::span<const int> ctx_units, std::span<const int> phon_units, double ctx_interval_ms,
                   double phon_interval_ms) {
  if (ctx_units.empty() || phon_units.empty()) throw InvalidInput("cannot align an empty unit sequence");
  if (!(ctx_interval_ms > 0.0) || !(phon_interval_ms > 0.0)) throw InvalidInput("frame intervals must be positive");
  const double ratio = ctx_interval_ms / phon_interval_ms;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-6 * ratio) {
    throw InvalidInput("contextual interval " + std::to_string(ctx_interval_ms) +
                       " ms is not an integer multiple of phonetic interval " + std::to_string(phon_interval_ms) +
                       " ms");
  }
  const int r = static_cast<int>(rounded);
  const std::size_t target = static_cast<std::size_t>(r) * ctx_units.size();
  const std::size_t have = phon_units.size();
  const std::size_t diff = have > target ? have - target : target - have;
  if (diff >= static_cast<std::size_t>(r)) {
    throw InvalidInput("stream lengths disagree: " + std::to_string(ctx_units.size()) + " contextual units need " +
                       std::to_string(target) + " phonetic units, got " + std::to_string(have));
  }
  AlignedUnits out;
  out.ratio = r;
  out.contextual.assign(ctx_units.begin(), ctx_units.end());
  out.phonetic.assign(phon_units.begin(), phon_units.end());
  out.phonetic.resize(target, phon_units.back());
  return out;
}

namespace {

UnitSequence merge_groups(const std::vector<int>& ctx, const std::vector<std::vector<int>>& groups) {
  UnitSequence out;
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    if (out.ctx.empty() || out.ctx.back() != ctx[i]) {
      out.ctx.push_back(ctx[i]);
      out.phon.emplace_back();
    }
    auto& g = out.phon.back();
    for (int id : groups[i]) {
      if (g.empty() || g.back() != id) g.push_back(id);
    }
  }
  return out;
}

}  // namespace

UnitSequence merge(const AlignedUnits& aligned) {
  if (aligned.ratio < 1) throw InvalidInput("alignment ratio must be positive");
  const auto r = static_cast<std::size_t>(aligned.ratio);
  if (aligned.phonetic.size() != r * aligned.contextual.size()) {
    throw InvalidInput("aligned units are not length normalised");
  }
  std::vector<std::vector<int>> groups(aligned.contextual.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    groups[i].assign(aligned.phonetic.begin() + static_cast<std::ptrdiff_t>(i * r),
                     aligned.phonetic.begin() + static_cast<std::ptrdiff_t>((i + 1) * r));
  }
  return merge_groups(aligned.contextual, groups);
}

UnitSequence merge(const UnitSequence& seq) {
  if (seq.ctx.size() != seq.phon.size()) throw InvalidInput("contextual/phonetic group counts differ");
  return merge_groups(seq.ctx, seq.phon);
}

UnitSequence finalize_sequence(const UnitSequence& merged, const UnitVocab& vocab) {
  if (merged.ctx.size() != merged.phon.size()) throw InvalidInput("contextual/phonetic group counts differ");
  for (int id : merged.ctx) {
    if (id < 0 || id >= vocab.ctx_codebook) throw InvalidInput("contextual id " + std::to_string(id) + " is not a codebook unit");
  }
  for (const auto& g : merged.phon) {
    if (g.empty()) throw InvalidInput("empty phonetic group");
    for (int id : g) {
      if (id < 0 || id >= vocab.phon_codebook) throw InvalidInput("phonetic id " + std::to_string(id) + " is not a codebook unit");
    }
  }
  UnitSequence out;
  out.ctx.reserve(merged.ctx.size() + 2);
  out.ctx.push_back(vocab.cls());
  out.ctx.insert(out.ctx.end(), merged.ctx.begin(), merged.ctx.end());
  out.ctx.push_back(vocab.sep());
  out.phon.reserve(merged.phon.size() + 2);
  out.phon.push_back({vocab.pad_phon()});
  out.phon.insert(out.phon.end(), merged.phon.begin(), merged.phon.end());
  out.phon.push_back({vocab.pad_phon()});
  return out;
}

std::string check_sequence(const UnitSequence& seq, const UnitVocab& vocab) {
  if (seq.ctx.size() != seq.phon.size()) return "contextual/phonetic group counts differ";
  if (seq.ctx.size() < 2) return "sequence shorter than [CLS, SEP]";
  if (seq.ctx.front() != vocab.cls()) return "first contextual id is not CLS";
  if (seq.ctx.back() != vocab.sep()) return "last contextual id is not SEP";
  const std::vector<int> pad{vocab.pad_phon()};
  if (seq.phon.front() != pad || seq.phon.back() != pad) return "CLS/SEP phonetic group is not [PAD]";
  for (std::size_t i = 0; i < seq.ctx.size(); ++i) {
    const int id = seq.ctx[i];
    if (id < 0 || id >= vocab.ctx_vocab_size()) return "contextual id out of vocabulary";
    const auto& g = seq.phon[i];
    if (g.empty()) return "empty phonetic group";
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (g[j] < 0 || g[j] >= vocab.phon_vocab_size()) return "phonetic id out of vocabulary";
      if (j > 0 && g[j] == g[j - 1]) return "adjacent equal phonetic ids inside a group";
    }
    if (i > 0 && id == seq.ctx[i - 1] && !vocab.is_ctx_special(id)) return "adjacent equal contextual ids";
  }
  return {};
}

UnitSequence unitize(const FeatureStream& ctx, const FeatureStream& phon, const Codebook& ctx_codebook,
                     const Codebook& phon_codebook) {
  ctx.validate();
  phon.validate();
  const UnitVocab vocab{ctx_codebook.size(), phon_codebook.size()};
  const auto ctx_ids = quantize(ctx, ctx_codebook);
  const auto phon_ids = quantize(phon, phon_codebook);
  const auto aligned = align(ctx_ids, phon_ids, ctx.frame_interval_ms, phon.frame_interval_ms);
  return finalize_sequence(merge(aligned), vocab);
}

}  // namespace dcslm
