#pragma once

// Speech-to-unit processing: k-means codebooks, nearest-centroid
// quantisation, time alignment of a coarse (contextual) and a fine
// (phonetic) unit stream, repetition merging and special-token decoration.

#include "dcslm/autograd.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dcslm {

// Frame-level continuous representations, one row per frame.
struct FeatureStream {
  Matrix frames;
  double frame_interval_ms = 0.0;
  std::string source_tag;

  Eigen::Index n_frames() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
  // Throws InvalidInput when empty, non-finite or with a non-positive interval.
  void validate() const;
};

struct Codebook {
  Matrix centroids;  // K x dim

  int size() const { return static_cast<int>(centroids.rows()); }
  Eigen::Index dim() const { return centroids.cols(); }
};

inline constexpr int kNumSpecials = 5;

// Reserved ids sit directly above each channel's codebook range:
// K = CLS, K+1 = SEP, K+2 = MASK, K+3 = PAD_ctx, K+4 = PAD_phon.
struct UnitVocab {
  int ctx_codebook = 0;
  int phon_codebook = 0;

  int cls() const { return ctx_codebook; }
  int sep() const { return ctx_codebook + 1; }
  int mask() const { return ctx_codebook + 2; }
  int pad_ctx() const { return ctx_codebook + 3; }
  int pad_phon() const { return phon_codebook + 4; }
  int ctx_vocab_size() const { return ctx_codebook + kNumSpecials; }
  int phon_vocab_size() const { return phon_codebook + kNumSpecials; }
  bool is_ctx_special(int id) const { return id >= ctx_codebook; }

  bool operator==(const UnitVocab&) const = default;
};

struct AlignedUnits {
  std::vector<int> contextual;
  std::vector<int> phonetic;  // ratio * contextual.size() entries
  int ratio = 1;
};

// Merged contextual units, each owning the phonetic ids aligned with it.
struct UnitSequence {
  std::vector<int> ctx;
  std::vector<std::vector<int>> phon;

  std::size_t size() const { return ctx.size(); }
  std::size_t phonetic_size() const;
  bool operator==(const UnitSequence&) const = default;
};

struct KMeansResult {
  Codebook codebook;
  std::vector<int> assignments;
  std::vector<double> inertia;  // after each Lloyd iteration
  int iterations = 0;
};

// Lloyd k-means with k-means++ seeding over the rows of points. Stops when
// assignments are stable or after max_iters iterations. Deterministic in seed.
KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iters = 100);

Codebook train_codebook(std::span<const FeatureStream> features, int k, std::uint64_t seed,
                        int max_iters = 100);

// Nearest centroid per frame (squared Euclidean), ties to the lowest index.
std::vector<int> quantize(const FeatureStream& stream, const Codebook& codebook);
int nearest_centroid(const Eigen::Ref<const Eigen::RowVectorXd>& frame, const Codebook& codebook);

// Matches ratio = ctx_interval / phon_interval phonetic units to every
// contextual unit. The phonetic sequence is padded with its last id, or
// truncated, when it is off by fewer than ratio units.
AlignedUnits align(std::span<const int> ctx_units, std::span<const int> phon_units, double ctx_interval_ms,
                   double phon_interval_ms);

// Collapses runs of equal contextual ids, then runs of equal phonetic ids
// inside each resulting group. Runs never merge across group boundaries.
UnitSequence merge(const AlignedUnits& aligned);
UnitSequence merge(const UnitSequence& seq);

// Wraps with CLS/SEP; both get the single phonetic group [PAD_phon].
UnitSequence finalize_sequence(const UnitSequence& merged, const UnitVocab& vocab);

// Empty string when seq satisfies every finalized-sequence invariant,
// otherwise a description of the first violation.
std::string check_sequence(const UnitSequence& seq, const UnitVocab& vocab);

// quantize -> align -> merge -> finalize.
UnitSequence unitize(const FeatureStream& ctx, const FeatureStream& phon, const Codebook& ctx_codebook,
                     const Codebook& phon_codebook);

}  // namespace dcslm
