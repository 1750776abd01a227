#pragma once

// Semantic probing and intent accuracy.
//
// The similarity metric pools one layer's hidden states over time for both
// items of a word pair, takes a distance between the pooled vectors and
// reports 100 x Spearman(-distance, human similarity).

#include "dcslm/model.hpp"
#include "dcslm/training.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dcslm {

enum class Pooling { mean, max, min };
enum class Distance { euclidean, cosine };
enum class Channel { contextual, phonetic, concat };

Pooling parse_pooling(std::string_view text);
Distance parse_distance(std::string_view text);
Channel parse_channel(std::string_view text);

struct ProbeSpec {
  std::optional<int> layer;  // nullopt sweeps every layer
  Pooling pooling = Pooling::mean;
  Distance distance = Distance::euclidean;
  Channel channel = Channel::contextual;
  bool exclude_specials = true;  // drop the CLS and SEP rows before pooling
};

Eigen::RowVectorXd pool(const Matrix& hidden, Pooling pooling, bool exclude_specials);
double vector_distance(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b, Distance distance);
Matrix channel_states(const HiddenStates& states, int layer, Channel channel);

double semantic_distance(const HiddenStates& x, const HiddenStates& y, int layer, const ProbeSpec& probe);

// Tie-aware (average rank) ranks, 1-based.
std::vector<double> average_ranks(std::span<const double> values);
// Pearson correlation of the average ranks. Throws InvalidInput for fewer
// than two values, mismatched lengths or a constant input.
double spearman(std::span<const double> a, std::span<const double> b);

// 100 * spearman(-distance, human).
double ssimi_from_distances(std::span<const double> distances, std::span<const double> human);

struct SimilarityPair {
  std::string id_a, id_b;
  UnitSequence a, b;
  double human_score = 0.0;
};

struct SsimiReport {
  std::vector<double> layer_scores;  // index = layer, 0..n_layers
  int best_layer = 0;
  double score = 0.0;  // at best_layer, or the requested layer
};

// With probe.layer set only that layer is scored; otherwise all layers are
// scored and the best one is reported.
SsimiReport ssimi_score(DualChannelModel& model, std::span<const SimilarityPair> pairs, const ProbeSpec& probe);

// Picks the layer on dev_pairs and reports test_pairs at that layer.
SsimiReport ssimi_dev_test(DualChannelModel& model, std::span<const SimilarityPair> dev_pairs,
                           std::span<const SimilarityPair> test_pairs, const ProbeSpec& probe);

struct IntentLogEntry {
  std::string id;
  std::string gold;
  std::string predicted;
  bool correct = false;
};

struct IntentReport {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t unseen_labels = 0;  // gold labels the classifier cannot emit
  std::vector<IntentLogEntry> log;
};

using WarningSink = std::function<void(const std::string&)>;

// Scores predicted labels against gold labels. A gold label missing from
// known_labels counts as wrong and is reported through warn.
IntentReport intent_accuracy(std::span<const std::string> predicted, std::span<const LabeledSequence> data,
                             std::span<const std::string> known_labels, const WarningSink& warn = {});

IntentReport evaluate_intent(DualChannelModel& model, std::span<const std::string> labels,
                             std::span<const LabeledSequence> data, const WarningSink& warn = {});

}  // namespace dcslm
