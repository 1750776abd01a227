#include "dcslm/evaluation.hpp"

#include "dcslm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace dcslm {

Pooling parse_pooling(std::string_view text) {
  if (text == "mean") return Pooling::mean;
  if (text == "max") return Pooling::max;
  if (text == "min") return Pooling::min;
  throw InvalidInput("unknown pooling '" + std::string(text) + "'");
}

Distance parse_distance(std::string_view text) {
  if (text == "euclidean") return Distance::euclidean;
  if (text == "cosine") return Distance::cosine;
  throw InvalidInput("unknown distance '" + std::string(text) + "'");
}

Channel parse_channel(std::string_view text) {
  if (text == "contextual" || text == "ctx") return Channel::contextual;
  if (text == "phonetic" || text == "phon") return Channel::phonetic;
  if (text == "concat") return Channel::concat;
  throw InvalidInput("unknown channel '" + std::string(text) + "'");
}

Eigen::RowVectorXd pool(const Matrix& hidden, Pooling pooling, bool exclude_specials) {
  const Eigen::Index skip = exclude_specials ? 1 : 0;
  const Eigen::Index rows = hidden.rows() - 2 * skip;
  if (rows < 1) throw InvalidInput("nothing to pool once CLS/SEP are excluded");
  const auto block = hidden.middleRows(skip, rows);
  switch (pooling) {
    case Pooling::mean:
      return block.colwise().mean();
    case Pooling::max:
      return block.colwise().maxCoeff();
    case Pooling::min:
      return block.colwise().minCoeff();
  }
  return {};
}

double vector_distance(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b, Distance distance) {
  if (a.size() != b.size()) throw InvalidInput("pooled vectors differ in size");
  if (distance == Distance::euclidean) return (a - b).norm();
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw InvalidInput("cosine distance of a zero vector");
  return 1.0 - a.dot(b) / (na * nb);
}

Matrix channel_states(const HiddenStates& states, int layer, Channel channel) {
  if (layer < 0 || layer >= static_cast<int>(states.ctx.size())) {
    throw InvalidInput("layer " + std::to_string(layer) + " is not available");
  }
  const auto l = static_cast<std::size_t>(layer);
  if (channel == Channel::contextual) return states.ctx[l];
  if (states.phon.empty()) throw InvalidInput("model has no phonetic channel");
  if (channel == Channel::phonetic) return states.phon[l];
  Matrix both(states.ctx[l].rows(), states.ctx[l].cols() + states.phon[l].cols());
  both << states.ctx[l], states.phon[l];
  return both;
}

double semantic_distance(const HiddenStates& x, const HiddenStates& y, int layer, const ProbeSpec& probe) {
  const auto px = pool(channel_states(x, layer, probe.channel), probe.pooling, probe.exclude_specials);
  const auto py = pool(channel_states(y, layer, probe.channel), probe.pooling, probe.exclude_specials);
  return vector_distance(px, py, probe.distance);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("spearman: inputs differ in length");
  if (a.size() < 2) throw InvalidInput("spearman: need at least two observations");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw InvalidInput("spearman: non-finite input");
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  // Sum in a canonical order so the result does not depend on input order.
  std::vector<std::pair<double, double>> rr(ra.size());
  for (std::size_t i = 0; i < ra.size(); ++i) rr[i] = {ra[i], rb[i]};
  std::sort(rr.begin(), rr.end());
  const double n = static_cast<double>(rr.size());
  const double mean = (n + 1.0) / 2.0;  // average ranks always sum to n(n+1)/2
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (const auto& [x, y] : rr) {
    sab += (x - mean) * (y - mean);
    saa += (x - mean) * (x - mean);
    sbb += (y - mean) * (y - mean);
  }
  if (saa == 0.0 || sbb == 0.0) throw InvalidInput("spearman: correlation undefined for a constant input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double ssimi_from_distances(std::span<const double> distances, std::span<const double> human) {
  std::vector<double> similarity(distances.size());
  std::transform(distances.begin(), distances.end(), similarity.begin(), [](double d) { return -d; });
  return 100.0 * spearman(similarity, human);
}

SsimiReport ssimi_score(DualChannelModel& model, std::span<const SimilarityPair> pairs, const ProbeSpec& probe) {
  if (pairs.size() < 2) throw InvalidInput("sSIMI needs at least two pairs");
  const int n_layers = model.config().n_layers;
  if (probe.layer && (*probe.layer < 0 || *probe.layer > n_layers)) {
    throw InvalidInput("probe layer " + std::to_string(*probe.layer) + " outside 0.." + std::to_string(n_layers));
  }
  std::vector<HiddenStates> states_a, states_b;
  std::vector<double> human;
  for (const auto& p : pairs) {
    states_a.push_back(encode(model, p.a));
    states_b.push_back(encode(model, p.b));
    human.push_back(p.human_score);
  }
  SsimiReport report;
  const int first = probe.layer.value_or(0);
  const int last = probe.layer.value_or(n_layers);
  report.layer_scores.assign(static_cast<std::size_t>(n_layers) + 1, std::nan(""));
  std::vector<double> d(pairs.size());
  bool have_best = false;
  for (int layer = first; layer <= last; ++layer) {
    for (std::size_t i = 0; i < pairs.size(); ++i) d[i] = semantic_distance(states_a[i], states_b[i], layer, probe);
    const double score = ssimi_from_distances(d, human);
    report.layer_scores[static_cast<std::size_t>(layer)] = score;
    if (!have_best || score > report.score) {
      report.score = score;
      report.best_layer = layer;
      have_best = true;
    }
  }
  return report;
}

SsimiReport ssimi_dev_test(DualChannelModel& model, std::span<const SimilarityPair> dev_pairs,
                           std::span<const SimilarityPair> test_pairs, const ProbeSpec& probe) {
  ProbeSpec sweep = probe;
  sweep.layer.reset();
  const SsimiReport dev = ssimi_score(model, dev_pairs, sweep);
  SsimiReport test = ssimi_score(model, test_pairs, sweep);
  test.best_layer = dev.best_layer;
  test.score = test.layer_scores[static_cast<std::size_t>(dev.best_layer)];
  return test;
}

IntentReport intent_accuracy(std::span<const std::string> predicted, std::span<const LabeledSequence> data,
                             std::span<const std::string> known_labels, const WarningSink& warn) {
  if (predicted.size() != data.size()) throw InvalidInput("one prediction per example required");
  if (data.empty()) throw InvalidInput("evaluation set is empty");
  const std::set<std::string, std::less<>> known(known_labels.begin(), known_labels.end());
  IntentReport report;
  report.total = data.size();
  for (std::size_t i = 0; i < data.size(); ++i) {
    IntentLogEntry entry{data[i].id, data[i].label, predicted[i], false};
    if (!known.contains(data[i].label)) {
      ++report.unseen_labels;
      if (warn) warn("label '" + data[i].label + "' of '" + data[i].id + "' was not seen in training; counted as wrong");
    } else {
      entry.correct = predicted[i] == data[i].label;
    }
    report.correct += entry.correct ? 1 : 0;
    report.log.push_back(std::move(entry));
  }
  report.accuracy = static_cast<double>(report.correct) / static_cast<double>(report.total);
  return report;
}

IntentReport evaluate_intent(DualChannelModel& model, std::span<const std::string> labels,
                             std::span<const LabeledSequence> data, const WarningSink& warn) {
  const std::vector<int> idx = predict_intents(model, data);
  std::vector<std::string> predicted;
  predicted.reserve(idx.size());
  for (int i : idx) {
    if (i < 0 || i >= static_cast<int>(labels.size())) throw InvalidInput("classifier emitted an unknown class index");
    predicted.push_back(labels[static_cast<std::size_t>(i)]);
  }
  return intent_accuracy(predicted, data, labels, warn);
}

}  // namespace dcslm
