#include "dcslm/synthcorpus.hpp"

#include "dcslm/errors.hpp"
#include "dcslm/seeding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

namespace dcslm {
namespace {

std::string numbered(const std::string& prefix, long long i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05lld", i);
  return prefix + buf;
}

Eigen::RowVectorXd gaussian_row(std::mt19937_64& rng, Eigen::Index n, double sigma) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::RowVectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = sigma * normal(rng);
  return v;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double to_float_precision(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace

int ToyLanguageSpec::ratio() const {
  const double r = ctx_interval_ms / phon_interval_ms;
  return static_cast<int>(std::lround(r));
}

void ToyLanguageSpec::validate() const {
  auto fail = [](const std::string& what) { throw InvalidInput("toy language: " + what); };
  if (n_words < 2) fail("n_words must be at least 2");
  if (min_phones_per_word < 1 || max_phones_per_word < min_phones_per_word) fail("bad phones_per_word range");
  if (n_phones < 2) fail("n_phones must be at least 2");
  if (words_per_phone_string < 1) fail("words_per_phone_string must be positive");
  if (!(ctx_interval_ms > 0.0) || !(phon_interval_ms > 0.0)) fail("frame intervals must be positive");
  const double r = ctx_interval_ms / phon_interval_ms;
  if (r < 1.0 || std::abs(r - std::round(r)) > 1e-9 * r) fail("ctx_interval_ms / phon_interval_ms must be an integer");
  if (frames_per_phone < 1) fail("frames_per_phone must be positive");
  if (frames_per_phone * min_phones_per_word < ratio()) fail("every word must span at least one contextual frame");
  if (ctx_dim < 1 || phon_dim < 1 || semantic_dim < 1) fail("dimensions must be positive");
  if (!(noise_sigma >= 0.0) || !(ctx_noise_scale >= 0.0)) fail("noise must be non-negative");
  if (n_semantic_clusters < 1 || n_semantic_clusters > n_words) fail("n_semantic_clusters must be in 1..n_words");
  if (!(cluster_spread >= 0.0) || !(topic_noise >= 0.0) || !(topic_sharpness >= 0.0)) {
    fail("cluster_spread, topic_noise and topic_sharpness must be non-negative");
  }
  if (min_words_per_utterance < 1 || max_words_per_utterance < min_words_per_utterance) {
    fail("bad words_per_utterance range");
  }
  if (n_speakers < 1 || n_unseen_speakers < 0 || n_unseen_speakers >= n_speakers) {
    fail("need 0 <= n_unseen_speakers < n_speakers");
  }
  if (!(speaker_sigma >= 0.0)) fail("speaker_sigma must be non-negative");

  // Distinct phone strings available with no phone repeated back to back.
  const int needed = (n_words + words_per_phone_string - 1) / words_per_phone_string;
  double available = 0.0;
  for (int len = min_phones_per_word; len <= max_phones_per_word && available < needed; ++len) {
    available += n_phones * std::pow(n_phones - 1, len - 1);
  }
  if (available < needed) fail("too few distinct phone strings for n_words");
}

Lexicon build_lexicon(const ToyLanguageSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(derive_seed(spec.seed, {0x1e71}));
  Lexicon lex;

  const int n_strings = (spec.n_words + spec.words_per_phone_string - 1) / spec.words_per_phone_string;
  std::set<std::vector<int>> seen;
  std::vector<std::vector<int>> strings;
  while (static_cast<int>(strings.size()) < n_strings) {
    std::vector<int> s(static_cast<std::size_t>(uniform_int(rng, spec.min_phones_per_word, spec.max_phones_per_word)));
    for (std::size_t i = 0; i < s.size(); ++i) {
      do {
        s[i] = uniform_int(rng, 0, spec.n_phones - 1);
      } while (i > 0 && s[i] == s[i - 1]);
    }
    if (seen.insert(s).second) strings.push_back(std::move(s));
  }
  // Consecutive words fall in different clusters, so homophones are unrelated in meaning.
  for (int w = 0; w < spec.n_words; ++w) {
    lex.phone_strings.push_back(strings[static_cast<std::size_t>(w / spec.words_per_phone_string)]);
    lex.cluster.push_back(w % spec.n_semantic_clusters);
  }

  Matrix centres(spec.n_semantic_clusters, spec.semantic_dim);
  for (int c = 0; c < spec.n_semantic_clusters; ++c) {
    centres.row(c) = gaussian_row(rng, spec.semantic_dim, 1.0).normalized();
  }
  lex.latents.resize(spec.n_words, spec.semantic_dim);
  const double spread = spec.cluster_spread / std::sqrt(static_cast<double>(spec.semantic_dim));
  for (int w = 0; w < spec.n_words; ++w) {
    Eigen::RowVectorXd v = centres.row(lex.cluster[static_cast<std::size_t>(w)]) +
                           gaussian_row(rng, spec.semantic_dim, spread);
    lex.latents.row(w) = v.normalized();
  }
  lex.word_centroids.resize(spec.n_words, spec.ctx_dim);
  for (int w = 0; w < spec.n_words; ++w) lex.word_centroids.row(w) = gaussian_row(rng, spec.ctx_dim, 1.0);
  lex.phone_centroids.resize(spec.n_phones, spec.phon_dim);
  for (int p = 0; p < spec.n_phones; ++p) lex.phone_centroids.row(p) = gaussian_row(rng, spec.phon_dim, 1.0);
  return lex;
}

SyntheticUtterance render_utterance(const ToyLanguageSpec& spec, const Lexicon& lexicon, std::vector<int> words,
                                    std::uint64_t seed, const SpeakerBias* bias) {
  if (words.empty()) throw InvalidInput("cannot render an empty word sequence");
  std::mt19937_64 rng(seed);
  SyntheticUtterance utt;
  for (int w : words) {
    if (w < 0 || w >= lexicon.n_words()) throw InvalidInput("word id out of range");
    for (int p : lexicon.phone_strings[static_cast<std::size_t>(w)]) {
      for (int f = 0; f < spec.frames_per_phone; ++f) utt.phone_frames.push_back(p);
    }
  }
  const auto n_phon = static_cast<Eigen::Index>(utt.phone_frames.size());
  std::vector<int> frame_word;
  for (int w : words) {
    const auto n = lexicon.phone_strings[static_cast<std::size_t>(w)].size() * static_cast<std::size_t>(spec.frames_per_phone);
    frame_word.insert(frame_word.end(), n, w);
  }

  utt.phon.frames.resize(n_phon, spec.phon_dim);
  for (Eigen::Index i = 0; i < n_phon; ++i) {
    Eigen::RowVectorXd v = lexicon.phone_centroids.row(utt.phone_frames[static_cast<std::size_t>(i)]) +
                           gaussian_row(rng, spec.phon_dim, spec.noise_sigma);
    if (bias) v += bias->phon;
    utt.phon.frames.row(i) = v.unaryExpr(&to_float_precision);
  }

  const int r = spec.ratio();
  const Eigen::Index n_ctx = (n_phon + r - 1) / r;
  utt.ctx.frames.resize(n_ctx, spec.ctx_dim);
  const double ctx_sigma = spec.noise_sigma * spec.ctx_noise_scale;
  for (Eigen::Index j = 0; j < n_ctx; ++j) {
    const Eigen::Index mid = std::min<Eigen::Index>(j * r + r / 2, n_phon - 1);
    const int w = frame_word[static_cast<std::size_t>(mid)];
    utt.ctx_frame_words.push_back(w);
    Eigen::RowVectorXd v = lexicon.word_centroids.row(w) + gaussian_row(rng, spec.ctx_dim, ctx_sigma);
    if (bias) v += bias->ctx;
    utt.ctx.frames.row(j) = v.unaryExpr(&to_float_precision);
  }
  utt.phon.frame_interval_ms = spec.phon_interval_ms;
  utt.ctx.frame_interval_ms = spec.ctx_interval_ms;
  utt.words = std::move(words);
  return utt;
}

std::vector<std::vector<int>> sample_word_sequences(const ToyLanguageSpec& spec, const Lexicon& lexicon, int n,
                                                    std::uint64_t stream) {
  if (n < 0) throw InvalidInput("negative utterance count");
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(n));
  const double topic_sigma = spec.topic_noise / std::sqrt(static_cast<double>(spec.semantic_dim));
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 rng(derive_seed(spec.seed, {0x5e91, stream, static_cast<std::uint64_t>(i)}));
    const int len = uniform_int(rng, spec.min_words_per_utterance, spec.max_words_per_utterance);
    const int anchor = uniform_int(rng, 0, lexicon.n_words() - 1);
    Eigen::RowVectorXd topic = lexicon.latents.row(anchor) + gaussian_row(rng, spec.semantic_dim, topic_sigma);
    topic.normalize();
    std::vector<double> weights(static_cast<std::size_t>(lexicon.n_words()));
    for (int w = 0; w < lexicon.n_words(); ++w) {
      weights[static_cast<std::size_t>(w)] = std::exp(spec.topic_sharpness * lexicon.latents.row(w).dot(topic));
    }
    std::vector<int> words;
    for (int k = 0; k < len; ++k) {
      std::vector<double> wts = weights;
      if (!words.empty()) wts[static_cast<std::size_t>(words.back())] = 0.0;
      words.push_back(std::discrete_distribution<int>(wts.begin(), wts.end())(rng));
    }
    out.push_back(std::move(words));
  }
  return out;
}

std::vector<SyntheticUtterance> generate_streams(const ToyLanguageSpec& spec, int n_utterances, std::uint64_t stream) {
  const Lexicon lex = build_lexicon(spec);
  auto sequences = sample_word_sequences(spec, lex, n_utterances, stream);
  std::vector<SyntheticUtterance> out;
  out.reserve(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    auto utt = render_utterance(spec, lex, std::move(sequences[i]), derive_seed(spec.seed, {0x7a11, stream, i}));
    utt.id = numbered("utt" + std::to_string(stream) + "-", static_cast<long long>(i));
    utt.ctx.source_tag = utt.id;
    utt.phon.source_tag = utt.id;
    out.push_back(std::move(utt));
  }
  return out;
}

double latent_similarity(const Lexicon& lexicon, int word_a, int word_b) {
  const auto a = lexicon.latents.row(word_a);
  const auto b = lexicon.latents.row(word_b);
  return a.dot(b) / (a.norm() * b.norm());
}

std::vector<SyntheticPair> generate_similarity_pairs(const ToyLanguageSpec& spec, int n_pairs, std::uint64_t stream) {
  if (n_pairs < 2) throw InvalidInput("need at least two similarity pairs");
  const Lexicon lex = build_lexicon(spec);
  const long long possible = static_cast<long long>(spec.n_words) * (spec.n_words - 1) / 2;
  if (n_pairs > possible) throw InvalidInput("more pairs requested than distinct word pairs exist");

  std::vector<std::vector<int>> members(static_cast<std::size_t>(spec.n_semantic_clusters));
  for (int w = 0; w < spec.n_words; ++w) members[static_cast<std::size_t>(lex.cluster[static_cast<std::size_t>(w)])].push_back(w);

  std::mt19937_64 rng(derive_seed(spec.seed, {0x9a11, stream}));
  std::set<std::pair<int, int>> used;
  std::vector<SyntheticPair> out;
  int attempts = 0;
  while (static_cast<int>(out.size()) < n_pairs) {
    int a = 0, b = 0;
    const auto& group = members[static_cast<std::size_t>(uniform_int(rng, 0, spec.n_semantic_clusters - 1))];
    if (out.size() % 2 == 0 && group.size() >= 2 && attempts < 50 * n_pairs) {
      a = group[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(group.size()) - 1))];
      b = group[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(group.size()) - 1))];
    } else {
      a = uniform_int(rng, 0, spec.n_words - 1);
      b = uniform_int(rng, 0, spec.n_words - 1);
    }
    ++attempts;
    if (a == b || !used.insert({std::min(a, b), std::max(a, b)}).second) continue;
    const auto i = static_cast<std::uint64_t>(out.size());
    SyntheticPair pair;
    pair.word_a = a;
    pair.word_b = b;
    pair.human_score = latent_similarity(lex, a, b);
    pair.a = render_utterance(spec, lex, {a}, derive_seed(spec.seed, {0x9a12, stream, i, 0}));
    pair.b = render_utterance(spec, lex, {b}, derive_seed(spec.seed, {0x9a12, stream, i, 1}));
    const std::string base = numbered("pair" + std::to_string(stream) + "-", static_cast<long long>(i));
    pair.a.id = base + "a";
    pair.b.id = base + "b";
    pair.a.ctx.source_tag = pair.a.phon.source_tag = pair.a.id;
    pair.b.ctx.source_tag = pair.b.phon.source_tag = pair.b.id;
    out.push_back(std::move(pair));
  }
  return out;
}

std::string to_string(IntentSplit split) {
  switch (split) {
    case IntentSplit::train:
      return "train";
    case IntentSplit::original:
      return "original";
    case IntentSplit::unseen_speaker:
      return "unseen_speaker";
    case IntentSplit::unseen_utterance:
      return "unseen_utterance";
  }
  return "unknown";
}

IntentSplit parse_intent_split(const std::string& text) {
  for (auto s : {IntentSplit::train, IntentSplit::original, IntentSplit::unseen_speaker, IntentSplit::unseen_utterance}) {
    if (to_string(s) == text) return s;
  }
  throw InvalidInput("unknown intent split '" + text + "'");
}

IntentCorpus generate_intent_corpus(const ToyLanguageSpec& spec, const IntentCorpusSpec& is) {
  if (is.n_intents < 1) throw InvalidInput("need at least one intent");
  if (is.keywords_per_intent < 1 || is.n_templates < 1) throw InvalidInput("need keywords and templates");
  if (is.template_min_words < 1 || is.template_max_words < is.template_min_words) {
    throw InvalidInput("bad template length range");
  }
  if (!(is.heldout_combination_fraction >= 0.0 && is.heldout_combination_fraction < 1.0)) {
    throw InvalidInput("heldout_combination_fraction must be in [0, 1)");
  }
  if (is.utterances_per_combination < 1 || is.eval_per_split < 0) throw InvalidInput("bad utterance counts");
  const Lexicon lex = build_lexicon(spec);
  std::mt19937_64 rng(derive_seed(spec.seed, {0x1c71}));

  IntentCorpus corpus;
  // Keywords of an intent: the most central unused members of one semantic cluster.
  std::vector<char> is_keyword(static_cast<std::size_t>(spec.n_words), 0);
  for (int k = 0; k < is.n_intents; ++k) {
    const int c = k % spec.n_semantic_clusters;
    std::vector<std::pair<double, int>> ranked;
    for (int w = 0; w < spec.n_words; ++w) {
      if (lex.cluster[static_cast<std::size_t>(w)] != c || is_keyword[static_cast<std::size_t>(w)]) continue;
      double centrality = 0.0;
      for (int v = 0; v < spec.n_words; ++v) {
        if (lex.cluster[static_cast<std::size_t>(v)] == c) centrality += latent_similarity(lex, w, v);
      }
      ranked.emplace_back(-centrality, w);
    }
    if (static_cast<int>(ranked.size()) < is.keywords_per_intent) throw InvalidInput("too few words per cluster for keywords");
    std::sort(ranked.begin(), ranked.end());
    std::vector<int> kws;
    for (int j = 0; j < is.keywords_per_intent; ++j) {
      kws.push_back(ranked[static_cast<std::size_t>(j)].second);
      is_keyword[static_cast<std::size_t>(kws.back())] = 1;
    }
    corpus.keywords.push_back(std::move(kws));
    corpus.labels.push_back("intent_" + std::to_string(k));
  }
  std::vector<int> carriers;
  for (int w = 0; w < spec.n_words; ++w) {
    if (!is_keyword[static_cast<std::size_t>(w)]) carriers.push_back(w);
  }
  if (carriers.size() < 2) throw InvalidInput("too few carrier words");

  std::set<std::pair<std::vector<int>, int>> seen_templates;
  int guard = 0;
  while (static_cast<int>(corpus.templates.size()) < is.n_templates) {
    if (++guard > 1000 * is.n_templates) throw InvalidInput("cannot draw enough distinct templates");
    std::vector<int> t(static_cast<std::size_t>(uniform_int(rng, is.template_min_words, is.template_max_words)));
    for (std::size_t i = 0; i < t.size(); ++i) {
      do {
        t[i] = carriers[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(carriers.size()) - 1))];
      } while (i > 0 && t[i] == t[i - 1]);
    }
    const int slot = uniform_int(rng, 0, static_cast<int>(t.size()));
    if (!seen_templates.insert({t, slot}).second) continue;
    corpus.templates.push_back(std::move(t));
    corpus.keyword_slot.push_back(slot);
  }

  // A fixed number of templates is held out for the unseen-utterance split,
  // per keyword or, with hold_out_templates, the same ones for every keyword.
  struct Combination {
    int intent, keyword, templ;
  };
  std::vector<Combination> seen, heldout;
  const int n_hold = static_cast<int>(std::lround(is.heldout_combination_fraction * is.n_templates));
  std::vector<int> shared_order(static_cast<std::size_t>(is.n_templates));
  std::iota(shared_order.begin(), shared_order.end(), 0);
  if (is.hold_out_templates) std::shuffle(shared_order.begin(), shared_order.end(), rng);
  for (int k = 0; k < is.n_intents; ++k) {
    for (int kw : corpus.keywords[static_cast<std::size_t>(k)]) {
      std::vector<int> order = shared_order;
      if (!is.hold_out_templates) std::shuffle(order.begin(), order.end(), rng);
      for (int j = 0; j < is.n_templates; ++j) {
        (j < n_hold ? heldout : seen).push_back({k, kw, order[static_cast<std::size_t>(j)]});
      }
    }
  }

  std::vector<SpeakerBias> speakers;
  for (int s = 0; s < spec.n_speakers; ++s) {
    std::mt19937_64 srng(derive_seed(spec.seed, {0x5bea, static_cast<std::uint64_t>(s)}));
    speakers.push_back({gaussian_row(srng, spec.ctx_dim, spec.speaker_sigma), gaussian_row(srng, spec.phon_dim, spec.speaker_sigma)});
  }
  const int n_seen_speakers = spec.n_speakers - spec.n_unseen_speakers;

  auto emit = [&](IntentSplit split, const Combination& c, int speaker, std::uint64_t index) {
    std::vector<int> words = corpus.templates[static_cast<std::size_t>(c.templ)];
    words.insert(words.begin() + corpus.keyword_slot[static_cast<std::size_t>(c.templ)], c.keyword);
    const auto seed = derive_seed(spec.seed, {0x1c72, static_cast<std::uint64_t>(split), index});
    IntentUtterance u;
    u.utt = render_utterance(spec, lex, std::move(words), seed, &speakers[static_cast<std::size_t>(speaker)]);
    u.utt.speaker = speaker;
    u.utt.id = numbered(to_string(split) + "-", static_cast<long long>(index));
    u.utt.ctx.source_tag = u.utt.phon.source_tag = u.utt.id;
    u.label = corpus.labels[static_cast<std::size_t>(c.intent)];
    u.split = split;
    corpus.utterances.push_back(std::move(u));
  };

  std::uint64_t index = 0;
  for (const auto& c : seen) {
    for (int copy = 0; copy < is.utterances_per_combination; ++copy) {
      emit(IntentSplit::train, c, uniform_int(rng, 0, n_seen_speakers - 1), index++);
    }
  }
  auto pick = [&](const std::vector<Combination>& from) {
    return from[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(from.size()) - 1))];
  };
  for (int i = 0; i < is.eval_per_split; ++i) {
    emit(IntentSplit::original, pick(seen), uniform_int(rng, 0, n_seen_speakers - 1), static_cast<std::uint64_t>(i));
  }
  if (spec.n_unseen_speakers > 0) {
    for (int i = 0; i < is.eval_per_split; ++i) {
      emit(IntentSplit::unseen_speaker, pick(seen), uniform_int(rng, n_seen_speakers, spec.n_speakers - 1),
           static_cast<std::uint64_t>(i));
    }
  }
  if (!heldout.empty()) {
    for (int i = 0; i < is.eval_per_split; ++i) {
      emit(IntentSplit::unseen_utterance, pick(heldout), uniform_int(rng, 0, n_seen_speakers - 1),
           static_cast<std::uint64_t>(i));
    }
  }
  return corpus;
}

}  // namespace dcslm
