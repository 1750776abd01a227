#include "dcslm/errors.hpp"
#include "dcslm/evaluation.hpp"
#include "dcslm/synthcorpus.hpp"

#include "doctest.h"

#include <cmath>
#include <map>
#include <set>

using namespace dcslm;

namespace {

ToyLanguageSpec noiseless() {
  ToyLanguageSpec s;
  s.noise_sigma = 0.0;
  s.speaker_sigma = 0.0;
  s.seed = 3;
  return s;
}

Matrix as_float(const Matrix& m) { return m.cast<float>().cast<double>(); }

// Codebooks whose centroids are the generating centroids.
Codebook oracle_codebook(const Matrix& centroids) {
  Codebook cb;
  cb.centroids = as_float(centroids);
  return cb;
}

}  // namespace

TEST_CASE("spec validation") {
  ToyLanguageSpec s;
  CHECK(s.ratio() == 2);
  CHECK_NOTHROW(s.validate());
  s.ctx_interval_ms = 25.0;
  CHECK_THROWS_AS(s.validate(), InvalidInput);
  s = ToyLanguageSpec{};
  s.frames_per_phone = 1;
  s.min_phones_per_word = 1;  // a one-frame word could fall between contextual frames
  CHECK_THROWS_AS(s.validate(), InvalidInput);
  s = ToyLanguageSpec{};
  s.n_phones = 2;
  s.max_phones_per_word = 2;  // only two strings without adjacent repeats
  CHECK_THROWS_AS(s.validate(), InvalidInput);
}

TEST_CASE("lexicon structure") {
  for (int wps : {1, 3}) {
    ToyLanguageSpec s;
    s.words_per_phone_string = wps;
    const Lexicon lex = build_lexicon(s);
    REQUIRE(lex.n_words() == s.n_words);
    for (int a = 0; a < s.n_words; ++a) {
      const auto& pa = lex.phone_strings[static_cast<std::size_t>(a)];
      CHECK(static_cast<int>(pa.size()) >= s.min_phones_per_word);
      CHECK(static_cast<int>(pa.size()) <= s.max_phones_per_word);
      for (std::size_t i = 1; i < pa.size(); ++i) CHECK(pa[i] != pa[i - 1]);
      CHECK(lex.cluster[static_cast<std::size_t>(a)] == a % s.n_semantic_clusters);
      CHECK(lex.latents.row(a).norm() == doctest::Approx(1.0));
      for (int b = a + 1; b < s.n_words; ++b) {
        CHECK((pa == lex.phone_strings[static_cast<std::size_t>(b)]) == (a / wps == b / wps));
      }
    }
    CHECK(lex.word_centroids.rows() == s.n_words);
    CHECK(lex.word_centroids.cols() == s.ctx_dim);
    CHECK(lex.phone_centroids.rows() == s.n_phones);
  }
  // Same-cluster words are closer in meaning than cross-cluster words.
  const Lexicon lex = build_lexicon(ToyLanguageSpec{});
  double within = 0, across = 0;
  int nw = 0, na = 0;
  for (int a = 0; a < lex.n_words(); ++a) {
    for (int b = a + 1; b < lex.n_words(); ++b) {
      const double sim = latent_similarity(lex, a, b);
      CHECK(sim == doctest::Approx(latent_similarity(lex, b, a)));
      if (lex.cluster[a] == lex.cluster[b]) {
        within += sim;
        ++nw;
      } else {
        across += sim;
        ++na;
      }
    }
    CHECK(latent_similarity(lex, a, a) == doctest::Approx(1.0));
  }
  CHECK(within / nw > across / na + 0.3);
}

TEST_CASE("noiseless rendering reproduces the generating centroids") {
  const ToyLanguageSpec s = noiseless();
  const Lexicon lex = build_lexicon(s);
  const std::vector<int> words{4, 17, 4, 9, 30};
  const SyntheticUtterance u = render_utterance(s, lex, words, 99);
  std::vector<int> phones;
  for (int w : words) {
    for (int p : lex.phone_strings[static_cast<std::size_t>(w)]) {
      for (int f = 0; f < s.frames_per_phone; ++f) phones.push_back(p);
    }
  }
  CHECK(u.phone_frames == phones);
  REQUIRE(u.phon.frames.rows() == static_cast<Eigen::Index>(phones.size()));
  CHECK(u.ctx.frames.rows() == static_cast<Eigen::Index>((phones.size() + 1) / 2));
  CHECK(u.ctx.frame_interval_ms == 20.0);
  CHECK(u.phon.frame_interval_ms == 10.0);
  for (std::size_t t = 0; t < phones.size(); ++t) {
    CHECK(u.phon.frames.row(static_cast<Eigen::Index>(t)) == as_float(lex.phone_centroids).row(phones[t]));
  }
  for (Eigen::Index j = 0; j < u.ctx.frames.rows(); ++j) {
    CHECK(u.ctx.frames.row(j) == as_float(lex.word_centroids).row(u.ctx_frame_words[static_cast<std::size_t>(j)]));
  }

  // Quantising against the generating centroids gives one contextual unit per word.
  const UnitVocab vocab{s.n_words, s.n_phones};
  const UnitSequence seq = unitize(u.ctx, u.phon, oracle_codebook(lex.word_centroids),
                                   oracle_codebook(lex.phone_centroids));
  CHECK(std::vector<int>(seq.ctx.begin() + 1, seq.ctx.end() - 1) == words);
  CHECK(check_sequence(seq, vocab).empty());
}

TEST_CASE("noisy rendering stays near the centroids and is seeded") {
  ToyLanguageSpec s;
  s.noise_sigma = 0.1;
  const Lexicon lex = build_lexicon(s);
  const std::vector<int> words{1, 2, 3, 4, 5, 6};
  const SyntheticUtterance a = render_utterance(s, lex, words, 5), b = render_utterance(s, lex, words, 5),
                           c = render_utterance(s, lex, words, 6);
  CHECK(a.phon.frames == b.phon.frames);
  CHECK(a.ctx.frames == b.ctx.frames);
  CHECK(a.phon.frames != c.phon.frames);
  double sq = 0.0;
  for (Eigen::Index t = 0; t < a.phon.frames.rows(); ++t) {
    sq += (a.phon.frames.row(t) - lex.phone_centroids.row(a.phone_frames[static_cast<std::size_t>(t)])).squaredNorm();
  }
  const double sigma_hat = std::sqrt(sq / static_cast<double>(a.phon.frames.size()));
  CHECK(sigma_hat == doctest::Approx(0.1).epsilon(0.25));

  SpeakerBias bias{Eigen::RowVectorXd::Constant(s.ctx_dim, 0.5), Eigen::RowVectorXd::Constant(s.phon_dim, -0.25)};
  const SyntheticUtterance biased = render_utterance(noiseless(), build_lexicon(noiseless()), words, 5, &bias);
  const SyntheticUtterance plain = render_utterance(noiseless(), build_lexicon(noiseless()), words, 5);
  CHECK((biased.ctx.frames - plain.ctx.frames).cwiseAbs().maxCoeff() == doctest::Approx(0.5).epsilon(1e-6));
  CHECK((biased.phon.frames - plain.phon.frames).cwiseAbs().maxCoeff() == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("word sequences follow topics") {
  const ToyLanguageSpec s;
  const Lexicon lex = build_lexicon(s);
  const auto seqs = sample_word_sequences(s, lex, 2000, 0);
  CHECK(seqs == sample_word_sequences(s, lex, 2000, 0));
  CHECK(seqs != sample_word_sequences(s, lex, 2000, 1));
  double co = 0.0, base = 0.0;
  std::size_t nco = 0, nbase = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& q = seqs[i];
    CHECK(static_cast<int>(q.size()) >= s.min_words_per_utterance);
    CHECK(static_cast<int>(q.size()) <= s.max_words_per_utterance);
    for (std::size_t k = 1; k < q.size(); ++k) CHECK(q[k] != q[k - 1]);
    for (std::size_t k = 1; k < q.size(); ++k) {
      co += latent_similarity(lex, q[0], q[k]);
      ++nco;
      // Pair with the first word of another utterance as a baseline.
      base += latent_similarity(lex, q[k], seqs[(i + 1) % seqs.size()][0]);
      ++nbase;
    }
  }
  CHECK(co / static_cast<double>(nco) > base / static_cast<double>(nbase) + 0.2);
}

TEST_CASE("streams are deterministic and well-formed") {
  ToyLanguageSpec s;
  s.seed = 11;
  const auto a = generate_streams(s, 20, 0), b = generate_streams(s, 20, 0), c = generate_streams(s, 20, 1);
  REQUIRE(a.size() == 20);
  CHECK(a[7].id == "utt0-00007");
  CHECK(c[7].id == "utt1-00007");
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].ctx.frames == b[i].ctx.frames);
    CHECK(a[i].words == b[i].words);
    CHECK(a[i].ctx.frames.cols() == s.ctx_dim);
    CHECK(a[i].phon.frames.cols() == s.phon_dim);
    CHECK(a[i].ctx.frames.rows() == (a[i].phon.frames.rows() + 1) / 2);
  }
  CHECK(a[0].words != c[0].words);
  s.seed = 12;
  CHECK(generate_streams(s, 1, 0)[0].ctx.frames != a[0].ctx.frames);
}

TEST_CASE("similarity pairs") {
  const ToyLanguageSpec s;
  const Lexicon lex = build_lexicon(s);
  const auto pairs = generate_similarity_pairs(s, 200, 2);
  REQUIRE(pairs.size() == 200);
  std::set<std::pair<int, int>> seen;
  int within = 0;
  std::vector<double> human, oracle_distance;
  for (const auto& p : pairs) {
    CHECK(p.word_a != p.word_b);
    CHECK(seen.insert({std::min(p.word_a, p.word_b), std::max(p.word_a, p.word_b)}).second);
    CHECK(p.human_score == latent_similarity(lex, p.word_a, p.word_b));
    CHECK(p.a.words == std::vector<int>{p.word_a});
    CHECK(p.b.words == std::vector<int>{p.word_b});
    within += lex.cluster[p.word_a] == lex.cluster[p.word_b];
    human.push_back(p.human_score);
    oracle_distance.push_back(1.0 - latent_similarity(lex, p.word_a, p.word_b));
  }
  CHECK(within >= 100);
  CHECK(pairs[3].a.id == "pair2-00003a");
  CHECK(ssimi_from_distances(oracle_distance, human) == doctest::Approx(100.0));

  const auto again = generate_similarity_pairs(s, 200, 2);
  CHECK(again[50].a.ctx.frames == pairs[50].a.ctx.frames);
  const auto other = generate_similarity_pairs(s, 200, 3);
  bool differs = false;
  for (std::size_t i = 0; i < pairs.size(); ++i) differs = differs || other[i].word_a != pairs[i].word_a;
  CHECK(differs);
  CHECK_THROWS_AS(generate_similarity_pairs(s, s.n_words * s.n_words, 0), InvalidInput);
}

TEST_CASE("intent corpus splits") {
  ToyLanguageSpec s;
  s.seed = 5;
  IntentCorpusSpec is;
  const IntentCorpus corpus = generate_intent_corpus(s, is);
  const Lexicon lex = build_lexicon(s);
  REQUIRE(corpus.labels.size() == 4);
  CHECK(corpus.labels[2] == "intent_2");
  CHECK(corpus.templates.size() == 12);

  std::map<int, std::string> keyword_label;
  for (std::size_t k = 0; k < corpus.keywords.size(); ++k) {
    CHECK(corpus.keywords[k].size() == 3);
    for (int w : corpus.keywords[k]) {
      CHECK(lex.cluster[w] == lex.cluster[corpus.keywords[k][0]]);
      CHECK(keyword_label.emplace(w, corpus.labels[k]).second);
    }
  }

  // (carrier words, keyword) combination of an utterance, recovered from its words.
  using Combination = std::pair<std::vector<int>, int>;
  std::map<IntentSplit, std::set<Combination>> combos;
  std::map<IntentSplit, std::size_t> counts;
  std::set<std::string> ids;
  const int first_unseen = s.n_speakers - s.n_unseen_speakers;
  for (const auto& u : corpus.utterances) {
    CHECK(ids.insert(u.utt.id).second);
    ++counts[u.split];
    // The keyword look-up is a perfect classifier: exactly one keyword per utterance.
    std::vector<int> carriers;
    int keyword = -1, n_keywords = 0;
    for (int w : u.utt.words) {
      if (keyword_label.contains(w)) {
        keyword = w;
        ++n_keywords;
      } else {
        carriers.push_back(w);
      }
    }
    REQUIRE(n_keywords == 1);
    CHECK(keyword_label.at(keyword) == u.label);
    combos[u.split].insert({carriers, keyword});
    if (u.split == IntentSplit::unseen_speaker) {
      CHECK(u.utt.speaker >= first_unseen);
    } else {
      CHECK(u.utt.speaker < first_unseen);
    }
  }
  CHECK(counts[IntentSplit::train] == 4u * 3u * 9u * 4u);
  CHECK(counts[IntentSplit::original] == 100);
  CHECK(counts[IntentSplit::unseen_speaker] == 100);
  CHECK(counts[IntentSplit::unseen_utterance] == 100);
  const auto& train = combos[IntentSplit::train];
  for (const auto& c : combos[IntentSplit::original]) CHECK(train.contains(c));
  for (const auto& c : combos[IntentSplit::unseen_speaker]) CHECK(train.contains(c));
  for (const auto& c : combos[IntentSplit::unseen_utterance]) CHECK_FALSE(train.contains(c));

  CHECK(parse_intent_split("unseen_utterance") == IntentSplit::unseen_utterance);
  CHECK(to_string(IntentSplit::unseen_speaker) == "unseen_speaker");
  CHECK_THROWS_AS(parse_intent_split("dev"), InvalidInput);
}

TEST_CASE("a single intent and no held-out combinations are allowed") {
  ToyLanguageSpec s;
  IntentCorpusSpec is;
  is.n_intents = 1;
  is.heldout_combination_fraction = 0.0;
  is.eval_per_split = 5;
  const IntentCorpus corpus = generate_intent_corpus(s, is);
  CHECK(corpus.labels == std::vector<std::string>{"intent_0"});
  for (const auto& u : corpus.utterances) {
    CHECK(u.label == "intent_0");
    CHECK(u.split != IntentSplit::unseen_utterance);
  }
  is.n_intents = 0;
  CHECK_THROWS_AS(generate_intent_corpus(s, is), InvalidInput);
}

TEST_CASE("noiseless intent labels are learnable from unit unigrams") {
  const ToyLanguageSpec s = noiseless();
  const IntentCorpus corpus = generate_intent_corpus(s, IntentCorpusSpec{});
  const Lexicon lex = build_lexicon(s);
  const Codebook ctx_cb = oracle_codebook(lex.word_centroids), phon_cb = oracle_codebook(lex.phone_centroids);
  auto units = [&](const IntentUtterance& u) {
    const UnitSequence seq = unitize(u.utt.ctx, u.utt.phon, ctx_cb, phon_cb);
    return std::set<int>(seq.ctx.begin() + 1, seq.ctx.end() - 1);
  };
  // Units seen with exactly one label in training vote for it.
  std::map<int, std::set<std::string>> seen_with;
  for (const auto& u : corpus.utterances) {
    if (u.split != IntentSplit::train) continue;
    for (int id : units(u)) seen_with[id].insert(u.label);
  }
  std::size_t correct = 0, total = 0;
  for (const auto& u : corpus.utterances) {
    if (u.split == IntentSplit::train) continue;
    std::map<std::string, int> votes;
    for (int id : units(u)) {
      const auto it = seen_with.find(id);
      if (it != seen_with.end() && it->second.size() == 1) ++votes[*it->second.begin()];
    }
    ++total;
    if (votes.size() == 1 && votes.begin()->first == u.label) ++correct;
  }
  CHECK(total == 300);
  CHECK(correct == total);
}

TEST_CASE("holding out whole templates") {
  ToyLanguageSpec s;
  s.seed = 6;
  IntentCorpusSpec is;
  is.hold_out_templates = true;
  const IntentCorpus corpus = generate_intent_corpus(s, is);
  std::set<int> keywords;
  for (const auto& k : corpus.keywords) keywords.insert(k.begin(), k.end());
  auto carriers = [&](const IntentUtterance& u) {
    std::vector<int> out;
    for (int w : u.utt.words) {
      if (!keywords.contains(w)) out.push_back(w);
    }
    return out;
  };
  std::map<IntentSplit, std::set<std::vector<int>>> templates;
  std::size_t n_train = 0;
  for (const auto& u : corpus.utterances) {
    templates[u.split].insert(carriers(u));
    n_train += u.split == IntentSplit::train;
  }
  CHECK(n_train == 4u * 3u * 9u * 4u);
  CHECK(templates[IntentSplit::train].size() == 9);
  for (const auto& t : templates[IntentSplit::unseen_utterance]) CHECK_FALSE(templates[IntentSplit::train].contains(t));
  for (const auto& t : templates[IntentSplit::original]) CHECK(templates[IntentSplit::train].contains(t));
}
