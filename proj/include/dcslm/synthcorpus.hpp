#pragma once

// Deterministic toy spoken language with two feature resolutions.
//
// Each word owns a phone string, a contextual centroid and a latent meaning
// vector. Latent vectors are grouped into semantic clusters; utterances draw
// a topic and favour words whose meaning is close to it, so co-occurrence
// carries the semantic geometry. Phonetic frames are phone centroids plus
// noise; contextual frames are ratio times coarser and carry the centroid
// of the word under the frame's midpoint plus noise.

#include "dcslm/unitize.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dcslm {

struct ToyLanguageSpec {
  int n_words = 50;
  int min_phones_per_word = 2;
  int max_phones_per_word = 4;
  int n_phones = 12;
  int words_per_phone_string = 1;  // > 1 makes homophones
  double ctx_interval_ms = 20.0;
  double phon_interval_ms = 10.0;
  int frames_per_phone = 2;
  int ctx_dim = 16;
  int phon_dim = 8;
  double noise_sigma = 0.1;      // phonetic frame noise
  double ctx_noise_scale = 1.0;  // contextual noise = noise_sigma * ctx_noise_scale
  int semantic_dim = 8;
  int n_semantic_clusters = 5;
  double cluster_spread = 0.5;
  double topic_noise = 0.3;
  double topic_sharpness = 4.0;
  int min_words_per_utterance = 4;
  int max_words_per_utterance = 8;
  int n_speakers = 8;
  int n_unseen_speakers = 2;
  double speaker_sigma = 0.05;
  std::uint64_t seed = 0;

  int ratio() const;
  // Throws InvalidInput naming the first bad field.
  void validate() const;
};

struct Lexicon {
  std::vector<std::vector<int>> phone_strings;  // per word
  std::vector<int> cluster;                     // semantic cluster per word
  Matrix latents;                               // n_words x semantic_dim, unit rows
  Matrix word_centroids;                        // n_words x ctx_dim
  Matrix phone_centroids;                       // n_phones x phon_dim

  int n_words() const { return static_cast<int>(phone_strings.size()); }
};

Lexicon build_lexicon(const ToyLanguageSpec& spec);

struct SyntheticUtterance {
  std::string id;
  FeatureStream ctx;
  FeatureStream phon;
  std::vector<int> words;
  std::vector<int> phone_frames;      // ground-truth phone per phonetic frame
  std::vector<int> ctx_frame_words;   // ground-truth word per contextual frame
  int speaker = -1;                   // -1 when no speaker bias applies
};

struct SpeakerBias {
  Eigen::RowVectorXd ctx;
  Eigen::RowVectorXd phon;
};

// Renders a word sequence. Frames are rounded to float precision so that the
// binary feature files reproduce them exactly.
SyntheticUtterance render_utterance(const ToyLanguageSpec& spec, const Lexicon& lexicon, std::vector<int> words,
                                    std::uint64_t seed, const SpeakerBias* bias = nullptr);

// Topic-driven word sequences, no consecutive repeats. stream separates
// independent corpora drawn from the same language.
std::vector<std::vector<int>> sample_word_sequences(const ToyLanguageSpec& spec, const Lexicon& lexicon, int n,
                                                    std::uint64_t stream);

std::vector<SyntheticUtterance> generate_streams(const ToyLanguageSpec& spec, int n_utterances,
                                                 std::uint64_t stream = 0);

// Cosine similarity of two words' latent vectors.
double latent_similarity(const Lexicon& lexicon, int word_a, int word_b);

struct SyntheticPair {
  int word_a = 0;
  int word_b = 0;
  SyntheticUtterance a;
  SyntheticUtterance b;
  double human_score = 0.0;
};

// Single-word items for pairs of distinct words; half the pairs share a
// semantic cluster. human_score is the latent cosine similarity.
std::vector<SyntheticPair> generate_similarity_pairs(const ToyLanguageSpec& spec, int n_pairs,
                                                     std::uint64_t stream = 0);

enum class IntentSplit { train, original, unseen_speaker, unseen_utterance };

std::string to_string(IntentSplit split);
IntentSplit parse_intent_split(const std::string& text);

struct IntentCorpusSpec {
  int n_intents = 4;
  int keywords_per_intent = 3;
  int n_templates = 12;
  int template_min_words = 3;
  int template_max_words = 5;
  double heldout_combination_fraction = 0.25;
  // Hold out whole templates instead of per-keyword (template, keyword) pairs.
  bool hold_out_templates = false;
  int utterances_per_combination = 4;  // train copies of each seen (template, keyword) pair
  int eval_per_split = 100;
};

struct IntentUtterance {
  SyntheticUtterance utt;
  std::string label;
  IntentSplit split = IntentSplit::train;
};

struct IntentCorpus {
  std::vector<std::string> labels;
  std::vector<std::vector<int>> keywords;  // per intent
  std::vector<std::vector<int>> templates; // carrier words; keyword_slot marks the slot
  std::vector<int> keyword_slot;           // per template
  std::vector<IntentUtterance> utterances;
};

// The intent is fixed by the keyword in a carrier template. Keywords of an
// intent come from one semantic cluster. Speakers add a bias vector to every
// frame; the last spec.n_unseen_speakers speakers only appear in the
// unseen-speaker split. The unseen-utterance split uses (template, keyword)
// combinations absent from training.
IntentCorpus generate_intent_corpus(const ToyLanguageSpec& spec, const IntentCorpusSpec& intents);

}  // namespace dcslm
