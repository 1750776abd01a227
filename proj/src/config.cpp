#include "dcslm/config.hpp"

#include "dcslm/errors.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>

namespace dcslm {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw InvalidInput("'" + text + "' is not a valid number");
  return v;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw InvalidInput("'" + text + "' is not a boolean");
}

using Setter = std::function<void(const std::string&)>;

template <class T>
Setter number(T& field) {
  return [&field](const std::string& v) { field = parse_number<T>(v); };
}

Setter boolean(bool& field) {
  return [&field](const std::string& v) { field = parse_bool(v); };
}

}  // namespace

ConfigFile ConfigFile::parse(std::istream& in) {
  ConfigFile file;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line);
    ConfigEntry e{trim(text.substr(0, eq)), trim(text.substr(eq + 1)), line};
    if (e.key.empty() || e.value.empty()) throw ParseError("empty key or value", line);
    for (const auto& prev : file.entries_) {
      if (prev.key == e.key) throw ParseError("duplicate key '" + e.key + "'", line);
    }
    file.entries_.push_back(std::move(e));
  }
  return file;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileMissing(path.string());
  return parse(in);
}

void apply_config(const ConfigFile& file, const ConfigTargets& targets) {
  ModelConfig model_sink;
  TrainConfig train_sink;
  ToyLanguageSpec corpus_sink;
  IntentCorpusSpec intent_sink;
  FinetuneConfig finetune_sink;
  ModelConfig& m = targets.model ? *targets.model : model_sink;
  TrainConfig& t = targets.train ? *targets.train : train_sink;
  ToyLanguageSpec& c = targets.corpus ? *targets.corpus : corpus_sink;
  IntentCorpusSpec& i = targets.intent ? *targets.intent : intent_sink;
  FinetuneConfig& f = targets.finetune ? *targets.finetune : finetune_sink;

  const std::map<std::string, Setter, std::less<>> setters{
      {"model.n_layers", number(m.n_layers)},
      {"model.d_model", number(m.d_model)},
      {"model.n_heads", number(m.n_heads)},
      {"model.ffn_dim", number(m.ffn_dim)},
      {"model.conv_kernel", number(m.conv_kernel)},
      {"model.dropout", number(m.dropout)},
      {"model.max_positions", number(m.max_positions)},
      {"model.interaction", boolean(m.interaction)},
      {"model.mode", [&m](const std::string& v) { m.mode = parse_model_mode(v); }},
      {"train.task", [&t](const std::string& v) { t.task_mode = parse_task_mode(v); }},
      {"train.mask_prob", number(t.mask_prob)},
      {"train.batch_size", number(t.batch_size)},
      {"train.warmup_steps", number(t.warmup_steps)},
      {"train.peak_lr", number(t.peak_lr)},
      {"train.max_steps", number(t.max_steps)},
      {"train.weight_decay", number(t.weight_decay)},
      {"train.beta1", number(t.beta1)},
      {"train.beta2", number(t.beta2)},
      {"train.adam_eps", number(t.adam_eps)},
      {"corpus.n_words", number(c.n_words)},
      {"corpus.min_phones_per_word", number(c.min_phones_per_word)},
      {"corpus.max_phones_per_word", number(c.max_phones_per_word)},
      {"corpus.n_phones", number(c.n_phones)},
      {"corpus.words_per_phone_string", number(c.words_per_phone_string)},
      {"corpus.ctx_interval_ms", number(c.ctx_interval_ms)},
      {"corpus.phon_interval_ms", number(c.phon_interval_ms)},
      {"corpus.frames_per_phone", number(c.frames_per_phone)},
      {"corpus.ctx_dim", number(c.ctx_dim)},
      {"corpus.phon_dim", number(c.phon_dim)},
      {"corpus.noise_sigma", number(c.noise_sigma)},
      {"corpus.ctx_noise_scale", number(c.ctx_noise_scale)},
      {"corpus.semantic_dim", number(c.semantic_dim)},
      {"corpus.n_semantic_clusters", number(c.n_semantic_clusters)},
      {"corpus.cluster_spread", number(c.cluster_spread)},
      {"corpus.topic_noise", number(c.topic_noise)},
      {"corpus.topic_sharpness", number(c.topic_sharpness)},
      {"corpus.min_words_per_utterance", number(c.min_words_per_utterance)},
      {"corpus.max_words_per_utterance", number(c.max_words_per_utterance)},
      {"corpus.n_speakers", number(c.n_speakers)},
      {"corpus.n_unseen_speakers", number(c.n_unseen_speakers)},
      {"corpus.speaker_sigma", number(c.speaker_sigma)},
      {"corpus.seed", number(c.seed)},
      {"intent.n_intents", number(i.n_intents)},
      {"intent.keywords_per_intent", number(i.keywords_per_intent)},
      {"intent.n_templates", number(i.n_templates)},
      {"intent.template_min_words", number(i.template_min_words)},
      {"intent.template_max_words", number(i.template_max_words)},
      {"intent.heldout_combination_fraction", number(i.heldout_combination_fraction)},
      {"intent.utterances_per_combination", number(i.utterances_per_combination)},
      {"intent.hold_out_templates", boolean(i.hold_out_templates)},
      {"intent.eval_per_split", number(i.eval_per_split)},
      {"finetune.steps", number(f.steps)},
      {"finetune.batch_size", number(f.batch_size)},
      {"finetune.peak_lr", number(f.peak_lr)},
      {"finetune.warmup_steps", number(f.warmup_steps)},
      {"finetune.weight_decay", number(f.weight_decay)},
      {"finetune.train_encoder", boolean(f.train_encoder)},
  };

  for (const auto& e : file.entries()) {
    const auto it = setters.find(e.key);
    if (it == setters.end()) throw ParseError("unknown key '" + e.key + "'", e.line);
    try {
      it->second(e.value);
    } catch (const InvalidInput& err) {
      throw ParseError(e.key + ": " + err.what(), e.line);
    }
  }
}

}  // namespace dcslm
