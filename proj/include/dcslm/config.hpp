#pragma once

// Plain-text run configuration:
//
//   # comment
//   model.d_model = 64
//   train.task = mcp
//
// Keys are "<section>.<field>" with sections model, train, corpus, intent
// and finetune. Unknown keys and malformed values are ParseErrors carrying
// the line number.

#include "dcslm/model.hpp"
#include "dcslm/synthcorpus.hpp"
#include "dcslm/training.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace dcslm {

struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

class ConfigFile {
 public:
  static ConfigFile parse(std::istream& in);
  static ConfigFile load(const std::filesystem::path& path);

  const std::vector<ConfigEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<ConfigEntry> entries_;
};

// Null targets still validate their section's keys but discard the values.
struct ConfigTargets {
  ModelConfig* model = nullptr;
  TrainConfig* train = nullptr;
  ToyLanguageSpec* corpus = nullptr;
  IntentCorpusSpec* intent = nullptr;
  FinetuneConfig* finetune = nullptr;
};

void apply_config(const ConfigFile& file, const ConfigTargets& targets);

}  // namespace dcslm
