#include "dcslm/cli.hpp"

#include "dcslm/checkpoint.hpp"
#include "dcslm/config.hpp"
#include "dcslm/errors.hpp"
#include "dcslm/evaluation.hpp"
#include "dcslm/formats.hpp"
#include "dcslm/seeding.hpp"
#include "dcslm/synthcorpus.hpp"
#include "dcslm/training.hpp"
#include "dcslm/unitize.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace dcslm {

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileMissing(path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 unavailable");
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
  std::string hex;
  char two[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(two, sizeof two, "%02x", digest[i]);
    hex += two;
  }
  return hex;
}

fs::path manifest_path(const fs::path& out) {
  if (fs::is_directory(out)) return out / "manifest.json";
  return fs::path(out.string() + ".manifest.json");
}

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Artifact {
  std::string path;
  std::string sha256;
  std::size_t files = 1;
};

struct Run {
  std::string command;
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config_path;
  std::string out;
  std::string task_mode;
  std::vector<Artifact> inputs;
  std::vector<Artifact> outputs;
  std::string started;
  ConfigFile config;
  std::ostream* log = nullptr;

  void input(const fs::path& p) { inputs.push_back({p.string(), sha256_file(p), 1}); }
  void output(const fs::path& p) { outputs.push_back({p.string(), sha256_file(p), 1}); }
  std::ostream& say() { return *log; }
};

json artifacts_json(const std::vector<Artifact>& list) {
  json arr = json::array();
  for (const auto& a : list) {
    json e{{"path", a.path}, {"sha256", a.sha256}};
    if (a.files != 1) e["files"] = a.files;
    arr.push_back(std::move(e));
  }
  return arr;
}

void write_manifest(const Run& run) {
  json m;
  m["command"] = run.command;
  m["argv"] = run.argv;
  m["config"] = run.config_path.empty() ? json(nullptr) : json(run.config_path);
  m["seed"] = run.seed;
  m["task_mode"] = run.task_mode.empty() ? json(nullptr) : json(run.task_mode);
  m["inputs"] = artifacts_json(run.inputs);
  m["outputs"] = artifacts_json(run.outputs);
  m["started_at"] = run.started;
  m["finished_at"] = utc_now();
  const fs::path path = manifest_path(run.out);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << m.dump(2) << "\n";
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

// Rows of a CSV whose header must start with the expected columns.
std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::vector<std::string>& required,
                                               std::size_t optional_columns = 0) {
  std::ifstream in(path);
  if (!in) throw FileMissing(path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file", 1);
  const auto header = split_csv_line(line);
  if (header.size() < required.size() || !std::equal(required.begin(), required.end(), header.begin())) {
    std::string want;
    for (const auto& c : required) want += (want.empty() ? "" : ",") + c;
    throw ParseError(path.string() + ": header must start with " + want, 1);
  }
  const std::size_t max_cols = required.size() + optional_columns;
  std::vector<std::vector<std::string>> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() < required.size() || cells.size() > std::max(max_cols, header.size())) {
      throw ParseError(path.string() + ": wrong number of columns", n);
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Corpus index: one JSON object per line with id, ctx and phon feature paths
// (relative to the index) plus optional ground truth.

struct IndexEntry {
  std::string id;
  fs::path ctx;
  fs::path phon;
};

std::vector<IndexEntry> read_index(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FileMissing(path.string());
  std::vector<IndexEntry> out;
  std::string line;
  std::size_t n = 0;
  const fs::path base = path.parent_path();
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("id").get<std::string>(), base / j.at("ctx").get<std::string>(),
                     base / j.at("phon").get<std::string>()});
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), n);
    }
  }
  if (out.empty()) throw ParseError(path.string() + ": no entries");
  return out;
}

struct CorpusWriter {
  fs::path dir;
  std::ofstream index;
  std::vector<std::string> feature_hashes;

  explicit CorpusWriter(const fs::path& d) : dir(d) {
    fs::create_directories(dir / "feats");
    index.open(dir / "corpus.jsonl");
    if (!index) throw std::runtime_error("cannot write " + (dir / "corpus.jsonl").string());
  }

  std::string add(const SyntheticUtterance& u, json extra = json::object()) {
    const std::string stem = "feats/" + u.id;
    write_feature_file(dir / (stem + ".ctx.feat"), u.ctx);
    write_feature_file(dir / (stem + ".phon.feat"), u.phon);
    feature_hashes.push_back(sha256_file(dir / (stem + ".ctx.feat")));
    feature_hashes.push_back(sha256_file(dir / (stem + ".phon.feat")));
    json j{{"id", u.id}, {"ctx", stem + ".ctx.feat"}, {"phon", stem + ".phon.feat"}, {"words", u.words}};
    for (auto& [k, v] : extra.items()) j[k] = v;
    index << j.dump() << "\n";
    return stem;
  }

  void finish(Run& run) {
    index.close();
    run.output(dir / "corpus.jsonl");
    // One digest over the per-file digests, in index order.
    const fs::path tmp = dir / ".feature_hashes";
    {
      std::ofstream h(tmp);
      for (const auto& s : feature_hashes) h << s << "\n";
    }
    run.outputs.push_back({(dir / "feats").string(), sha256_file(tmp), feature_hashes.size()});
    fs::remove(tmp);
  }
};

// ---------------------------------------------------------------------------

void cmd_gen_corpus(Run& run, const std::string& kind, int n, std::uint64_t stream) {
  ToyLanguageSpec spec;
  IntentCorpusSpec intents;
  apply_config(run.config, {.corpus = &spec, .intent = &intents});
  if (run.seed_given) spec.seed = run.seed;
  run.seed = spec.seed;
  spec.validate();
  const fs::path dir = run.out;
  CorpusWriter w(dir);
  if (kind == "streams") {
    for (const auto& u : generate_streams(spec, n, stream)) w.add(u);
    run.say() << "wrote " << n << " utterances to " << dir.string() << "\n";
  } else if (kind == "pairs") {
    const auto pairs = generate_similarity_pairs(spec, n, stream);
    std::ofstream csv(dir / "pairs.csv");
    csv << "item_a_path,item_b_path,human_score\n";
    for (const auto& p : pairs) {
      const auto a = w.add(p.a);
      const auto b = w.add(p.b);
      csv << a << "," << b << "," << format_g17(p.human_score) << "\n";
    }
    csv.close();
    run.output(dir / "pairs.csv");
    run.say() << "wrote " << pairs.size() << " similarity pairs to " << (dir / "pairs.csv").string() << "\n";
  } else {
    const IntentCorpus corpus = generate_intent_corpus(spec, intents);
    std::ofstream csv(dir / "labels.csv");
    csv << "id,label,split\n";
    std::map<std::string, int> per_split;
    for (const auto& u : corpus.utterances) {
      w.add(u.utt, json{{"label", u.label}, {"split", to_string(u.split)}, {"speaker", u.utt.speaker}});
      csv << u.utt.id << "," << u.label << "," << to_string(u.split) << "\n";
      ++per_split[to_string(u.split)];
    }
    csv.close();
    run.output(dir / "labels.csv");
    for (const auto& [s, c] : per_split) run.say() << s << ": " << c << " utterances\n";
  }
  w.finish(run);
}

void cmd_train_codebook(Run& run, const std::string& corpus, const std::vector<std::string>& features,
                        const std::string& channel, int k, int max_iters) {
  apply_config(run.config, {});
  if (corpus.empty() == features.empty()) throw UsageError("give exactly one of --corpus or --features");
  std::vector<FeatureStream> streams;
  if (!corpus.empty()) {
    run.input(corpus);
    for (const auto& e : read_index(corpus)) streams.push_back(read_feature_file(channel == "ctx" ? e.ctx : e.phon));
  } else {
    for (const auto& f : features) {
      run.input(f);
      streams.push_back(read_feature_file(f));
    }
  }
  const Codebook cb = train_codebook(streams, k, run.seed, max_iters);
  ensure_parent(run.out);
  write_codebook_file(run.out, cb);
  run.output(run.out);
  run.say() << "trained " << k << "-unit codebook on " << streams.size() << " streams\n";
}

void cmd_unitize(Run& run, const std::string& ctx_path, const std::string& phon_path, const std::string& corpus,
                 const std::string& ctx_cb_path, const std::string& phon_cb_path, const std::string& id) {
  apply_config(run.config, {});
  const bool single = !ctx_path.empty() || !phon_path.empty();
  if (single == !corpus.empty()) throw UsageError("give --ctx and --phon, or --corpus");
  if (single && (ctx_path.empty() || phon_path.empty())) throw UsageError("--ctx and --phon go together");
  run.input(ctx_cb_path);
  run.input(phon_cb_path);
  const Codebook ctx_cb = read_codebook_file(ctx_cb_path);
  const Codebook phon_cb = read_codebook_file(phon_cb_path);

  std::vector<IndexEntry> entries;
  if (single) {
    entries.push_back({id, ctx_path, phon_path});
    run.input(ctx_path);
    run.input(phon_path);
  } else {
    run.input(corpus);
    entries = read_index(corpus);
  }
  UnitFile file;
  file.vocab = {ctx_cb.size(), phon_cb.size()};
  for (const auto& e : entries) {
    const FeatureStream c = read_feature_file(e.ctx);
    const FeatureStream p = read_feature_file(e.phon);
    file.ratio = static_cast<int>(std::lround(c.frame_interval_ms / p.frame_interval_ms));
    file.records.push_back({e.id, unitize(c, p, ctx_cb, phon_cb)});
  }
  ensure_parent(run.out);
  write_unit_file(run.out, file);
  run.output(run.out);
  run.say() << "unitized " << file.records.size() << " utterances\n";
}

ModelConfig model_config_for(const ConfigFile& cfg, const UnitVocab& vocab, std::optional<TaskMode> task) {
  ModelConfig mc;
  apply_config(cfg, {.model = &mc});
  mc.ctx_vocab = vocab.ctx_vocab_size();
  mc.phon_vocab = vocab.phon_vocab_size();
  if (task) mc.mode = *task == TaskMode::mlm_baseline ? ModelMode::single_channel_baseline : ModelMode::dual;
  mc.validate();
  return mc;
}

void write_finetune_trace(const fs::path& path, const std::vector<double>& trace) {
  std::ofstream f(path);
  f << "step,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) f << (i + 1) << "," << format_g17(trace[i]) << "\n";
}

void cmd_train(Run& run, const std::string& units_path, const std::string& task, int steps,
               const std::string& ctx_cb_path) {
  TrainConfig tc;
  apply_config(run.config, {.train = &tc});
  if (!task.empty()) tc.task_mode = parse_task_mode(task);
  if (steps > 0) tc.max_steps = steps;
  tc.seed = run.seed;
  run.task_mode = std::string(to_string(tc.task_mode));
  run.input(units_path);
  const UnitFile units = read_unit_file(units_path);
  std::optional<Codebook> ctx_cb;
  if (!ctx_cb_path.empty()) {
    run.input(ctx_cb_path);
    ctx_cb = read_codebook_file(ctx_cb_path);
    if (ctx_cb->size() != units.vocab.ctx_codebook) throw InvalidInput("codebook size does not match the unit file");
  }
  if (tc.task_mode == TaskMode::mcr_and_mcp && !ctx_cb) throw UsageError("--ctx-codebook is required for mcr_mcp");
  const ModelConfig mc = model_config_for(run.config, units.vocab, tc.task_mode);

  std::vector<UnitSequence> corpus;
  for (const auto& r : units.records) corpus.push_back(r.seq);
  DualChannelModel model(mc, derive_seed(tc.seed, {0x1417}));
  const int every = std::max(1, tc.max_steps / 10);
  const TrainResult result = train(model, corpus, units.vocab, tc, ctx_cb ? &*ctx_cb : nullptr,
                                   [&](const LossRecord& r) {
                                     if (r.step % every == 0 || r.step == 1) {
                                       run.say() << "step " << r.step << " lr " << r.lr << " loss " << r.total << "\n";
                                     }
                                   });
  const fs::path dir = run.out;
  fs::create_directories(dir);
  write_checkpoint(dir / "model.dclm", model.config(), model.params());
  {
    std::ofstream f(dir / "loss.csv");
    write_loss_trace(f, result.trace);
  }
  run.output(dir / "model.dclm");
  run.output(dir / "loss.csv");
}

// Pair items are either "<units.jsonl>#<id>" or a feature prefix with
// <prefix>.ctx.feat and <prefix>.phon.feat next to it.
class ItemResolver {
 public:
  ItemResolver(Run& run, const Codebook* ctx_cb, const Codebook* phon_cb) : run_(run), ctx_cb_(ctx_cb), phon_cb_(phon_cb) {}

  UnitSequence resolve(const fs::path& base, const std::string& item) {
    const auto hash = item.find('#');
    if (hash != std::string::npos) {
      const fs::path file = base / item.substr(0, hash);
      auto it = unit_files_.find(file.string());
      if (it == unit_files_.end()) {
        run_.input(file);
        UnitFile uf = read_unit_file(file);
        std::map<std::string, UnitSequence> by_id;
        for (auto& r : uf.records) by_id[r.id] = std::move(r.seq);
        it = unit_files_.emplace(file.string(), std::move(by_id)).first;
      }
      const auto rec = it->second.find(item.substr(hash + 1));
      if (rec == it->second.end()) throw InvalidInput("no record '" + item.substr(hash + 1) + "' in " + file.string());
      return rec->second;
    }
    if (ctx_cb_ == nullptr || phon_cb_ == nullptr) {
      throw UsageError("feature items need --ctx-codebook and --phon-codebook");
    }
    const fs::path prefix = base / item;
    const FeatureStream c = read_feature_file(prefix.string() + ".ctx.feat");
    const FeatureStream p = read_feature_file(prefix.string() + ".phon.feat");
    return unitize(c, p, *ctx_cb_, *phon_cb_);
  }

 private:
  Run& run_;
  const Codebook* ctx_cb_;
  const Codebook* phon_cb_;
  std::map<std::string, std::map<std::string, UnitSequence>> unit_files_;
};

std::vector<SimilarityPair> read_pairs(Run& run, const fs::path& csv, ItemResolver& items) {
  run.input(csv);
  std::vector<SimilarityPair> pairs;
  for (const auto& row : read_csv(csv, {"item_a_path", "item_b_path", "human_score"})) {
    SimilarityPair p;
    p.id_a = row[0];
    p.id_b = row[1];
    p.a = items.resolve(csv.parent_path(), row[0]);
    p.b = items.resolve(csv.parent_path(), row[1]);
    try {
      p.human_score = std::stod(row[2]);
    } catch (const std::exception&) {
      throw ParseError(csv.string() + ": bad human_score '" + row[2] + "'");
    }
    if (!std::isfinite(p.human_score)) throw ParseError(csv.string() + ": non-finite human_score");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void cmd_eval_ssimi(Run& run, const std::string& pairs_path, const std::string& dev_path, const std::string& ckpt,
                    const std::string& ctx_cb_path, const std::string& phon_cb_path, std::optional<int> layer,
                    bool sweep, const std::string& pooling, const std::string& distance, const std::string& channel) {
  apply_config(run.config, {});
  if (layer && sweep) throw UsageError("--layer and --sweep are exclusive");
  std::optional<Codebook> ctx_cb, phon_cb;
  if (!ctx_cb_path.empty()) {
    run.input(ctx_cb_path);
    ctx_cb = read_codebook_file(ctx_cb_path);
  }
  if (!phon_cb_path.empty()) {
    run.input(phon_cb_path);
    phon_cb = read_codebook_file(phon_cb_path);
  }
  run.input(ckpt);
  DualChannelModel model = load_model(ckpt);
  ItemResolver items(run, ctx_cb ? &*ctx_cb : nullptr, phon_cb ? &*phon_cb : nullptr);
  const auto pairs = read_pairs(run, pairs_path, items);

  ProbeSpec probe;
  probe.layer = layer;
  probe.pooling = parse_pooling(pooling);
  probe.distance = parse_distance(distance);
  probe.channel = parse_channel(channel);

  SsimiReport report;
  std::string selected_on = layer ? "fixed" : "test";
  if (!layer && !dev_path.empty()) {
    const auto dev = read_pairs(run, dev_path, items);
    report = ssimi_dev_test(model, dev, pairs, probe);
    selected_on = "dev";
  } else {
    report = ssimi_score(model, pairs, probe);
  }

  json layers = json::object();
  std::ostringstream csv;
  csv << "layer,score\n";
  for (std::size_t l = 0; l < report.layer_scores.size(); ++l) {
    if (std::isnan(report.layer_scores[l])) continue;
    layers[std::to_string(l)] = report.layer_scores[l];
    csv << l << "," << format_g17(report.layer_scores[l]) << "\n";
  }
  json j;
  j["n_pairs"] = pairs.size();
  j["pooling"] = pooling;
  j["distance"] = distance;
  j["channel"] = channel;
  j["layers"] = layers;
  j["best_layer"] = report.best_layer;
  j["score"] = report.score;
  j["layer_selected_on"] = selected_on;

  const fs::path out = run.out;
  ensure_parent(out);
  {
    std::ofstream f(out);
    f << j.dump(2) << "\n";
  }
  fs::path csv_path = out;
  csv_path.replace_extension(".layers.csv");
  {
    std::ofstream f(csv_path);
    f << csv.str();
  }
  run.output(out);
  run.output(csv_path);
  run.say() << "sSIMI " << report.score << " at layer " << report.best_layer << " (" << pairs.size() << " pairs)\n";
}

struct LabelRow {
  std::string label;
  std::string split;
};

std::map<std::string, LabelRow> read_labels(Run& run, const fs::path& path) {
  run.input(path);
  std::map<std::string, LabelRow> out;
  for (const auto& row : read_csv(path, {"id", "label"}, 1)) {
    out[row[0]] = {row[1], row.size() > 2 ? row[2] : ""};
  }
  return out;
}

std::vector<LabeledSequence> labeled_subset(const UnitFile& units, const std::map<std::string, LabelRow>& labels,
                                            const std::string& split) {
  std::vector<LabeledSequence> out;
  for (const auto& r : units.records) {
    const auto it = labels.find(r.id);
    if (it == labels.end()) continue;
    if (!split.empty() && it->second.split != split) continue;
    out.push_back({r.id, r.seq, it->second.label});
  }
  return out;
}

void cmd_finetune(Run& run, const std::string& units_path, const std::string& labels_path, const std::string& split,
                  const std::string& ckpt, int steps, bool freeze_encoder) {
  FinetuneConfig fc;
  apply_config(run.config, {.finetune = &fc});
  fc.seed = run.seed;
  if (steps > 0) fc.steps = steps;
  if (freeze_encoder) fc.train_encoder = false;
  run.input(units_path);
  const UnitFile units = read_unit_file(units_path);
  const auto labels = read_labels(run, labels_path);
  const auto data = labeled_subset(units, labels, split);
  if (data.empty()) throw InvalidInput("no labelled utterances in split '" + split + "'");

  std::optional<DualChannelModel> model;
  if (!ckpt.empty()) {
    run.input(ckpt);
    model.emplace(load_model(ckpt));
    if (model->config().ctx_vocab != units.vocab.ctx_vocab_size() ||
        model->config().phon_vocab != units.vocab.phon_vocab_size()) {
      throw InvalidInput("checkpoint vocabulary does not match the unit file");
    }
    run.task_mode = "finetune_pretrained";
  } else {
    model.emplace(model_config_for(run.config, units.vocab, std::nullopt), derive_seed(fc.seed, {0x1417}));
    run.task_mode = "finetune_scratch";
  }
  const FinetuneResult result = finetune_intent(*model, data, fc);

  const fs::path dir = run.out;
  fs::create_directories(dir);
  write_checkpoint(dir / "model.dclm", model->config(), model->params());
  {
    std::ofstream f(dir / "classes.json");
    f << json{{"labels", result.labels}}.dump(2) << "\n";
  }
  write_finetune_trace(dir / "loss.csv", result.loss_trace);
  run.output(dir / "model.dclm");
  run.output(dir / "classes.json");
  run.output(dir / "loss.csv");
  run.say() << "fine-tuned on " << data.size() << " utterances, " << result.labels.size() << " classes, final loss "
            << (result.loss_trace.empty() ? 0.0 : result.loss_trace.back()) << "\n";
}

void cmd_eval_intent(Run& run, const std::string& units_path, const std::string& labels_path, const std::string& ckpt,
                     std::string classes_path, std::vector<std::string> splits) {
  apply_config(run.config, {});
  if (classes_path.empty()) classes_path = (fs::path(ckpt).parent_path() / "classes.json").string();
  run.input(units_path);
  run.input(ckpt);
  run.input(classes_path);
  const UnitFile units = read_unit_file(units_path);
  const auto labels = read_labels(run, labels_path);
  DualChannelModel model = load_model(ckpt);
  std::vector<std::string> classes;
  {
    std::ifstream f(classes_path);
    if (!f) throw FileMissing(classes_path);
    try {
      classes = json::parse(f).at("labels").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw ParseError(classes_path + ": " + e.what());
    }
  }
  if (splits.empty()) {
    std::set<std::string> present;
    for (const auto& [id, row] : labels) {
      if (row.split != "train") present.insert(row.split);
    }
    splits.assign(present.begin(), present.end());
  }

  json report = json::object();
  std::ostringstream log;
  log << "id,split,gold,predicted,correct\n";
  const WarningSink warn = [&](const std::string& m) { run.say() << "warning: " << m << "\n"; };
  for (const auto& split : splits) {
    const auto data = labeled_subset(units, labels, split);
    if (data.empty()) throw InvalidInput("no labelled utterances in split '" + split + "'");
    const IntentReport r = evaluate_intent(model, classes, data, warn);
    report[split.empty() ? "all" : split] = {{"accuracy", r.accuracy},
                                             {"correct", r.correct},
                                             {"total", r.total},
                                             {"unseen_labels", r.unseen_labels}};
    for (const auto& e : r.log) {
      log << e.id << "," << split << "," << e.gold << "," << e.predicted << "," << (e.correct ? 1 : 0) << "\n";
    }
    run.say() << (split.empty() ? "all" : split) << ": accuracy " << r.accuracy << " (" << r.correct << "/" << r.total
              << ")\n";
  }
  const fs::path out = run.out;
  ensure_parent(out);
  {
    std::ofstream f(out);
    f << json{{"splits", report}}.dump(2) << "\n";
  }
  fs::path log_path = out;
  log_path.replace_extension(".log.csv");
  {
    std::ofstream f(log_path);
    f << log.str();
  }
  run.output(out);
  run.output(log_path);
}

std::string error_json(const std::string& kind, const std::string& message, int code) {
  return json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump();
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-channel spoken language model toolkit", "dcslm"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Run run;
  run.log = &out;
  std::string config_path;
  auto common = [&](CLI::App* sub, bool out_required = true) {
    sub->add_option("--seed", run.seed, "Random seed");
    sub->add_option("--config", config_path, "Configuration file (key = value)");
    auto* o = sub->add_option("--out", run.out, "Output path");
    if (out_required) o->required();
  };

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic feature corpus");
  std::string gen_kind = "streams";
  int gen_n = 1000;
  std::uint64_t gen_stream = 0;
  common(gen);
  gen->add_option("--kind", gen_kind, "streams | pairs | intent")->check(CLI::IsMember({"streams", "pairs", "intent"}));
  gen->add_option("--n", gen_n, "Number of utterances or pairs")->check(CLI::PositiveNumber);
  gen->add_option("--stream", gen_stream, "Independent sample stream of the same language");

  // train-codebook
  auto* tcb = app.add_subcommand("train-codebook", "Train a k-means codebook");
  std::string tcb_corpus, tcb_channel = "ctx";
  std::vector<std::string> tcb_features;
  int tcb_k = 0, tcb_iters = 100;
  common(tcb);
  tcb->add_option("--corpus", tcb_corpus, "Corpus index (corpus.jsonl)");
  tcb->add_option("--features", tcb_features, "Feature files");
  tcb->add_option("--channel", tcb_channel, "ctx | phon (with --corpus)")->check(CLI::IsMember({"ctx", "phon"}));
  tcb->add_option("--k", tcb_k, "Codebook size")->required()->check(CLI::PositiveNumber);
  tcb->add_option("--max-iters", tcb_iters, "Lloyd iterations")->check(CLI::PositiveNumber);

  // unitize
  auto* uni = app.add_subcommand("unitize", "Convert feature streams to unit sequences");
  std::string uni_ctx, uni_phon, uni_corpus, uni_ctx_cb, uni_phon_cb, uni_id = "utt";
  common(uni);
  uni->add_option("--ctx", uni_ctx, "Contextual feature file");
  uni->add_option("--phon", uni_phon, "Phonetic feature file");
  uni->add_option("--corpus", uni_corpus, "Corpus index (corpus.jsonl)");
  uni->add_option("--id", uni_id, "Record id for a single utterance");
  uni->add_option("--ctx-codebook", uni_ctx_cb, "Contextual codebook")->required();
  uni->add_option("--phon-codebook", uni_phon_cb, "Phonetic codebook")->required();

  // train
  auto* trn = app.add_subcommand("train", "Pre-train a model on a unit file");
  std::string trn_units, trn_task, trn_ctx_cb;
  int trn_steps = 0;
  common(trn);
  trn->add_option("--units", trn_units, "Unit file")->required();
  trn->add_option("--task", trn_task, "mcp | mcr_mcp | mlm")->check(CLI::IsMember({"mcp", "mcr_mcp", "mlm"}));
  trn->add_option("--steps", trn_steps, "Override train.max_steps")->check(CLI::PositiveNumber);
  trn->add_option("--ctx-codebook", trn_ctx_cb, "Contextual codebook (reconstruction targets)");

  // eval-ssimi
  auto* ess = app.add_subcommand("eval-ssimi", "Score semantic similarity against human judgments");
  std::string ess_pairs, ess_dev, ess_ckpt, ess_ctx_cb, ess_phon_cb, ess_pool = "mean", ess_dist = "euclidean",
                                                                     ess_chan = "contextual";
  std::optional<int> ess_layer;
  bool ess_sweep = false;
  common(ess);
  ess->add_option("--pairs", ess_pairs, "Pair CSV (item_a_path,item_b_path,human_score)")->required();
  ess->add_option("--dev-pairs", ess_dev, "Pair CSV used to choose the layer");
  ess->add_option("--ckpt", ess_ckpt, "Model checkpoint")->required();
  ess->add_option("--ctx-codebook", ess_ctx_cb, "Contextual codebook for feature items");
  ess->add_option("--phon-codebook", ess_phon_cb, "Phonetic codebook for feature items");
  ess->add_option("--layer", ess_layer, "Probe one layer")->check(CLI::NonNegativeNumber);
  ess->add_flag("--sweep", ess_sweep, "Score every layer 0..n_layers");
  ess->add_option("--pooling", ess_pool, "mean | max | min")->check(CLI::IsMember({"mean", "max", "min"}));
  ess->add_option("--distance", ess_dist, "euclidean | cosine")->check(CLI::IsMember({"euclidean", "cosine"}));
  ess->add_option("--channel", ess_chan, "contextual | phonetic | concat")
      ->check(CLI::IsMember({"contextual", "phonetic", "concat"}));

  // finetune
  auto* fin = app.add_subcommand("finetune", "Fine-tune an intent classifier");
  std::string fin_units, fin_labels, fin_split = "train", fin_ckpt;
  int fin_steps = 0;
  bool fin_freeze = false;
  common(fin);
  fin->add_option("--units", fin_units, "Unit file")->required();
  fin->add_option("--labels", fin_labels, "Label CSV (id,label[,split])")->required();
  fin->add_option("--split", fin_split, "Split to train on");
  fin->add_option("--ckpt", fin_ckpt, "Pre-trained checkpoint; omit to start from scratch");
  fin->add_option("--steps", fin_steps, "Override finetune.steps")->check(CLI::PositiveNumber);
  fin->add_flag("--freeze-encoder", fin_freeze, "Train only the classification head");

  // eval-intent
  auto* evi = app.add_subcommand("eval-intent", "Intent accuracy per split");
  std::string evi_units, evi_labels, evi_ckpt, evi_classes;
  std::vector<std::string> evi_splits;
  common(evi);
  evi->add_option("--units", evi_units, "Unit file")->required();
  evi->add_option("--labels", evi_labels, "Label CSV (id,label[,split])")->required();
  evi->add_option("--ckpt", evi_ckpt, "Fine-tuned checkpoint")->required();
  evi->add_option("--classes", evi_classes, "Class list (default: classes.json next to the checkpoint)");
  evi->add_option("--split", evi_splits, "Splits to score (default: every non-train split)");

  std::vector<const char*> argv{"dcslm"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    err << error_json("usage", e.what(), 2) << "\n";
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  run.command = sub->get_name();
  run.argv = args;
  run.seed_given = sub->count("--seed") > 0;
  run.config_path = config_path;
  run.started = utc_now();
  try {
    if (!config_path.empty()) {
      run.input(config_path);
      run.config = ConfigFile::load(config_path);
    }
    if (sub == gen) {
      cmd_gen_corpus(run, gen_kind, gen_n, gen_stream);
    } else if (sub == tcb) {
      cmd_train_codebook(run, tcb_corpus, tcb_features, tcb_channel, tcb_k, tcb_iters);
    } else if (sub == uni) {
      cmd_unitize(run, uni_ctx, uni_phon, uni_corpus, uni_ctx_cb, uni_phon_cb, uni_id);
    } else if (sub == trn) {
      cmd_train(run, trn_units, trn_task, trn_steps, trn_ctx_cb);
    } else if (sub == ess) {
      cmd_eval_ssimi(run, ess_pairs, ess_dev, ess_ckpt, ess_ctx_cb, ess_phon_cb, ess_layer, ess_sweep, ess_pool,
                     ess_dist, ess_chan);
    } else if (sub == fin) {
      cmd_finetune(run, fin_units, fin_labels, fin_split, fin_ckpt, fin_steps, fin_freeze);
    } else if (sub == evi) {
      cmd_eval_intent(run, evi_units, evi_labels, evi_ckpt, evi_classes, evi_splits);
    }
    write_manifest(run);
  } catch (const UsageError& e) {
    out << sub->help();
    err << error_json("usage", e.what(), 2) << "\n";
    return 2;
  } catch (const FileMissing& e) {
    err << error_json("missing_file", e.what(), 1) << "\n";
    return 1;
  } catch (const ParseError& e) {
    err << error_json("parse", e.what(), 1) << "\n";
    return 1;
  } catch (const InvalidInput& e) {
    err << error_json("invalid_input", e.what(), 1) << "\n";
    return 1;
  } catch (const DivergenceError& e) {
    err << error_json("diverged", e.what(), 1) << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << error_json("internal", e.what(), 1) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace dcslm
