#include "dcslm/training.hpp"

#include "dcslm/errors.hpp"
#include "dcslm/seeding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

namespace dcslm {

std::string_view to_string(TaskMode mode) {
  switch (mode) {
    case TaskMode::mcp_only:
      return "mcp";
    case TaskMode::mcr_and_mcp:
      return "mcr_mcp";
    case TaskMode::mlm_baseline:
      return "mlm";
  }
  return "?";
}

TaskMode parse_task_mode(std::string_view text) {
  if (text == "mcp" || text == "mcp_only" || text == "MCP_only") return TaskMode::mcp_only;
  if (text == "mcr_mcp" || text == "mcr_and_mcp" || text == "MCR_and_MCP") return TaskMode::mcr_and_mcp;
  if (text == "mlm" || text == "mlm_baseline" || text == "MLM_baseline") return TaskMode::mlm_baseline;
  throw InvalidInput("unknown task mode '" + std::string(text) + "' (expected mcp, mcr_mcp or mlm)");
}

void TrainConfig::validate() const {
  if (!(mask_prob > 0.0 && mask_prob < 1.0)) throw InvalidInput("mask_prob must be in (0, 1)");
  if (batch_size < 1) throw InvalidInput("batch_size must be positive");
  if (warmup_steps < 0) throw InvalidInput("warmup_steps must be >= 0");
  if (!(peak_lr > 0.0)) throw InvalidInput("peak_lr must be positive");
  if (max_steps < 0) throw InvalidInput("max_steps must be >= 0");
  if (weight_decay < 0.0) throw InvalidInput("weight_decay must be >= 0");
}

std::size_t MaskedBatch::masked_count() const {
  std::size_t n = 0;
  for (const auto& p : masked_positions) n += p.size();
  return n;
}

MaskedBatch mask_contextual(std::span<const UnitSequence> seqs, const UnitVocab& vocab, double mask_prob,
                            std::uint64_t seed, const Codebook* ctx_codebook) {
  if (mask_prob < 0.0 || mask_prob > 1.0) throw InvalidInput("mask_prob must be in [0, 1]");
  if (ctx_codebook != nullptr && ctx_codebook->size() != vocab.ctx_codebook) {
    throw InvalidInput("contextual codebook size does not match the unit vocabulary");
  }
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(mask_prob);
  MaskedBatch batch;
  batch.sequences.assign(seqs.begin(), seqs.end());
  batch.masked_positions.resize(seqs.size());
  std::vector<std::pair<std::size_t, int>> eligible;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& ctx = seqs[s].ctx;
    for (std::size_t i = 0; i < ctx.size(); ++i) {
      if (vocab.is_ctx_special(ctx[i])) continue;
      eligible.emplace_back(s, static_cast<int>(i));
      if (coin(rng)) batch.masked_positions[s].push_back(static_cast<int>(i));
    }
  }
  if (eligible.empty()) throw InvalidInput("batch has no maskable contextual units");
  if (batch.masked_count() == 0) {
    std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
    const auto [s, i] = eligible[pick(rng)];
    batch.masked_positions[s].push_back(i);
  }
  batch.original_ids.resize(seqs.size());
  batch.original_vectors.resize(seqs.size());
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& positions = batch.masked_positions[s];
    if (ctx_codebook != nullptr) batch.original_vectors[s].resize(static_cast<Eigen::Index>(positions.size()), ctx_codebook->dim());
    for (std::size_t k = 0; k < positions.size(); ++k) {
      int& id = batch.sequences[s].ctx[static_cast<std::size_t>(positions[k])];
      batch.original_ids[s].push_back(id);
      if (ctx_codebook != nullptr) batch.original_vectors[s].row(static_cast<Eigen::Index>(k)) = ctx_codebook->centroids.row(id);
      id = vocab.mask();
    }
  }
  return batch;
}

int mcp_head_input_dim(TaskMode mode, int d_model) {
  return mode == TaskMode::mcp_only ? 2 * d_model : d_model;
}

namespace {

// Creates prefix.{w,b}; an existing pair of the right shape is kept unless reset.
void ensure_linear(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng,
                   bool reset = false) {
  std::normal_distribution<double> normal(0.0, 0.02);
  Matrix w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
  Matrix b = Matrix::Zero(1, out);
  Parameter* pw = store.find(prefix + ".w");
  if (pw != nullptr && !reset && pw->value.rows() == in && pw->value.cols() == out) return;
  if (pw != nullptr) {
    pw->value = std::move(w);
    pw->zero_grad();
    Parameter& pb = store.get(prefix + ".b");
    pb.value = std::move(b);
    pb.zero_grad();
    return;
  }
  store.add(prefix + ".w", std::move(w));
  store.add(prefix + ".b", std::move(b));
}

// Stacks the rows of the chosen final-layer channel at the masked positions.
Var gather_masked(std::span<const DualChannelOutputs> outputs, const MaskedBatch& batch, bool phonetic) {
  std::vector<Var> parts;
  for (std::size_t s = 0; s < outputs.size(); ++s) {
    const auto& positions = batch.masked_positions[s];
    if (positions.empty()) continue;
    const LayerStates& fin = outputs[s].final_layer();
    const Var src = phonetic ? fin.phon : fin.ctx;
    if (!src.valid()) throw InvalidInput("head needs the phonetic channel, which this model does not have");
    parts.push_back(gather_rows(src, positions));
  }
  return concat_rows(parts);
}

std::vector<int> masked_targets(const MaskedBatch& batch) {
  std::vector<int> targets;
  for (const auto& ids : batch.original_ids) targets.insert(targets.end(), ids.begin(), ids.end());
  return targets;
}

void check_batch(std::span<const DualChannelOutputs> outputs, const MaskedBatch& batch) {
  if (outputs.size() != batch.masked_positions.size()) throw InvalidInput("outputs and batch sizes differ");
  if (batch.masked_count() == 0) throw InvalidInput("loss over an empty masked set");
}

Var head(Tape& tape, Var x, ParamStore& heads, const std::string& prefix) {
  return add_bias(matmul(x, tape.parameter(heads.get(prefix + ".w"))), tape.parameter(heads.get(prefix + ".b")));
}

}  // namespace

void add_pretraining_heads(DualChannelModel& model, TaskMode mode, int mcr_dim, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, {0x4ead}));
  const ModelConfig& c = model.config();
  if (mode != TaskMode::mlm_baseline && c.mode != ModelMode::dual) {
    throw InvalidInput(std::string(to_string(mode)) + " needs a dual-channel model");
  }
  ensure_linear(model.params(), "head.mcp", mcp_head_input_dim(mode, c.d_model), c.ctx_vocab, rng);
  if (mode == TaskMode::mcr_and_mcp) {
    if (mcr_dim < 1) throw InvalidInput("MCR needs the contextual codebook dimension");
    ensure_linear(model.params(), "head.mcr", c.d_model, mcr_dim, rng);
  }
}

Var mcp_logits(Tape& tape, std::span<const DualChannelOutputs> outputs, const MaskedBatch& batch, TaskMode mode,
               ParamStore& heads) {
  check_batch(outputs, batch);
  Var input;
  switch (mode) {
    case TaskMode::mcp_only: {
      const std::array<Var, 2> parts{gather_masked(outputs, batch, false), gather_masked(outputs, batch, true)};
      input = concat_cols(parts);
      break;
    }
    case TaskMode::mcr_and_mcp:
      input = gather_masked(outputs, batch, true);
      break;
    case TaskMode::mlm_baseline:
      input = gather_masked(outputs, batch, false);
      break;
  }
  return head(tape, input, heads, "head.mcp");
}

Var mcp_loss(Tape& tape, std::span<const DualChannelOutputs> outputs, const MaskedBatch& batch, TaskMode mode,
             ParamStore& heads) {
  const std::vector<int> targets = masked_targets(batch);
  return cross_entropy(mcp_logits(tape, outputs, batch, mode, heads), targets);
}

MaskedPredictionReport masked_prediction_accuracy(DualChannelModel& model, std::span<const UnitSequence> seqs,
                                                  const UnitVocab& vocab, TaskMode mode, double mask_prob,
                                                  std::uint64_t seed) {
  MaskedPredictionReport report;
  std::map<int, std::size_t> counts;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const MaskedBatch masked = mask_contextual(seqs.subspan(i, 1), vocab, mask_prob,
                                               derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    Tape tape(false);
    const DualChannelOutputs out = model.forward(tape, masked.sequences[0]);
    const Var logits = mcp_logits(tape, std::span<const DualChannelOutputs>(&out, 1), masked, mode, model.params());
    const auto& targets = masked.original_ids[0];
    for (std::size_t r = 0; r < targets.size(); ++r) {
      Eigen::Index best = 0;
      logits.value().row(static_cast<Eigen::Index>(r)).maxCoeff(&best);
      report.correct += best == targets[r] ? 1 : 0;
      ++counts[targets[r]];
    }
    report.n_masked += targets.size();
  }
  if (report.n_masked == 0) throw InvalidInput("no masked positions to score");
  std::size_t top = 0;
  for (const auto& [id, n] : counts) top = std::max(top, n);
  report.accuracy = static_cast<double>(report.correct) / static_cast<double>(report.n_masked);
  report.unigram_accuracy = static_cast<double>(top) / static_cast<double>(report.n_masked);
  return report;
}

Var mcr_loss(Tape& tape, std::span<const DualChannelOutputs> outputs, const MaskedBatch& batch, ParamStore& heads) {
  check_batch(outputs, batch);
  std::vector<const Matrix*> targets;
  Eigen::Index rows = 0, cols = -1;
  for (std::size_t s = 0; s < batch.masked_positions.size(); ++s) {
    if (batch.masked_positions[s].empty()) continue;
    const Matrix& v = batch.original_vectors[s];
    if (v.rows() != static_cast<Eigen::Index>(batch.masked_positions[s].size())) {
      throw InvalidInput("MCR needs codebook vectors for every masked position");
    }
    cols = v.cols();
    rows += v.rows();
    targets.push_back(&v);
  }
  Matrix target(rows, cols);
  Eigen::Index r = 0;
  for (const Matrix* m : targets) {
    target.middleRows(r, m->rows()) = *m;
    r += m->rows();
  }
  return l1_loss(head(tape, gather_masked(outputs, batch, false), heads, "head.mcr"), target);
}

LossTerms total_loss(Tape& tape, std::span<const DualChannelOutputs> outputs, const MaskedBatch& batch, TaskMode mode,
                     ParamStore& heads) {
  LossTerms terms;
  terms.mcp = mcp_loss(tape, outputs, batch, mode, heads);
  if (mode == TaskMode::mcr_and_mcp) {
    terms.mcr = mcr_loss(tape, outputs, batch, heads);
    terms.total = add(terms.mcp, terms.mcr);
  } else {
    terms.total = terms.mcp;
  }
  return terms;
}

double learning_rate(int step, int warmup_steps, double peak_lr) {
  if (step <= 0) return 0.0;
  if (warmup_steps <= 0) return peak_lr;
  if (step <= warmup_steps) return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  return peak_lr * std::sqrt(static_cast<double>(warmup_steps) / static_cast<double>(step));
}

void AdamW::step(ParamStore& params, double lr, const std::function<bool(const Parameter&)>& filter) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  for (Parameter& p : params.all()) {
    if (filter && !filter(p)) continue;
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
    auto [it, fresh] = state_.try_emplace(p.name);
    Moments& mo = it->second;
    if (fresh || mo.m.rows() != p.value.rows() || mo.m.cols() != p.value.cols()) {
      mo.m = Matrix::Zero(p.value.rows(), p.value.cols());
      mo.v = Matrix::Zero(p.value.rows(), p.value.cols());
    }
    mo.m = beta1_ * mo.m + (1.0 - beta1_) * p.grad;
    mo.v = beta2_ * mo.v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    const bool decay = p.name.ends_with(".w") || p.name.starts_with("embed.");
    if (decay && weight_decay_ > 0.0) p.value *= (1.0 - lr * weight_decay_);
    p.value.array() -= lr * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + eps_);
  }
}

void write_loss_trace(std::ostream& out, std::span<const LossRecord> trace) {
  out << "step,lr,mcp,mcr,total\n";
  char buf[160];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", r.step, r.lr, r.mcp, r.mcr, r.total);
    out << buf;
  }
}

TrainResult train(DualChannelModel& model, std::span<const UnitSequence> corpus, const UnitVocab& vocab,
                  const TrainConfig& config, const Codebook* ctx_codebook,
                  const std::function<void(const LossRecord&)>& on_step) {
  config.validate();
  if (corpus.empty()) throw InvalidInput("training corpus is empty");
  if (vocab.ctx_vocab_size() != model.config().ctx_vocab || vocab.phon_vocab_size() != model.config().phon_vocab) {
    throw InvalidInput("unit vocabulary does not match the model vocabulary");
  }
  if (config.task_mode == TaskMode::mcr_and_mcp && ctx_codebook == nullptr) {
    throw InvalidInput("MCR needs the contextual codebook");
  }
  add_pretraining_heads(model, config.task_mode, ctx_codebook != nullptr ? static_cast<int>(ctx_codebook->dim()) : 0,
                        config.seed);

  std::mt19937_64 order_rng(derive_seed(config.seed, {0x0de7}));
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), order_rng);
  std::size_t cursor = 0;

  AdamW opt(config.beta1, config.beta2, config.adam_eps, config.weight_decay);
  TrainResult result;
  result.trace.reserve(static_cast<std::size_t>(config.max_steps));
  std::vector<UnitSequence> batch;
  for (int step = 1; step <= config.max_steps; ++step) {
    batch.clear();
    while (static_cast<int>(batch.size()) < config.batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      batch.push_back(corpus[order[cursor++]]);
    }
    const MaskedBatch masked = mask_contextual(batch, vocab, config.mask_prob,
                                               derive_seed(config.seed, {0x3a5c, static_cast<std::uint64_t>(step)}),
                                               ctx_codebook);
    std::mt19937_64 drop_rng(derive_seed(config.seed, {0xd40b, static_cast<std::uint64_t>(step)}));
    LossRecord rec;
    {
      Tape tape;
      const ForwardOptions opts{true, &drop_rng};
      const auto outputs = model.forward_batch(tape, masked.sequences, opts);
      const LossTerms terms = total_loss(tape, outputs, masked, config.task_mode, model.params());
      rec.step = step;
      rec.mcp = terms.mcp.value()(0, 0);
      rec.mcr = terms.mcr.valid() ? terms.mcr.value()(0, 0) : 0.0;
      rec.total = terms.total.value()(0, 0);
      if (!std::isfinite(rec.total)) {
        throw DivergenceError("non-finite loss at step " + std::to_string(step) + " (mcp " + std::to_string(rec.mcp) +
                              ", mcr " + std::to_string(rec.mcr) + ")");
      }
      model.params().zero_grad();
      tape.backward(terms.total);
    }
    rec.lr = learning_rate(step, config.warmup_steps, config.peak_lr);
    opt.step(model.params(), rec.lr);
    result.trace.push_back(rec);
    if (on_step) on_step(rec);
  }
  return result;
}

TrainedModel train_new(std::span<const UnitSequence> corpus, const UnitVocab& vocab, const TrainConfig& config,
                       const ModelConfig& model_config, const Codebook* ctx_codebook) {
  TrainedModel out{DualChannelModel(model_config, derive_seed(config.seed, {0x1417})), {}};
  out.result = train(out.model, corpus, vocab, config, ctx_codebook);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Var cls_logits(Tape& tape, DualChannelModel& model, std::span<const DualChannelOutputs> outputs) {
  std::vector<Var> rows;
  rows.reserve(outputs.size());
  const int zero = 0;
  for (const auto& o : outputs) rows.push_back(gather_rows(o.final_layer().ctx, std::span<const int>(&zero, 1)));
  return head(tape, concat_rows(rows), model.params(), "head.intent");
}

}  // namespace

FinetuneResult finetune_intent(DualChannelModel& model, std::span<const LabeledSequence> train_set,
                               const FinetuneConfig& config) {
  if (train_set.empty()) throw InvalidInput("fine-tuning set is empty");
  if (config.batch_size < 1 || config.steps < 0) throw InvalidInput("bad fine-tuning budget");
  FinetuneResult result;
  {
    std::set<std::string> labels;
    for (const auto& ex : train_set) labels.insert(ex.label);
    result.labels.assign(labels.begin(), labels.end());
  }
  std::map<std::string, int, std::less<>> label_index;
  for (std::size_t i = 0; i < result.labels.size(); ++i) label_index[result.labels[i]] = static_cast<int>(i);

  std::mt19937_64 head_rng(derive_seed(config.seed, {0x17e7}));
  ensure_linear(model.params(), "head.intent", model.config().d_model, static_cast<Eigen::Index>(result.labels.size()),
                head_rng, /*reset=*/true);

  std::mt19937_64 order_rng(derive_seed(config.seed, {0x0de8}));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), order_rng);
  std::size_t cursor = 0;

  // Only the classifier and (optionally) the encoder move; other task heads stay put.
  ParamStore& store = model.params();
  auto trainable = [&](const Parameter& p) {
    if (p.name.starts_with("head.")) return p.name.starts_with("head.intent.");
    return config.train_encoder;
  };
  AdamW opt(0.9, 0.999, 1e-8, config.weight_decay);
  std::vector<UnitSequence> batch;
  std::vector<int> targets;
  for (int step = 1; step <= config.steps; ++step) {
    batch.clear();
    targets.clear();
    while (static_cast<int>(batch.size()) < config.batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      const auto& ex = train_set[order[cursor++]];
      batch.push_back(ex.seq);
      targets.push_back(label_index.at(ex.label));
    }
    std::mt19937_64 drop_rng(derive_seed(config.seed, {0xd40c, static_cast<std::uint64_t>(step)}));
    {
      Tape tape;
      const auto outputs = model.forward_batch(tape, batch, ForwardOptions{true, &drop_rng});
      Var loss = cross_entropy(cls_logits(tape, model, outputs), targets);
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) throw DivergenceError("non-finite fine-tuning loss at step " + std::to_string(step));
      result.loss_trace.push_back(value);
      store.zero_grad();
      tape.backward(loss);
    }
    opt.step(store, learning_rate(step, config.warmup_steps, config.peak_lr), trainable);
  }
  return result;
}

std::vector<int> predict_intents(DualChannelModel& model, std::span<const LabeledSequence> data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& ex : data) {
    Tape tape(false);
    const DualChannelOutputs o = model.forward(tape, ex.seq);
    Var logits = cls_logits(tape, model, std::span<const DualChannelOutputs>(&o, 1));
    Eigen::Index best = 0;
    logits.value().row(0).maxCoeff(&best);
    out.push_back(static_cast<int>(best));
  }
  return out;
}

}  // namespace dcslm
