#pragma once

// Masked pre-training objectives and optimisation.
//
//   MCP  cross entropy on masked contextual ids. The head reads
//        [ctx_final | phon_final] when MCP is the only task, phon_final when
//        it is paired with MCR, and ctx_final for the single-channel MLM
//        baseline.
//   MCR  L1 reconstruction of the masked units' codebook centroids from
//        ctx_final.
//   total = MCP (+ MCR), unweighted.

#include "dcslm/model.hpp"
#include "dcslm/unitize.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dcslm {

enum class TaskMode { mcp_only, mcr_and_mcp, mlm_baseline };

std::string_view to_string(TaskMode mode);
TaskMode parse_task_mode(std::string_view text);

struct TrainConfig {
  double mask_prob = 0.15;
  TaskMode task_mode = TaskMode::mcp_only;
  int batch_size = 16;
  int warmup_steps = 10000;
  double peak_lr = 1e-4;
  std::uint64_t seed = 0;
  int max_steps = 100000;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct MaskedBatch {
  std::vector<UnitSequence> sequences;          // contextual ids at masked positions replaced by MASK
  std::vector<std::vector<int>> masked_positions;
  std::vector<std::vector<int>> original_ids;
  std::vector<Matrix> original_vectors;  // per sequence, one centroid row per masked position

  std::size_t masked_count() const;
};

// Masks each non-special contextual position with probability mask_prob.
// If nothing was masked, one eligible position of the batch is forced.
// ctx_codebook, when given, supplies the MCR targets.
MaskedBatch mask_contextual(std::span<const UnitSequence> seqs, const UnitVocab& vocab, double mask_prob,
                            std::uint64_t seed, const Codebook* ctx_codebook = nullptr);

int mcp_head_input_dim(TaskMode mode, int d_model);

// Registers head.mcp.{w,b} (and head.mcr.{w,b} for mcr_and_mcp) in the
// model's parameter store; existing heads of the right shape are kept.
void add_pretraining_heads(DualChannelModel& model, TaskMode mode, int mcr_dim, std::uint64_t seed);

// MCP logits over the contextual vocabulary, one row per masked position.
Var mcp_logits(Tape& tape, std::span<const DualChannelOutputs> outputs, const MaskedBatch& batch, TaskMode mode,
               ParamStore& heads);
Var mcp_loss(Tape& tape, std::span<const DualChannelOutputs> outputs, const MaskedBatch& batch, TaskMode mode,
             ParamStore& heads);
Var mcr_loss(Tape& tape, std::span<const DualChannelOutputs> outputs, const MaskedBatch& batch, ParamStore& heads);

struct LossTerms {
  Var mcp;
  Var mcr;  // invalid unless mode == mcr_and_mcp
  Var total;
};
LossTerms total_loss(Tape& tape, std::span<const DualChannelOutputs> outputs, const MaskedBatch& batch, TaskMode mode,
                     ParamStore& heads);

struct MaskedPredictionReport {
  std::size_t n_masked = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  // Accuracy of always guessing the most frequent masked id of this very
  // set, an upper bound for any unigram guesser.
  double unigram_accuracy = 0.0;
};

// Masks each sequence independently (seeded per index) and scores argmax
// MCP predictions at the masked positions.
MaskedPredictionReport masked_prediction_accuracy(DualChannelModel& model, std::span<const UnitSequence> seqs,
                                                  const UnitVocab& vocab, TaskMode mode, double mask_prob,
                                                  std::uint64_t seed);

// Linear warm-up from 0 to peak over warmup_steps, then peak*sqrt(warmup/step).
double learning_rate(int step, int warmup_steps, double peak_lr);

// Adam with decoupled weight decay. Decay applies to weight matrices and
// embeddings (names ending in ".w" or starting with "embed."), not to
// biases or layer-norm parameters.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}
  // Parameters rejected by filter are left untouched.
  void step(ParamStore& params, double lr, const std::function<bool(const Parameter&)>& filter = {});
  int steps_taken() const { return t_; }

 private:
  struct Moments {
    Matrix m, v;
  };
  double beta1_, beta2_, eps_, weight_decay_;
  int t_ = 0;
  std::map<std::string, Moments, std::less<>> state_;
};

struct LossRecord {
  int step = 0;
  double lr = 0.0;
  double mcp = 0.0;
  double mcr = 0.0;
  double total = 0.0;
};

void write_loss_trace(std::ostream& out, std::span<const LossRecord> trace);

struct TrainResult {
  std::vector<LossRecord> trace;
};

// Trains model in place for config.max_steps steps on batches drawn from
// corpus (reshuffled each epoch). Throws DivergenceError on a non-finite
// loss. on_step, when set, is called after every optimiser step.
TrainResult train(DualChannelModel& model, std::span<const UnitSequence> corpus, const UnitVocab& vocab,
                  const TrainConfig& config, const Codebook* ctx_codebook = nullptr,
                  const std::function<void(const LossRecord&)>& on_step = {});

// Fresh model seeded from config.seed, with heads for config.task_mode.
struct TrainedModel {
  DualChannelModel model;
  TrainResult result;
};
TrainedModel train_new(std::span<const UnitSequence> corpus, const UnitVocab& vocab, const TrainConfig& config,
                       const ModelConfig& model_config, const Codebook* ctx_codebook = nullptr);

// ---------------------------------------------------------------------------
// Intent classification: a linear head over the final contextual state of
// the CLS position.

struct LabeledSequence {
  std::string id;
  UnitSequence seq;
  std::string label;
};

struct FinetuneConfig {
  int steps = 500;
  int batch_size = 16;
  double peak_lr = 1e-4;
  int warmup_steps = 50;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  bool train_encoder = true;
};

struct FinetuneResult {
  std::vector<std::string> labels;  // class index -> label
  std::vector<double> loss_trace;
};

// Adds (or resets) head.intent.{w,b} and trains it, plus the encoder when
// config.train_encoder is set.
FinetuneResult finetune_intent(DualChannelModel& model, std::span<const LabeledSequence> train_set,
                               const FinetuneConfig& config);

// Class index per sequence from the intent head.
std::vector<int> predict_intents(DualChannelModel& model, std::span<const LabeledSequence> data);

}  // namespace dcslm
