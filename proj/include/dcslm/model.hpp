#pragma once

// Dual-channel transformer over merged contextual units and their phonetic
// groups.
//
//   contextual ids --embed + position--------------------------> ctx_0
//   phonetic ids ---embed--> BiGRU over the flat sequence --> per-group
//                             [fwd state @ last | bwd state @ first] -> phon_0
//
// Every layer applies one post-LN encoder block to each channel separately
// (same weights, no cross-channel attention) and then a heterogeneous
// interaction: both channels are projected, concatenated on the feature
// axis, mixed by a same-length 1D convolution over positions and split back
// into residual updates for each channel.

#include "dcslm/autograd.hpp"
#include "dcslm/unitize.hpp"

#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dcslm {

enum class ModelMode { dual, single_channel_baseline };

std::string_view to_string(ModelMode mode);
ModelMode parse_model_mode(std::string_view text);

struct ModelConfig {
  int n_layers = 7;
  int d_model = 512;
  int n_heads = 8;
  int ffn_dim = 2048;
  int ctx_vocab = 1024 + kNumSpecials;
  int phon_vocab = 100 + kNumSpecials;
  int conv_kernel = 3;
  double dropout = 0.1;
  int max_positions = 512;
  ModelMode mode = ModelMode::dual;
  // Off gives the "no heterogeneous interaction" ablation.
  bool interaction = true;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Named trainable tensors with stable addresses.
class ParamStore {
 public:
  Parameter& add(std::string name, Matrix init);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }

  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct LayerStates {
  Var ctx;   // T x d
  Var phon;  // T x d; invalid in single-channel mode
};

// layers[0] holds the channel inputs, layers[i] the output of layer i.
struct DualChannelOutputs {
  std::vector<LayerStates> layers;

  const LayerStates& final_layer() const { return layers.back(); }
};

struct ForwardOptions {
  bool training = false;          // enables dropout
  std::mt19937_64* rng = nullptr;  // required when training with dropout > 0
};

class DualChannelModel {
 public:
  // Fresh parameters: N(0, 0.02) weights and embeddings, zero biases, unit
  // layer-norm gains, U(-1/sqrt(h), 1/sqrt(h)) GRU weights.
  DualChannelModel(const ModelConfig& config, std::uint64_t seed);
  // Adopts existing parameters (for example from a checkpoint); validates
  // that every required tensor exists with the right shape.
  DualChannelModel(const ModelConfig& config, ParamStore params);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  struct Embedded {
    Var ctx;        // T x d, includes the position term
    Var phon_flat;  // P x d, one row per phonetic id in group order
  };
  Embedded embed_inputs(Tape& tape, const UnitSequence& seq);

  // group_sizes partitions the rows of phon_flat into contiguous groups.
  Var phonetic_encode(Tape& tape, Var phon_flat, std::span<const int> group_sizes);

  // key_valid[j] == 0 hides position j from attention in both channels.
  std::pair<Var, Var> dual_transformer_layer(Tape& tape, int layer, Var ctx, Var phon,
                                             std::span<const char> key_valid, const ForwardOptions& opts = {});
  Var transformer_block(Tape& tape, int layer, Var x, std::span<const char> key_valid,
                        const ForwardOptions& opts = {});

  std::pair<Var, Var> heterogeneous_interaction(Tape& tape, int layer, Var ctx, Var phon);

  DualChannelOutputs forward(Tape& tape, const UnitSequence& seq, const ForwardOptions& opts = {});
  std::vector<DualChannelOutputs> forward_batch(Tape& tape, std::span<const UnitSequence> batch,
                                                const ForwardOptions& opts = {});

  // Attention key mask for a sequence: PAD_ctx positions are hidden.
  std::vector<char> key_mask(const UnitSequence& seq) const;

 private:
  void init_parameters(std::uint64_t seed);
  void check_parameters() const;
  Var linear(Tape& tape, Var x, const std::string& prefix);

  ModelConfig config_;
  ParamStore params_;
};

// Hidden states as plain matrices; convenient for evaluation.
struct HiddenStates {
  std::vector<Matrix> ctx;
  std::vector<Matrix> phon;  // empty in single-channel mode
};
HiddenStates encode(DualChannelModel& model, const UnitSequence& seq);

}  // namespace dcslm
