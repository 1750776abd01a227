#include "dcslm/model.hpp"

#include "dcslm/errors.hpp"

#include <cmath>

namespace dcslm {

std::string_view to_string(ModelMode mode) {
  return mode == ModelMode::dual ? "dual" : "single_channel_baseline";
}

ModelMode parse_model_mode(std::string_view text) {
  if (text == "dual") return ModelMode::dual;
  if (text == "single_channel_baseline" || text == "single") return ModelMode::single_channel_baseline;
  throw InvalidInput("unknown model mode '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  if (n_layers < 0) throw InvalidInput("n_layers must be >= 0");
  if (d_model < 2 || n_heads < 1) throw InvalidInput("d_model and n_heads must be positive");
  if (d_model % (2 * n_heads) != 0) throw InvalidInput("d_model must be divisible by 2 * n_heads");
  if (ffn_dim < 1) throw InvalidInput("ffn_dim must be positive");
  if (ctx_vocab <= kNumSpecials || phon_vocab <= kNumSpecials) throw InvalidInput("vocabularies must exceed the special ids");
  if (conv_kernel < 1 || conv_kernel % 2 == 0) throw InvalidInput("conv_kernel must be odd");
  if (dropout < 0.0 || dropout >= 1.0) throw InvalidInput("dropout must be in [0, 1)");
  if (max_positions < 2) throw InvalidInput("max_positions must be >= 2");
}

// ---------------------------------------------------------------------------

Parameter& ParamStore::add(std::string name, Matrix init) {
  if (index_.contains(name)) throw InvalidInput("duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  Parameter& p = params_.emplace_back();
  p.name = std::move(name);
  p.value = std::move(init);
  p.zero_grad();
  return p;
}

Parameter* ParamStore::find(std::string_view name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParamStore::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Parameter& ParamStore::get(std::string_view name) {
  Parameter* p = find(name);
  if (p == nullptr) throw InvalidInput("no parameter named '" + std::string(name) + "'");
  return *p;
}

const Parameter& ParamStore::get(std::string_view name) const {
  const Parameter* p = find(name);
  if (p == nullptr) throw InvalidInput("no parameter named '" + std::string(name) + "'");
  return *p;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---------------------------------------------------------------------------

namespace {

struct Shape {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
  enum Init { normal, zeros, ones, gru_uniform } init;
};

std::vector<Shape> parameter_shapes(const ModelConfig& c) {
  const Eigen::Index d = c.d_model;
  const Eigen::Index h = d / 2;
  std::vector<Shape> s;
  s.push_back({"embed.ctx", c.ctx_vocab, d, Shape::normal});
  s.push_back({"embed.pos", c.max_positions, d, Shape::normal});
  const bool dual = c.mode == ModelMode::dual;
  if (dual) {
    s.push_back({"embed.phon", c.phon_vocab, d, Shape::normal});
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string p = std::string("phon_enc.") + dir + ".";
      s.push_back({p + "w_ih", d, 3 * h, Shape::gru_uniform});
      s.push_back({p + "w_hh", h, 3 * h, Shape::gru_uniform});
      s.push_back({p + "b_ih", 1, 3 * h, Shape::gru_uniform});
      s.push_back({p + "b_hh", 1, 3 * h, Shape::gru_uniform});
    }
  }
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (const char* proj : {"attn.q", "attn.k", "attn.v", "attn.o"}) {
      s.push_back({p + proj + ".w", d, d, Shape::normal});
      s.push_back({p + proj + ".b", 1, d, Shape::zeros});
    }
    s.push_back({p + "ln1.gamma", 1, d, Shape::ones});
    s.push_back({p + "ln1.beta", 1, d, Shape::zeros});
    s.push_back({p + "ffn.in.w", d, c.ffn_dim, Shape::normal});
    s.push_back({p + "ffn.in.b", 1, c.ffn_dim, Shape::zeros});
    s.push_back({p + "ffn.out.w", c.ffn_dim, d, Shape::normal});
    s.push_back({p + "ffn.out.b", 1, d, Shape::zeros});
    s.push_back({p + "ln2.gamma", 1, d, Shape::ones});
    s.push_back({p + "ln2.beta", 1, d, Shape::zeros});
    if (dual && c.interaction) {
      s.push_back({p + "inter.ctx_in.w", d, d, Shape::normal});
      s.push_back({p + "inter.ctx_in.b", 1, d, Shape::zeros});
      s.push_back({p + "inter.phon_in.w", d, d, Shape::normal});
      s.push_back({p + "inter.phon_in.b", 1, d, Shape::zeros});
      s.push_back({p + "inter.conv.w", c.conv_kernel * 2 * d, 2 * d, Shape::normal});
      s.push_back({p + "inter.conv.b", 1, 2 * d, Shape::zeros});
      s.push_back({p + "inter.ctx_out.w", 2 * d, d, Shape::normal});
      s.push_back({p + "inter.ctx_out.b", 1, d, Shape::zeros});
      s.push_back({p + "inter.phon_out.w", 2 * d, d, Shape::normal});
      s.push_back({p + "inter.phon_out.b", 1, d, Shape::zeros});
    }
  }
  return s;
}

}  // namespace

DualChannelModel::DualChannelModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  init_parameters(seed);
}

DualChannelModel::DualChannelModel(const ModelConfig& config, ParamStore params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  check_parameters();
}

void DualChannelModel::init_parameters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config_.d_model / 2));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (const Shape& s : parameter_shapes(config_)) {
    Matrix m(s.rows, s.cols);
    switch (s.init) {
      case Shape::normal:
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
        break;
      case Shape::gru_uniform:
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng);
        break;
      case Shape::zeros:
        m.setZero();
        break;
      case Shape::ones:
        m.setOnes();
        break;
    }
    params_.add(s.name, std::move(m));
  }
}

void DualChannelModel::check_parameters() const {
  for (const Shape& s : parameter_shapes(config_)) {
    const Parameter* p = params_.find(s.name);
    if (p == nullptr) throw InvalidInput("missing parameter '" + s.name + "'");
    if (p->value.rows() != s.rows || p->value.cols() != s.cols) {
      throw InvalidInput("parameter '" + s.name + "' has shape " + std::to_string(p->value.rows()) + "x" +
                         std::to_string(p->value.cols()) + ", expected " + std::to_string(s.rows) + "x" +
                         std::to_string(s.cols));
    }
  }
}

Var DualChannelModel::linear(Tape& tape, Var x, const std::string& prefix) {
  Var w = tape.parameter(params_.get(prefix + ".w"));
  Var b = tape.parameter(params_.get(prefix + ".b"));
  return add_bias(matmul(x, w), b);
}

std::vector<char> DualChannelModel::key_mask(const UnitSequence& seq) const {
  const int pad = config_.ctx_vocab - kNumSpecials + 3;
  std::vector<char> valid(seq.ctx.size());
  for (std::size_t i = 0; i < seq.ctx.size(); ++i) valid[i] = seq.ctx[i] != pad;
  return valid;
}

DualChannelModel::Embedded DualChannelModel::embed_inputs(Tape& tape, const UnitSequence& seq) {
  const auto len = static_cast<int>(seq.ctx.size());
  if (len < 1) throw InvalidInput("cannot embed an empty sequence");
  if (len > config_.max_positions) {
    throw InvalidInput("sequence length " + std::to_string(len) + " exceeds max_positions " +
                       std::to_string(config_.max_positions));
  }
  if (seq.phon.size() != seq.ctx.size()) throw InvalidInput("contextual/phonetic group counts differ");
  for (int id : seq.ctx) {
    if (id < 0 || id >= config_.ctx_vocab) throw InvalidInput("contextual id " + std::to_string(id) + " out of vocabulary");
  }
  std::vector<int> positions(static_cast<std::size_t>(len));
  for (int i = 0; i < len; ++i) positions[static_cast<std::size_t>(i)] = i;

  Embedded out;
  Var ctx_table = tape.parameter(params_.get("embed.ctx"));
  Var pos_table = tape.parameter(params_.get("embed.pos"));
  out.ctx = add(gather_rows(ctx_table, seq.ctx), gather_rows(pos_table, positions));

  if (config_.mode == ModelMode::dual) {
    std::vector<int> flat;
    flat.reserve(seq.phonetic_size());
    for (const auto& g : seq.phon) {
      for (int id : g) {
        if (id < 0 || id >= config_.phon_vocab) {
          throw InvalidInput("phonetic id " + std::to_string(id) + " out of vocabulary");
        }
        flat.push_back(id);
      }
    }
    if (flat.empty()) throw InvalidInput("sequence has no phonetic units");
    out.phon_flat = gather_rows(tape.parameter(params_.get("embed.phon")), flat);
  }
  return out;
}

Var DualChannelModel::phonetic_encode(Tape& tape, Var phon_flat, std::span<const int> group_sizes) {
  if (config_.mode != ModelMode::dual) throw InvalidInput("phonetic encoder is disabled in single-channel mode");
  std::vector<int> first, last;
  int offset = 0;
  for (int size : group_sizes) {
    if (size < 1) throw InvalidInput("empty phonetic group");
    first.push_back(offset);
    last.push_back(offset + size - 1);
    offset += size;
  }
  if (offset != phon_flat.rows()) throw InvalidInput("phonetic groups do not cover the flattened sequence");

  auto run = [&](const char* dir, bool reverse) {
    const std::string p = std::string("phon_enc.") + dir + ".";
    return gru(phon_flat, tape.parameter(params_.get(p + "w_ih")), tape.parameter(params_.get(p + "w_hh")),
               tape.parameter(params_.get(p + "b_ih")), tape.parameter(params_.get(p + "b_hh")), reverse);
  };
  Var fwd = run("fwd", false);
  Var bwd = run("bwd", true);
  const std::array<Var, 2> parts{gather_rows(fwd, last), gather_rows(bwd, first)};
  return concat_cols(parts);
}

Var DualChannelModel::transformer_block(Tape& tape, int layer, Var x, std::span<const char> key_valid,
                                        const ForwardOptions& opts) {
  if (x.cols() != config_.d_model) throw InvalidInput("block input width differs from d_model");
  if (static_cast<Eigen::Index>(key_valid.size()) != x.rows()) throw InvalidInput("key mask length differs from sequence");
  const std::string p = "layer" + std::to_string(layer) + ".";
  const bool drop = opts.training && config_.dropout > 0.0;
  if (drop && opts.rng == nullptr) throw InvalidInput("dropout needs an rng");

  Var q = linear(tape, x, p + "attn.q");
  Var k = linear(tape, x, p + "attn.k");
  Var v = linear(tape, x, p + "attn.v");
  Var attn = linear(tape, multi_head_attention(q, k, v, config_.n_heads, key_valid), p + "attn.o");
  if (drop) attn = dropout(attn, config_.dropout, *opts.rng);
  Var x1 = layer_norm(add(x, attn), tape.parameter(params_.get(p + "ln1.gamma")),
                      tape.parameter(params_.get(p + "ln1.beta")));
  Var ff = linear(tape, gelu(linear(tape, x1, p + "ffn.in")), p + "ffn.out");
  if (drop) ff = dropout(ff, config_.dropout, *opts.rng);
  return layer_norm(add(x1, ff), tape.parameter(params_.get(p + "ln2.gamma")),
                    tape.parameter(params_.get(p + "ln2.beta")));
}

std::pair<Var, Var> DualChannelModel::dual_transformer_layer(Tape& tape, int layer, Var ctx, Var phon,
                                                             std::span<const char> key_valid,
                                                             const ForwardOptions& opts) {
  if (ctx.rows() != phon.rows() || ctx.cols() != phon.cols()) {
    throw InvalidInput("contextual and phonetic channel shapes differ");
  }
  Var ctx_out = transformer_block(tape, layer, ctx, key_valid, opts);
  Var phon_out = transformer_block(tape, layer, phon, key_valid, opts);
  return {ctx_out, phon_out};
}

std::pair<Var, Var> DualChannelModel::heterogeneous_interaction(Tape& tape, int layer, Var ctx, Var phon) {
  if (ctx.rows() != phon.rows() || ctx.cols() != phon.cols() || ctx.cols() != config_.d_model) {
    throw InvalidInput("interaction inputs must both be T x d_model");
  }
  const std::string p = "layer" + std::to_string(layer) + ".inter.";
  const std::array<Var, 2> parts{linear(tape, ctx, p + "ctx_in"), linear(tape, phon, p + "phon_in")};
  Var fused = linear(tape, im2col_rows(concat_cols(parts), config_.conv_kernel), p + "conv");
  return {add(ctx, linear(tape, fused, p + "ctx_out")), add(phon, linear(tape, fused, p + "phon_out"))};
}

DualChannelOutputs DualChannelModel::forward(Tape& tape, const UnitSequence& seq, const ForwardOptions& opts) {
  DualChannelOutputs out;
  Embedded emb = embed_inputs(tape, seq);
  const std::vector<char> valid = key_mask(seq);
  if (config_.mode == ModelMode::single_channel_baseline) {
    Var ctx = emb.ctx;
    out.layers.push_back({ctx, Var{}});
    for (int l = 0; l < config_.n_layers; ++l) {
      ctx = transformer_block(tape, l, ctx, valid, opts);
      out.layers.push_back({ctx, Var{}});
    }
    return out;
  }
  std::vector<int> sizes;
  sizes.reserve(seq.phon.size());
  for (const auto& g : seq.phon) sizes.push_back(static_cast<int>(g.size()));
  Var ctx = emb.ctx;
  Var phon = phonetic_encode(tape, emb.phon_flat, sizes);
  out.layers.push_back({ctx, phon});
  for (int l = 0; l < config_.n_layers; ++l) {
    std::tie(ctx, phon) = dual_transformer_layer(tape, l, ctx, phon, valid, opts);
    if (config_.interaction) std::tie(ctx, phon) = heterogeneous_interaction(tape, l, ctx, phon);
    out.layers.push_back({ctx, phon});
  }
  return out;
}

std::vector<DualChannelOutputs> DualChannelModel::forward_batch(Tape& tape, std::span<const UnitSequence> batch,
                                                                const ForwardOptions& opts) {
  std::vector<DualChannelOutputs> out;
  out.reserve(batch.size());
  for (const auto& seq : batch) out.push_back(forward(tape, seq, opts));
  return out;
}

HiddenStates encode(DualChannelModel& model, const UnitSequence& seq) {
  Tape tape(false);
  DualChannelOutputs out = model.forward(tape, seq);
  HiddenStates hs;
  for (const auto& layer : out.layers) {
    hs.ctx.push_back(layer.ctx.value());
    if (layer.phon.valid()) hs.phon.push_back(layer.phon.value());
  }
  return hs;
}

}  // namespace dcslm
