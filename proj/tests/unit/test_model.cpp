#include "dcslm/errors.hpp"
#include "dcslm/model.hpp"

#include "../support/gradcheck.hpp"
#include "../support/reference_model.hpp"
#include "doctest.h"

#include <random>

using namespace dcslm;
using dcslm::testing::gradcheck;

namespace {

const UnitVocab kVocab{6, 4};

ModelConfig small_config(int layers = 2) {
  ModelConfig c;
  c.n_layers = layers;
  c.d_model = 8;
  c.n_heads = 2;
  c.ffn_dim = 12;
  c.ctx_vocab = kVocab.ctx_vocab_size();
  c.phon_vocab = kVocab.phon_vocab_size();
  c.max_positions = 16;
  c.dropout = 0.0;
  return c;
}

UnitSequence example() { return finalize_sequence(UnitSequence{{3, 1, 4, 0}, {{1, 2}, {0}, {3, 1, 2}, {2}}}, kVocab); }

// Random N(0, 0.5) values everywhere so zero-initialised biases and unit
// gains do not hide wiring mistakes.
void randomize(DualChannelModel& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& p : m.params().all()) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = n(rng);
  }
}

double max_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

Matrix weights_like(const Matrix& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix w(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
  return w;
}

}  // namespace

TEST_CASE("forward pass matches the plain-matrix reference") {
  for (bool interaction : {true, false}) {
    for (ModelMode mode : {ModelMode::dual, ModelMode::single_channel_baseline}) {
      ModelConfig c = small_config(3);
      c.interaction = interaction;
      c.mode = mode;
      DualChannelModel m(c, 11);
      randomize(m, 12);
      const UnitSequence seq = example();
      const HiddenStates got = encode(m, seq);
      const HiddenStates want = testing::ReferenceModel(c, m.params()).forward(seq);
      REQUIRE(got.ctx.size() == 4);
      REQUIRE(got.phon.size() == (mode == ModelMode::dual ? 4u : 0u));
      for (std::size_t l = 0; l < got.ctx.size(); ++l) {
        CHECK(got.ctx[l].rows() == 6);
        CHECK(got.ctx[l].cols() == 8);
        CHECK(max_diff(got.ctx[l], want.ctx[l]) < 1e-10);
      }
      for (std::size_t l = 0; l < got.phon.size(); ++l) {
        CHECK(got.phon[l].rows() == 6);
        CHECK(max_diff(got.phon[l], want.phon[l]) < 1e-10);
      }
    }
  }
}

TEST_CASE("channel inputs") {
  DualChannelModel m(small_config(0), 3);
  randomize(m, 4);
  const UnitSequence seq = example();
  const HiddenStates hs = encode(m, seq);
  REQUIRE(hs.ctx.size() == 1);
  const Matrix& ce = m.params().get("embed.ctx").value;
  const Matrix& pe = m.params().get("embed.pos").value;
  for (std::size_t t = 0; t < seq.ctx.size(); ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    CHECK(max_diff(hs.ctx[0].row(ti), ce.row(seq.ctx[t]) + pe.row(ti)) < 1e-15);
  }

  SUBCASE("phonetic channel has no position term") {
    m.params().get("embed.pos").value.setZero();
    const Matrix without = encode(m, seq).phon[0];
    CHECK(max_diff(hs.phon[0], without) == 0.0);
  }
  SUBCASE("zero phonetic embeddings and GRU biases give a zero phonetic channel") {
    m.params().get("embed.phon").value.setZero();
    for (const char* dir : {"fwd", "bwd"}) {
      m.params().get(std::string("phon_enc.") + dir + ".b_ih").value.setZero();
      m.params().get(std::string("phon_enc.") + dir + ".b_hh").value.setZero();
    }
    CHECK(encode(m, seq).phon[0].cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("group summary uses the forward state at the last unit and the backward state at the first") {
    // A group's forward half only sees units up to and including its last
    // unit: changing a later group leaves it alone.
    UnitSequence other = seq;
    other.phon[4] = {0, 1};
    const Matrix a = hs.phon[0], b = encode(m, other).phon[0];
    CHECK(max_diff(a.topLeftCorner(4, 4), b.topLeftCorner(4, 4)) == 0.0);
    CHECK(max_diff(a.row(4).head(4), b.row(4).head(4)) > 1e-6);
    CHECK(max_diff(a.bottomRightCorner(1, 4), b.bottomRightCorner(1, 4)) == 0.0);
  }
}

TEST_CASE("both channels share one encoder stack and attend only within themselves") {
  ModelConfig c = small_config(1);
  DualChannelModel m(c, 5);
  randomize(m, 6);
  Matrix x = weights_like(Matrix(5, 8), 8), y = weights_like(Matrix(5, 8), 9);
  const std::vector<char> valid(5, 1);

  Tape tape(false);
  auto [c1, p1] = m.dual_transformer_layer(tape, 0, tape.constant(x), tape.constant(x), valid);
  CHECK(max_diff(c1.value(), p1.value()) == 0.0);
  auto [c2, p2] = m.dual_transformer_layer(tape, 0, tape.constant(x), tape.constant(y), valid);
  CHECK(max_diff(c1.value(), c2.value()) == 0.0);
  CHECK(max_diff(m.transformer_block(tape, 0, tape.constant(y), valid).value(), p2.value()) == 0.0);
}

TEST_CASE("interaction with zero output projections is the identity") {
  ModelConfig c = small_config(1);
  DualChannelModel m(c, 5);
  randomize(m, 6);
  for (const char* n : {"layer0.inter.ctx_out.w", "layer0.inter.ctx_out.b", "layer0.inter.phon_out.w",
                        "layer0.inter.phon_out.b"}) {
    m.params().get(n).value.setZero();
  }
  const Matrix x = weights_like(Matrix(5, 8), 1), y = weights_like(Matrix(5, 8), 2);
  Tape tape(false);
  auto [a, b] = m.heterogeneous_interaction(tape, 0, tape.constant(x), tape.constant(y));
  CHECK(max_diff(a.value(), x) == 0.0);
  CHECK(max_diff(b.value(), y) == 0.0);

  // Switching the interaction off is the same as zeroing its output.
  ModelConfig off = c;
  off.interaction = false;
  ParamStore kept;
  for (const auto& p : m.params().all()) {
    if (p.name.find(".inter.") == std::string::npos) kept.add(p.name, p.value);
  }
  DualChannelModel plain(off, std::move(kept));
  const UnitSequence seq = example();
  const HiddenStates h1 = encode(m, seq), h2 = encode(plain, seq);
  CHECK(max_diff(h1.ctx.back(), h2.ctx.back()) < 1e-14);
  CHECK(max_diff(h1.phon.back(), h2.phon.back()) < 1e-14);
}

TEST_CASE("interaction mixes neighbouring positions only") {
  ModelConfig c = small_config(1);
  DualChannelModel m(c, 5);
  randomize(m, 6);
  const Matrix x = weights_like(Matrix(7, 8), 1), y = weights_like(Matrix(7, 8), 2);
  Matrix y2 = y;
  y2.row(0).array() += 1.0;
  Tape tape(false);
  auto [a, b] = m.heterogeneous_interaction(tape, 0, tape.constant(x), tape.constant(y));
  auto [a2, b2] = m.heterogeneous_interaction(tape, 0, tape.constant(x), tape.constant(y2));
  // Kernel 3: the change at position 0 reaches positions 0 and 1 of both channels.
  CHECK(max_diff(a.value().row(1), a2.value().row(1)) > 1e-6);
  CHECK(max_diff(a.value().bottomRows(5), a2.value().bottomRows(5)) == 0.0);
  CHECK(max_diff(b.value().bottomRows(5), b2.value().bottomRows(5)) == 0.0);
}

TEST_CASE("padding positions are invisible without interaction") {
  ModelConfig c = small_config(2);
  c.interaction = false;
  DualChannelModel m(c, 5);
  randomize(m, 6);
  const UnitSequence seq = example();
  UnitSequence padded = seq;
  for (int i = 0; i < 3; ++i) {
    padded.ctx.push_back(kVocab.pad_ctx());
    padded.phon.push_back({kVocab.pad_phon()});
  }
  const auto mask = m.key_mask(padded);
  CHECK(std::count(mask.begin(), mask.end(), 0) == 3);
  const HiddenStates a = encode(m, seq), b = encode(m, padded);
  CHECK(max_diff(a.ctx.back(), b.ctx.back().topRows(6)) < 1e-12);
}

TEST_CASE("batch entries are independent") {
  DualChannelModel m(small_config(2), 5);
  randomize(m, 6);
  const UnitSequence s1 = example();
  const UnitSequence s2 = finalize_sequence(UnitSequence{{5, 2}, {{0, 3}, {1}}}, kVocab);
  const std::vector<UnitSequence> batch{s1, s2, s1};
  Tape tape(false);
  const auto outs = m.forward_batch(tape, batch);
  REQUIRE(outs.size() == 3);
  CHECK(max_diff(outs[0].final_layer().ctx.value(), encode(m, s1).ctx.back()) == 0.0);
  CHECK(max_diff(outs[1].final_layer().phon.value(), encode(m, s2).phon.back()) == 0.0);
  CHECK(max_diff(outs[2].final_layer().ctx.value(), outs[0].final_layer().ctx.value()) == 0.0);
}

TEST_CASE("parameter inventory") {
  for (ModelMode mode : {ModelMode::dual, ModelMode::single_channel_baseline}) {
    for (bool interaction : {true, false}) {
      ModelConfig c = small_config(3);
      c.mode = mode;
      c.interaction = interaction;
      c.conv_kernel = 5;
      DualChannelModel m(c, 1);
      CHECK(m.params().scalar_count() == testing::expected_parameter_count(c));
      CHECK(m.params().contains("embed.phon") == (mode == ModelMode::dual));
    }
  }
  ModelConfig full;
  full.ctx_vocab = 1024 + kNumSpecials;
  full.phon_vocab = 100 + kNumSpecials;
  DualChannelModel big(full, 1);
  CHECK(big.params().scalar_count() == testing::expected_parameter_count(full));
}

TEST_CASE("initialisation") {
  DualChannelModel a(small_config(2), 9), b(small_config(2), 9), other(small_config(2), 10);
  bool all_equal = true, any_diff = false;
  for (const auto& p : a.params().all()) {
    all_equal = all_equal && p.value == b.params().get(p.name).value;
    any_diff = any_diff || p.value != other.params().get(p.name).value;
  }
  CHECK(all_equal);
  CHECK(any_diff);
  CHECK(a.params().get("layer1.ln2.gamma").value.isOnes());
  CHECK(a.params().get("layer1.attn.q.b").value.isZero());
  const double bound = 1.0 / std::sqrt(4.0);
  CHECK(a.params().get("phon_enc.bwd.w_hh").value.cwiseAbs().maxCoeff() <= bound);
}

TEST_CASE("invalid configurations and inputs") {
  ModelConfig c = small_config();
  c.d_model = 6;
  c.n_heads = 2;  // 6 is not divisible by 2 * 2
  CHECK_THROWS_AS(DualChannelModel(c, 1), InvalidInput);
  c = small_config();
  c.conv_kernel = 4;
  CHECK_THROWS_AS(DualChannelModel(c, 1), InvalidInput);
  c = small_config();
  c.dropout = 1.0;
  CHECK_THROWS_AS(DualChannelModel(c, 1), InvalidInput);

  DualChannelModel m(small_config(), 1);
  UnitSequence bad = example();
  bad.ctx[1] = 99;
  CHECK_THROWS_AS(encode(m, bad), InvalidInput);
  UnitSequence longer{std::vector<int>(17, 1), std::vector<std::vector<int>>(17, {1})};
  CHECK_THROWS_AS(encode(m, longer), InvalidInput);

  ParamStore missing;
  missing.add("embed.ctx", Matrix::Zero(kVocab.ctx_vocab_size(), 8));
  CHECK_THROWS_AS(DualChannelModel(small_config(), std::move(missing)), InvalidInput);
}

TEST_CASE("dropout only acts in training mode") {
  ModelConfig c = small_config(2);
  c.dropout = 0.3;
  DualChannelModel m(c, 1);
  randomize(m, 2);
  const UnitSequence seq = example();
  CHECK(max_diff(encode(m, seq).ctx.back(), encode(m, seq).ctx.back()) == 0.0);
  Tape tape(false);
  ForwardOptions train{true, nullptr};
  CHECK_THROWS_AS(m.forward(tape, seq, train), InvalidInput);
  std::mt19937_64 rng(3);
  train.rng = &rng;
  const Matrix dropped = m.forward(tape, seq, train).final_layer().ctx.value();
  CHECK(max_diff(dropped, encode(m, seq).ctx.back()) > 1e-6);
}

TEST_CASE("gradients of the full model match finite differences") {
  ModelConfig c = small_config(2);
  c.ffn_dim = 8;
  DualChannelModel m(c, 21);
  randomize(m, 22);
  const UnitSequence seq = example();
  const Matrix wc = weights_like(Matrix(6, 8), 23), wp = weights_like(Matrix(6, 8), 24);
  auto loss = [&](Tape& t) {
    const auto out = m.forward(t, seq);
    return add(sum_all(hadamard(out.final_layer().ctx, t.constant(wc))),
               sum_all(hadamard(out.final_layer().phon, t.constant(wp))));
  };
  // q.(k + b) shifts every score of a query by the same amount, so the key
  // bias has an exactly zero gradient; finite differences only see noise there.
  std::vector<Parameter*> params;
  std::size_t key_bias = 0;
  for (auto& p : m.params().all()) {
    if (p.name.ends_with("attn.k.b")) {
      key_bias += static_cast<std::size_t>(p.value.size());
    } else {
      params.push_back(&p);
    }
  }
  const auto res = gradcheck(params, loss);
  INFO(res.worst);
  CHECK(res.entries + key_bias == m.params().scalar_count());
  CHECK(res.max_rel_error < 1e-4);
  for (int l = 0; l < 2; ++l) {
    CHECK(m.params().get("layer" + std::to_string(l) + ".attn.k.b").grad.cwiseAbs().maxCoeff() < 1e-12);
  }
}
