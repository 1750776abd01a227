#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Leaves are either
// constants or trainable Parameters; calling backward() on a 1x1 result walks
// the tape in reverse and accumulates gradients into Parameter::grad.
// Everything is double precision so that finite-difference checks stay tight.

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dcslm {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

// Handle to a node on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  // With recording off no backward closures are stored; use for inference.
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Aliases p.value, which must not change while the tape is alive.
  Var parameter(Parameter& p);

  const Matrix& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.param != nullptr ? n.param->value : n.value;
  }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of the last backward() target w.r.t. v. Zero when v does not
  // influence the target.
  Matrix grad(Var v) const;
  bool has_grad(Var v) const { return nodes_[v.id].grad_ready; }

  // v must be 1x1.
  void backward(Var v);

  // Used by op implementations.
  Var push(Matrix value, std::initializer_list<Var> parents, BackwardFn fn);
  Var push(Matrix value, std::span<const Var> parents, BackwardFn fn);
  const Matrix& incoming(int id) const { return nodes_[id].grad; }
  Matrix& accumulate_target(int id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool grad_ready = false;
    bool needs_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  bool record_;
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations. Shapes are checked and mismatches throw std::invalid_argument.

Var matmul(Var a, Var b);
Var matmul_transposed(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var add_bias(Var x, Var bias);  // bias is 1 x cols, broadcast over rows
Var hadamard(Var a, Var b);
Var scale(Var x, double s);
Var sum_all(Var x);  // 1x1

Var gelu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);

// Row-wise layer normalisation with affine gamma/beta (1 x cols each).
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-12);

// Row gather; repeated indices accumulate in backward.
Var gather_rows(Var x, std::span<const int> rows);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var x, Eigen::Index start, Eigen::Index count);
Var slice_rows(Var x, Eigen::Index start, Eigen::Index count);

// Multi-head scaled dot-product attention. q, k, v are T x d and are split
// into n_heads column blocks. key_valid[j] == false removes key j from every
// query's softmax. At least one key must be valid.
Var multi_head_attention(Var q, Var k, Var v, int n_heads, std::span<const char> key_valid);

// Single-direction GRU over all rows of x (P x in), PyTorch gate layout
// [r | z | n] in the 3h columns of w_ih (in x 3h), w_hh (h x 3h), b_ih, b_hh.
// Initial state is zero. Returns P x h; row t is the state after consuming
// row t (for reverse, after consuming rows t..P-1).
Var gru(Var x, Var w_ih, Var w_hh, Var b_ih, Var b_hh, bool reverse);

// Stacks each row with its (kernel-1)/2 neighbours on either side (zero
// padded) into T x (kernel*cols), so a same-length 1D convolution over rows
// becomes a single matmul.
Var im2col_rows(Var x, int kernel);

// Inverted dropout. The mask is drawn from rng; p == 0 is the identity.
Var dropout(Var x, double p, std::mt19937_64& rng);

// Mean softmax cross entropy over rows; targets[i] indexes a column.
Var cross_entropy(Var logits, std::span<const int> targets);

// Mean absolute error over all entries against a constant target.
Var l1_loss(Var prediction, const Matrix& target);

}  // namespace dcslm
