#include "dcslm/autograd.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace dcslm {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()) + ")");
  }
}

Tape& tape_of(Var a) {
  require(a.valid(), "operation on an invalid Var");
  return *a.tape;
}

}  // namespace

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::constant(Matrix value) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(Parameter& p) {
  Node& n = nodes_.emplace_back();
  n.needs_grad = record_;
  n.param = &p;
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
  return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
              std::move(fn));
}

Var Tape::push(Matrix value, std::span<const Var> parents, BackwardFn fn) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  if (record_) {
    for (const Var& p : parents) {
      if (nodes_[p.id].needs_grad) {
        n.needs_grad = true;
        break;
      }
    }
    if (n.needs_grad) n.backward = std::move(fn);
  }
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::accumulate_target(int id) {
  Node& n = nodes_[id];
  if (!n.grad_ready) {
    const Matrix& v = value(Var{this, id});
    n.grad.setZero(v.rows(), v.cols());
    n.grad_ready = true;
  }
  return n.grad;
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad_ready) return n.grad;
  return Matrix::Zero(value(v).rows(), value(v).cols());
}

void Tape::backward(Var v) {
  if (!record_) throw std::logic_error("backward on a non-recording tape");
  if (v.rows() != 1 || v.cols() != 1) throw std::invalid_argument("backward needs a 1x1 value");
  for (Node& n : nodes_) {
    n.grad_ready = false;
    n.grad.resize(0, 0);
  }
  accumulate_target(v.id)(0, 0) = 1.0;
  for (int id = v.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.grad_ready || !n.needs_grad) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols()) {
        n.param->zero_grad();
      }
      n.param->grad += n.grad;
    }
  }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  return t.push(a.value() * b.value(), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.incoming(self);
    if (t.needs_grad(a.id)) t.accumulate_target(a.id).noalias() += g * b.value().transpose();
    if (t.needs_grad(b.id)) t.accumulate_target(b.id).noalias() += a.value().transpose() * g;
  });
}

Var matmul_transposed(Var a, Var b) {
  Tape& t = tape_of(a);
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_transposed: inner dimensions differ");
  return t.push(a.value() * b.value().transpose(), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.incoming(self);
    if (t.needs_grad(a.id)) t.accumulate_target(a.id).noalias() += g * b.value();
    if (t.needs_grad(b.id)) t.accumulate_target(b.id).noalias() += g.transpose() * a.value();
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  return tape_of(a).push(a.value() + b.value(), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.incoming(self);
    if (t.needs_grad(a.id)) t.accumulate_target(a.id) += g;
    if (t.needs_grad(b.id)) t.accumulate_target(b.id) += g;
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  return tape_of(a).push(a.value() - b.value(), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.incoming(self);
    if (t.needs_grad(a.id)) t.accumulate_target(a.id) += g;
    if (t.needs_grad(b.id)) t.accumulate_target(b.id) -= g;
  });
}

Var add_bias(Var x, Var bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw std::invalid_argument("add_bias: bias must be 1 x cols");
  }
  Matrix out = x.value();
  out.rowwise() += bias.value().row(0);
  return tape_of(x).push(std::move(out), {x, bias}, [x, bias](Tape& t, int self) {
    const Matrix& g = t.incoming(self);
    if (t.needs_grad(x.id)) t.accumulate_target(x.id) += g;
    if (t.needs_grad(bias.id)) t.accumulate_target(bias.id) += g.colwise().sum();
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape(a, b, "hadamard");
  return tape_of(a).push(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.incoming(self);
    if (t.needs_grad(a.id)) t.accumulate_target(a.id) += g.cwiseProduct(b.value());
    if (t.needs_grad(b.id)) t.accumulate_target(b.id) += g.cwiseProduct(a.value());
  });
}

Var scale(Var x, double s) {
  return tape_of(x).push(x.value() * s, {x}, [x, s](Tape& t, int self) {
    t.accumulate_target(x.id) += t.incoming(self) * s;
  });
}

Var sum_all(Var x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return tape_of(x).push(std::move(out), {x}, [x](Tape& t, int self) {
    t.accumulate_target(x.id).array() += t.incoming(self)(0, 0);
  });
}

Var gelu(Var x) {
  const Matrix& v = x.value();
  Matrix out = v.unaryExpr([](double z) { return 0.5 * z * (1.0 + std::erf(z / std::numbers::sqrt2)); });
  return tape_of(x).push(std::move(out), {x}, [x](Tape& t, int self) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix d = x.value().unaryExpr([inv_sqrt_2pi](double z) {
      return 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2)) + z * std::exp(-0.5 * z * z) * inv_sqrt_2pi;
    });
    t.accumulate_target(x.id) += t.incoming(self).cwiseProduct(d);
  });
}

Var sigmoid(Var x) {
  Matrix out = x.value().unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
  return tape_of(x).push(std::move(out), {x}, [x](Tape& t, int self) {
    const Matrix& s = t.value(Var{&t, self});
    t.accumulate_target(x.id) += t.incoming(self).cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()));
  });
}

Var tanh(Var x) {
  Matrix out = x.value().array().tanh().matrix();
  return tape_of(x).push(std::move(out), {x}, [x](Tape& t, int self) {
    const Matrix& s = t.value(Var{&t, self});
    t.accumulate_target(x.id) += t.incoming(self).cwiseProduct((1.0 - s.array().square()).matrix());
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Eigen::Index n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
    throw std::invalid_argument("layer_norm: gamma/beta must be 1 x cols");
  }
  const Matrix& v = x.value();
  Matrix xhat(v.rows(), n);
  Vector inv_std(v.rows());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double mean = v.row(r).mean();
    const double var = (v.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (v.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = xhat;
  out.array().rowwise() *= gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return tape_of(x).push(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, int self) {
        const Matrix& g = t.incoming(self);
        if (t.needs_grad(gamma.id)) t.accumulate_target(gamma.id) += g.cwiseProduct(xhat).colwise().sum();
        if (t.needs_grad(beta.id)) t.accumulate_target(beta.id) += g.colwise().sum();
        if (t.needs_grad(x.id)) {
          Matrix dxhat = g;
          dxhat.array().rowwise() *= gamma.value().row(0).array();
          Matrix& dx = t.accumulate_target(x.id);
          for (Eigen::Index r = 0; r < g.rows(); ++r) {
            const double m1 = dxhat.row(r).mean();
            const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
            dx.row(r).array() += inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
          }
        }
      });
}

Var gather_rows(Var x, std::span<const int> rows) {
  const Matrix& v = x.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), v.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= v.rows()) throw std::out_of_range("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = v.row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return tape_of(x).push(std::move(out), {x}, [x, idx = std::move(idx)](Tape& t, int self) {
    const Matrix& g = t.incoming(self);
    Matrix& dx = t.accumulate_target(x.id);
    for (std::size_t i = 0; i < idx.size(); ++i) dx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape->push(std::move(out), parts, [ps](Tape& t, int self) {
    const Matrix& g = t.incoming(self);
    Eigen::Index c = 0;
    for (const Var& p : ps) {
      if (t.needs_grad(p.id)) t.accumulate_target(p.id) += g.middleCols(c, p.cols());
      c += p.cols();
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape->push(std::move(out), parts, [ps](Tape& t, int self) {
    const Matrix& g = t.incoming(self);
    Eigen::Index r = 0;
    for (const Var& p : ps) {
      if (t.needs_grad(p.id)) t.accumulate_target(p.id) += g.middleRows(r, p.rows());
      r += p.rows();
    }
  });
}

Var slice_cols(Var x, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.cols(), "slice_cols: out of range");
  return tape_of(x).push(x.value().middleCols(start, count), {x}, [x, start, count](Tape& t, int self) {
    t.accumulate_target(x.id).middleCols(start, count) += t.incoming(self);
  });
}

Var slice_rows(Var x, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.rows(), "slice_rows: out of range");
  return tape_of(x).push(x.value().middleRows(start, count), {x}, [x, start, count](Tape& t, int self) {
    t.accumulate_target(x.id).middleRows(start, count) += t.incoming(self);
  });
}

Var multi_head_attention(Var q, Var k, Var v, int n_heads, std::span<const char> key_valid) {
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  const Eigen::Index len = q.rows();
  const Eigen::Index d = q.cols();
  require(n_heads > 0 && d % n_heads == 0, "attention: d not divisible by heads");
  require(static_cast<Eigen::Index>(key_valid.size()) == len, "attention: mask length differs from sequence");
  bool any_valid = false;
  for (char c : key_valid) any_valid = any_valid || c;
  require(any_valid, "attention: every key is masked");

  const Eigen::Index dh = d / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Matrix> probs(static_cast<std::size_t>(n_heads));
  Matrix out(len, d);
  for (int h = 0; h < n_heads; ++h) {
    const auto qh = q.value().middleCols(h * dh, dh);
    const auto kh = k.value().middleCols(h * dh, dh);
    const auto vh = v.value().middleCols(h * dh, dh);
    Matrix s = (qh * kh.transpose()) * inv_scale;
    for (Eigen::Index i = 0; i < len; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < len; ++j) {
        if (key_valid[static_cast<std::size_t>(j)]) mx = std::max(mx, s(i, j));
      }
      double total = 0.0;
      for (Eigen::Index j = 0; j < len; ++j) {
        s(i, j) = key_valid[static_cast<std::size_t>(j)] ? std::exp(s(i, j) - mx) : 0.0;
        total += s(i, j);
      }
      s.row(i) /= total;
    }
    out.middleCols(h * dh, dh).noalias() = s * vh;
    probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  return tape_of(q).push(
      std::move(out), {q, k, v},
      [q, k, v, n_heads, dh, inv_scale, probs = std::move(probs)](Tape& t, int self) {
        const Matrix& g = t.incoming(self);
        for (int h = 0; h < n_heads; ++h) {
          const Matrix& p = probs[static_cast<std::size_t>(h)];
          const auto gh = g.middleCols(h * dh, dh);
          const auto qh = q.value().middleCols(h * dh, dh);
          const auto kh = k.value().middleCols(h * dh, dh);
          const auto vh = v.value().middleCols(h * dh, dh);
          if (t.needs_grad(v.id)) t.accumulate_target(v.id).middleCols(h * dh, dh).noalias() += p.transpose() * gh;
          Matrix dp = gh * vh.transpose();
          Vector row_dot = dp.cwiseProduct(p).rowwise().sum();
          Matrix ds = p.cwiseProduct((dp.colwise() - row_dot));
          ds *= inv_scale;
          if (t.needs_grad(q.id)) t.accumulate_target(q.id).middleCols(h * dh, dh).noalias() += ds * kh;
          if (t.needs_grad(k.id)) t.accumulate_target(k.id).middleCols(h * dh, dh).noalias() += ds.transpose() * qh;
        }
      });
}

Var gru(Var x, Var w_ih, Var w_hh, Var b_ih, Var b_hh, bool reverse) {
  const Eigen::Index steps = x.rows();
  const Eigen::Index h = w_hh.rows();
  require(w_ih.rows() == x.cols() && w_ih.cols() == 3 * h, "gru: w_ih must be in x 3h");
  require(w_hh.cols() == 3 * h, "gru: w_hh must be h x 3h");
  require(b_ih.rows() == 1 && b_ih.cols() == 3 * h, "gru: b_ih must be 1 x 3h");
  require(b_hh.rows() == 1 && b_hh.cols() == 3 * h, "gru: b_hh must be 1 x 3h");

  Matrix xp = x.value() * w_ih.value();
  xp.rowwise() += b_ih.value().row(0);

  // Per-step caches, indexed by row of x.
  Matrix r(steps, h), z(steps, h), n(steps, h), hn(steps, h), prev(steps, h), out(steps, h);
  Matrix state = Matrix::Zero(1, h);
  for (Eigen::Index s = 0; s < steps; ++s) {
    const Eigen::Index row = reverse ? steps - 1 - s : s;
    Matrix hp = state * w_hh.value();
    hp += b_hh.value();
    for (Eigen::Index j = 0; j < h; ++j) {
      const double rj = 1.0 / (1.0 + std::exp(-(xp(row, j) + hp(0, j))));
      const double zj = 1.0 / (1.0 + std::exp(-(xp(row, h + j) + hp(0, h + j))));
      const double nj = std::tanh(xp(row, 2 * h + j) + rj * hp(0, 2 * h + j));
      r(row, j) = rj;
      z(row, j) = zj;
      n(row, j) = nj;
      hn(row, j) = hp(0, 2 * h + j);
      prev(row, j) = state(0, j);
      out(row, j) = (1.0 - zj) * nj + zj * state(0, j);
    }
    state = out.row(row);
  }

  return tape_of(x).push(
      out, {x, w_ih, w_hh, b_ih, b_hh},
      [x, w_ih, w_hh, b_ih, b_hh, reverse, r = std::move(r), z = std::move(z), n = std::move(n),
       hn = std::move(hn), prev = std::move(prev)](Tape& t, int self) {
        const Matrix& g = t.incoming(self);
        const Eigen::Index steps = g.rows();
        const Eigen::Index h = g.cols();
        Matrix dxp(steps, 3 * h);
        Matrix dhp_all(steps, 3 * h);
        Matrix carry = Matrix::Zero(1, h);
        for (Eigen::Index s = steps - 1; s >= 0; --s) {
          const Eigen::Index row = reverse ? steps - 1 - s : s;
          Matrix dh = g.row(row) + carry;
          for (Eigen::Index j = 0; j < h; ++j) {
            const double dn = dh(0, j) * (1.0 - z(row, j));
            const double dz = dh(0, j) * (prev(row, j) - n(row, j));
            const double dan = dn * (1.0 - n(row, j) * n(row, j));
            const double dar = dan * hn(row, j) * r(row, j) * (1.0 - r(row, j));
            const double daz = dz * z(row, j) * (1.0 - z(row, j));
            dxp(row, j) = dar;
            dxp(row, h + j) = daz;
            dxp(row, 2 * h + j) = dan;
            dhp_all(row, j) = dar;
            dhp_all(row, h + j) = daz;
            dhp_all(row, 2 * h + j) = dan * r(row, j);
          }
          carry = dh.cwiseProduct(z.row(row)) + dhp_all.row(row) * w_hh.value().transpose();
        }
        if (t.needs_grad(w_hh.id)) t.accumulate_target(w_hh.id).noalias() += prev.transpose() * dhp_all;
        if (t.needs_grad(b_hh.id)) t.accumulate_target(b_hh.id) += dhp_all.colwise().sum();
        if (t.needs_grad(w_ih.id)) t.accumulate_target(w_ih.id).noalias() += x.value().transpose() * dxp;
        if (t.needs_grad(b_ih.id)) t.accumulate_target(b_ih.id) += dxp.colwise().sum();
        if (t.needs_grad(x.id)) t.accumulate_target(x.id).noalias() += dxp * w_ih.value().transpose();
      });
}

Var im2col_rows(Var x, int kernel) {
  require(kernel > 0 && kernel % 2 == 1, "im2col_rows: kernel must be odd and positive");
  const Eigen::Index len = x.rows();
  const Eigen::Index c = x.cols();
  const int pad = (kernel - 1) / 2;
  Matrix out = Matrix::Zero(len, kernel * c);
  for (Eigen::Index tpos = 0; tpos < len; ++tpos) {
    for (int j = 0; j < kernel; ++j) {
      const Eigen::Index src = tpos + j - pad;
      if (src >= 0 && src < len) out.block(tpos, j * c, 1, c) = x.value().row(src);
    }
  }
  return tape_of(x).push(std::move(out), {x}, [x, kernel, pad](Tape& t, int self) {
    const Matrix& g = t.incoming(self);
    const Eigen::Index len = g.rows();
    const Eigen::Index c = x.cols();
    Matrix& dx = t.accumulate_target(x.id);
    for (Eigen::Index tpos = 0; tpos < len; ++tpos) {
      for (int j = 0; j < kernel; ++j) {
        const Eigen::Index src = tpos + j - pad;
        if (src >= 0 && src < len) dx.row(src) += g.block(tpos, j * c, 1, c);
      }
    }
  });
}

Var dropout(Var x, double p, std::mt19937_64& rng) {
  require(p >= 0.0 && p < 1.0, "dropout: p must be in [0, 1)");
  if (p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  Matrix out = x.value().cwiseProduct(mask);
  return tape_of(x).push(std::move(out), {x}, [x, mask = std::move(mask)](Tape& t, int self) {
    t.accumulate_target(x.id) += t.incoming(self).cwiseProduct(mask);
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const Matrix& v = logits.value();
  require(static_cast<Eigen::Index>(targets.size()) == v.rows(), "cross_entropy: one target per row");
  require(!targets.empty(), "cross_entropy: empty batch");
  Matrix probs(v.rows(), v.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const int target = targets[static_cast<std::size_t>(r)];
    if (target < 0 || target >= v.cols()) throw std::out_of_range("cross_entropy: target out of range");
    const double mx = v.row(r).maxCoeff();
    probs.row(r) = (v.row(r).array() - mx).exp().matrix();
    const double z = probs.row(r).sum();
    probs.row(r) /= z;
    total += (mx + std::log(z)) - v(r, target);
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(v.rows());
  std::vector<int> tg(targets.begin(), targets.end());
  return tape_of(logits).push(
      std::move(out), {logits}, [logits, probs = std::move(probs), tg = std::move(tg)](Tape& t, int self) {
        const double g = t.incoming(self)(0, 0) / static_cast<double>(probs.rows());
        Matrix d = probs;
        for (std::size_t r = 0; r < tg.size(); ++r) d(static_cast<Eigen::Index>(r), tg[r]) -= 1.0;
        t.accumulate_target(logits.id) += d * g;
      });
}

Var l1_loss(Var prediction, const Matrix& target) {
  const Matrix& v = prediction.value();
  if (v.rows() != target.rows() || v.cols() != target.cols()) {
    throw std::invalid_argument("l1_loss: prediction and target shapes differ");
  }
  require(v.size() > 0, "l1_loss: empty prediction");
  Matrix diff = v - target;
  Matrix out(1, 1);
  out(0, 0) = diff.cwiseAbs().mean();
  Matrix sign = diff.unaryExpr([](double e) { return static_cast<double>((e > 0.0) - (e < 0.0)); });
  return tape_of(prediction).push(
      std::move(out), {prediction}, [prediction, sign = std::move(sign)](Tape& t, int self) {
        const double g = t.incoming(self)(0, 0) / static_cast<double>(sign.size());
        t.accumulate_target(prediction.id) += sign * g;
      });
}

}  // namespace dcslm
