#pragma once

// Straight-line re-implementation of the dual-channel forward pass on plain
// matrices, reading weights by name from a parameter store. Written from the
// architecture description without touching the tape code.

#include "dcslm/model.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace dcslm::testing {

class ReferenceModel {
 public:
  ReferenceModel(const ModelConfig& c, const ParamStore& p) : c_(c), p_(p) {}

  // Returns the per-layer contextual and phonetic states, layer 0 = inputs.
  HiddenStates forward(const UnitSequence& seq) const {
    const auto T = static_cast<Eigen::Index>(seq.ctx.size());
    const int pad = c_.ctx_vocab - kNumSpecials + 3;
    std::vector<bool> valid;
    for (int id : seq.ctx) valid.push_back(id != pad);

    Matrix ctx(T, c_.d_model);
    for (Eigen::Index t = 0; t < T; ++t) ctx.row(t) = w("embed.ctx").row(seq.ctx[t]) + w("embed.pos").row(t);

    HiddenStates out;
    if (c_.mode == ModelMode::single_channel_baseline) {
      out.ctx.push_back(ctx);
      for (int l = 0; l < c_.n_layers; ++l) {
        ctx = block(l, ctx, valid);
        out.ctx.push_back(ctx);
      }
      return out;
    }

    Matrix phon = phonetic(seq);
    out.ctx.push_back(ctx);
    out.phon.push_back(phon);
    for (int l = 0; l < c_.n_layers; ++l) {
      ctx = block(l, ctx, valid);
      phon = block(l, phon, valid);
      if (c_.interaction) {
        const std::string p = "layer" + std::to_string(l) + ".inter.";
        Matrix both(T, 2 * c_.d_model);
        both << lin(ctx, p + "ctx_in"), lin(phon, p + "phon_in");
        Matrix fused = conv(both, p + "conv");
        ctx += lin(fused, p + "ctx_out");
        phon += lin(fused, p + "phon_out");
      }
      out.ctx.push_back(ctx);
      out.phon.push_back(phon);
    }
    return out;
  }

 private:
  const Matrix& w(const std::string& name) const { return p_.get(name).value; }

  Matrix lin(const Matrix& x, const std::string& prefix) const {
    Matrix y = x * w(prefix + ".w");
    y.rowwise() += w(prefix + ".b").row(0);
    return y;
  }

  static Matrix norm(const Matrix& x, const Matrix& gamma, const Matrix& beta) {
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double mean = x.row(r).mean();
      double var = 0.0;
      for (Eigen::Index j = 0; j < x.cols(); ++j) var += (x(r, j) - mean) * (x(r, j) - mean);
      var /= static_cast<double>(x.cols());
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        y(r, j) = (x(r, j) - mean) / std::sqrt(var + 1e-12) * gamma(0, j) + beta(0, j);
      }
    }
    return y;
  }

  Matrix block(int l, const Matrix& x, const std::vector<bool>& valid) const {
    const std::string p = "layer" + std::to_string(l) + ".";
    const Matrix q = lin(x, p + "attn.q"), k = lin(x, p + "attn.k"), v = lin(x, p + "attn.v");
    const int dh = c_.d_model / c_.n_heads;
    Matrix heads(x.rows(), c_.d_model);
    for (int h = 0; h < c_.n_heads; ++h) {
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        std::vector<double> s(static_cast<std::size_t>(x.rows()), 0.0);
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < x.rows(); ++j) {
          if (!valid[static_cast<std::size_t>(j)]) continue;
          s[j] = q.row(i).segment(h * dh, dh).dot(k.row(j).segment(h * dh, dh)) / std::sqrt(double(dh));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (Eigen::Index j = 0; j < x.rows(); ++j) {
          s[j] = valid[static_cast<std::size_t>(j)] ? std::exp(s[j] - mx) : 0.0;
          z += s[j];
        }
        Vector acc = Vector::Zero(dh);
        for (Eigen::Index j = 0; j < x.rows(); ++j) acc += (s[j] / z) * v.row(j).segment(h * dh, dh).transpose();
        heads.row(i).segment(h * dh, dh) = acc.transpose();
      }
    }
    Matrix x1 = norm(x + lin(heads, p + "attn.o"), w(p + "ln1.gamma"), w(p + "ln1.beta"));
    Matrix hidden = lin(x1, p + "ffn.in");
    for (Eigen::Index i = 0; i < hidden.size(); ++i) {
      const double z = hidden.data()[i];
      hidden.data()[i] = 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0)));
    }
    return norm(x1 + lin(hidden, p + "ffn.out"), w(p + "ln2.gamma"), w(p + "ln2.beta"));
  }

  // Same-length 1D convolution over time, zero padded at both ends.
  Matrix conv(const Matrix& x, const std::string& prefix) const {
    const int k = c_.conv_kernel, half = k / 2;
    const Matrix& kw = w(prefix + ".w");
    const Eigen::Index cin = x.cols();
    Matrix y(x.rows(), kw.cols());
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      y.row(t) = w(prefix + ".b").row(0);
      for (int o = 0; o < k; ++o) {
        const Eigen::Index src = t + o - half;
        if (src < 0 || src >= x.rows()) continue;
        y.row(t) += x.row(src) * kw.middleRows(o * cin, cin);
      }
    }
    return y;
  }

  Matrix gru(const Matrix& x, const std::string& dir, bool reverse) const {
    const std::string p = "phon_enc." + dir + ".";
    const Eigen::Index h = w(p + "w_hh").rows();
    Matrix out(x.rows(), h);
    Vector state = Vector::Zero(h);
    for (Eigen::Index s = 0; s < x.rows(); ++s) {
      const Eigen::Index t = reverse ? x.rows() - 1 - s : s;
      const Vector gi = (x.row(t) * w(p + "w_ih") + w(p + "b_ih").row(0)).transpose();
      const Vector gh = (state.transpose() * w(p + "w_hh") + w(p + "b_hh").row(0)).transpose();
      Vector r(h), z(h), n(h);
      for (Eigen::Index j = 0; j < h; ++j) {
        r(j) = 1.0 / (1.0 + std::exp(-(gi(j) + gh(j))));
        z(j) = 1.0 / (1.0 + std::exp(-(gi(h + j) + gh(h + j))));
        n(j) = std::tanh(gi(2 * h + j) + r(j) * gh(2 * h + j));
      }
      state = ((1.0 - z.array()) * n.array() + z.array() * state.array()).matrix();
      out.row(t) = state.transpose();
    }
    return out;
  }

  Matrix phonetic(const UnitSequence& seq) const {
    std::vector<int> flat;
    for (const auto& g : seq.phon) flat.insert(flat.end(), g.begin(), g.end());
    Matrix x(static_cast<Eigen::Index>(flat.size()), c_.d_model);
    for (std::size_t i = 0; i < flat.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = w("embed.phon").row(flat[i]);
    const Matrix fwd = gru(x, "fwd", false), bwd = gru(x, "bwd", true);
    const Eigen::Index h = fwd.cols();
    Matrix out(static_cast<Eigen::Index>(seq.phon.size()), 2 * h);
    Eigen::Index offset = 0;
    for (std::size_t g = 0; g < seq.phon.size(); ++g) {
      const auto n = static_cast<Eigen::Index>(seq.phon[g].size());
      out.row(static_cast<Eigen::Index>(g)) << fwd.row(offset + n - 1), bwd.row(offset);
      offset += n;
    }
    return out;
  }

  ModelConfig c_;
  const ParamStore& p_;
};

// Parameter count from the layer dimensions.
inline std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.ffn_dim, h = d / 2, k = c.conv_kernel;
  std::size_t n = (c.ctx_vocab + c.max_positions) * d;
  const bool dual = c.mode == ModelMode::dual;
  if (dual) n += c.phon_vocab * d + 2 * (d * 3 * h + h * 3 * h + 2 * 3 * h);
  std::size_t layer = 4 * (d * d + d) + 2 * 2 * d + (d * f + f) + (f * d + d);
  if (dual && c.interaction) layer += 2 * (d * d + d) + (k * 2 * d * 2 * d + 2 * d) + 2 * (2 * d * d + d);
  return n + c.n_layers * layer;
}

}  // namespace dcslm::testing
