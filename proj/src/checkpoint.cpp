#include "dcslm/checkpoint.hpp"

#include "dcslm/errors.hpp"
#include "dcslm/formats.hpp"

#include <cmath>
#include <fstream>

namespace dcslm {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'L', 'M'};
constexpr std::uint32_t kVersion = 1;
constexpr std::string_view kConfigPrefix = "config.";

void put_record(std::ostream& out, const std::string& name, const Matrix& m) {
  le::put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  le::put_u32(out, 2);
  le::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  le::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) le::put_f32(out, static_cast<float>(m.data()[i]));
}

Matrix scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return m;
}

std::vector<std::pair<std::string, double>> config_fields(const ModelConfig& c) {
  return {
      {"n_layers", c.n_layers},
      {"d_model", c.d_model},
      {"n_heads", c.n_heads},
      {"ffn_dim", c.ffn_dim},
      {"ctx_vocab", c.ctx_vocab},
      {"phon_vocab", c.phon_vocab},
      {"conv_kernel", c.conv_kernel},
      // parts per million keeps the f32 round trip exact
      {"dropout_ppm", std::round(c.dropout * 1e6)},
      {"max_positions", c.max_positions},
      {"mode", c.mode == ModelMode::dual ? 0.0 : 1.0},
      {"interaction", c.interaction ? 1.0 : 0.0},
  };
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ParamStore& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  le::put_u32(out, kVersion);
  for (const auto& [key, value] : config_fields(config)) put_record(out, std::string(kConfigPrefix) + key, scalar(value));
  for (const auto& p : params.all()) put_record(out, p.name, p.value);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileMissing(path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string_view(magic, 4) != std::string_view(kMagic, 4)) {
    throw ParseError(path.string() + ": not a checkpoint (bad magic)");
  }
  if (const auto v = le::get_u32(in); v != kVersion) {
    throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint ck;
  std::map<std::string, double, std::less<>> cfg;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto len = le::get_u32(in);
    if (len == 0 || len > 4096) throw ParseError(path.string() + ": implausible tensor name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (static_cast<std::uint32_t>(in.gcount()) != len) throw ParseError(path.string() + ": truncated tensor name");
    const auto ndim = le::get_u32(in);
    if (ndim < 1 || ndim > 2) throw ParseError(path.string() + ": tensor '" + name + "' has unsupported rank");
    Eigen::Index rows = 1, cols = 1;
    if (ndim == 1) {
      cols = le::get_u32(in);
    } else {
      rows = le::get_u32(in);
      cols = le::get_u32(in);
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = le::get_f32(in);
    if (name.starts_with(kConfigPrefix)) {
      cfg[name.substr(kConfigPrefix.size())] = m(0, 0);
    } else {
      ck.params.add(std::move(name), std::move(m));
    }
  }
  auto field = [&](const char* key) {
    auto it = cfg.find(key);
    if (it == cfg.end()) throw ParseError(path.string() + ": missing config." + key);
    return it->second;
  };
  ModelConfig& c = ck.config;
  c.n_layers = static_cast<int>(field("n_layers"));
  c.d_model = static_cast<int>(field("d_model"));
  c.n_heads = static_cast<int>(field("n_heads"));
  c.ffn_dim = static_cast<int>(field("ffn_dim"));
  c.ctx_vocab = static_cast<int>(field("ctx_vocab"));
  c.phon_vocab = static_cast<int>(field("phon_vocab"));
  c.conv_kernel = static_cast<int>(field("conv_kernel"));
  c.dropout = field("dropout_ppm") / 1e6;
  c.max_positions = static_cast<int>(field("max_positions"));
  c.mode = field("mode") == 0.0 ? ModelMode::dual : ModelMode::single_channel_baseline;
  c.interaction = field("interaction") != 0.0;
  c.validate();
  return ck;
}

DualChannelModel load_model(const std::filesystem::path& path) {
  Checkpoint ck = read_checkpoint(path);
  return DualChannelModel(ck.config, std::move(ck.params));
}

}  // namespace dcslm
