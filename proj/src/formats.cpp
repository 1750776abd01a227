#include "dcslm/formats.hpp"

#include "dcslm/errors.hpp"

#include "json.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dcslm {

namespace le {

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (in.gcount() != 4) throw ParseError("unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

}  // namespace le

namespace {

constexpr std::uint32_t kMatrixVersion = 1;

void write_matrix_file(const std::filesystem::path& path, const char (&magic)[5], const Matrix& m, double interval) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(magic, 4);
  le::put_u32(out, kMatrixVersion);
  le::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  le::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  le::put_f32(out, static_cast<float>(interval));
  for (Eigen::Index i = 0; i < m.size(); ++i) le::put_f32(out, static_cast<float>(m.data()[i]));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Matrix read_matrix_file(const std::filesystem::path& path, const char (&magic)[5], double* interval) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileMissing(path.string());
  std::array<char, 4> m{};
  in.read(m.data(), 4);
  if (in.gcount() != 4 || std::memcmp(m.data(), magic, 4) != 0) {
    throw ParseError(path.string() + ": bad magic, expected " + std::string(magic, 4));
  }
  const auto version = le::get_u32(in);
  if (version != kMatrixVersion) throw ParseError(path.string() + ": unsupported version " + std::to_string(version));
  const auto rows = le::get_u32(in);
  const auto cols = le::get_u32(in);
  *interval = le::get_f32(in);
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = le::get_f32(in);
  in.peek();
  if (!in.eof()) throw ParseError(path.string() + ": trailing bytes after payload");
  return out;
}

}  // namespace

void write_feature_file(const std::filesystem::path& path, const FeatureStream& stream) {
  stream.validate();
  write_matrix_file(path, "FEAT", stream.frames, stream.frame_interval_ms);
}

FeatureStream read_feature_file(const std::filesystem::path& path) {
  FeatureStream s;
  s.frames = read_matrix_file(path, "FEAT", &s.frame_interval_ms);
  s.source_tag = path.string();
  return s;
}

void write_codebook_file(const std::filesystem::path& path, const Codebook& codebook) {
  write_matrix_file(path, "CDBK", codebook.centroids, 0.0);
}

Codebook read_codebook_file(const std::filesystem::path& path) {
  double unused = 0.0;
  Codebook c;
  c.centroids = read_matrix_file(path, "CDBK", &unused);
  return c;
}

// ---------------------------------------------------------------------------

void write_units(std::ostream& out, const UnitFile& file) {
  nlohmann::ordered_json header;
  header["codebook_ctx"] = file.vocab.ctx_codebook;
  header["codebook_phon"] = file.vocab.phon_codebook;
  header["ratio"] = file.ratio;
  out << header.dump() << '\n';
  for (const auto& rec : file.records) {
    nlohmann::ordered_json j;
    j["id"] = rec.id;
    j["ctx"] = rec.seq.ctx;
    j["phon"] = rec.seq.phon;
    out << j.dump() << '\n';
  }
}

namespace {

int get_int(const nlohmann::json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j[key].is_number_integer()) throw ParseError(std::string("missing integer field '") + key + "'", line);
  return j[key].get<int>();
}

}  // namespace

UnitFile read_units(std::istream& in) {
  UnitFile file;
  std::string text;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw ParseError("expected a JSON object", line_no);
    if (!have_header) {
      file.vocab.ctx_codebook = get_int(j, "codebook_ctx", line_no);
      file.vocab.phon_codebook = get_int(j, "codebook_phon", line_no);
      file.ratio = get_int(j, "ratio", line_no);
      if (file.vocab.ctx_codebook < 1 || file.vocab.phon_codebook < 1 || file.ratio < 1) {
        throw ParseError("header values must be positive", line_no);
      }
      have_header = true;
      continue;
    }
    UnitRecord rec;
    if (!j.contains("id") || !j["id"].is_string()) throw ParseError("missing string field 'id'", line_no);
    rec.id = j["id"].get<std::string>();
    try {
      rec.seq.ctx = j.at("ctx").get<std::vector<int>>();
      rec.seq.phon = j.at("phon").get<std::vector<std::vector<int>>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad ctx/phon arrays: ") + e.what(), line_no);
    }
    if (auto problem = check_sequence(rec.seq, file.vocab); !problem.empty()) {
      throw ParseError("invalid unit sequence '" + rec.id + "': " + problem, line_no);
    }
    file.records.push_back(std::move(rec));
  }
  if (!have_header) throw ParseError("missing header line", line_no == 0 ? 1 : line_no);
  return file;
}

void write_unit_file(const std::filesystem::path& path, const UnitFile& file) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_units(out, file);
}

UnitFile read_unit_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileMissing(path.string());
  return read_units(in);
}

}  // namespace dcslm
