#include "dcslm/checkpoint.hpp"
#include "dcslm/errors.hpp"
#include "dcslm/formats.hpp"

#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace dcslm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dcslm_test_formats";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Matrix float_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 3.0f);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(n(rng));
  return m;
}

UnitSequence random_sequence(const UnitVocab& vocab, std::mt19937_64& rng) {
  UnitSequence merged;
  const int T = std::uniform_int_distribution<int>(0, 10)(rng);
  for (int t = 0; t < T; ++t) {
    int id = 0;
    do {
      id = std::uniform_int_distribution<int>(0, vocab.ctx_codebook - 1)(rng);
    } while (!merged.ctx.empty() && merged.ctx.back() == id);
    merged.ctx.push_back(id);
    std::vector<int> g;
    const int n = std::uniform_int_distribution<int>(1, 4)(rng);
    for (int j = 0; j < n; ++j) {
      int p = 0;
      do {
        p = std::uniform_int_distribution<int>(0, vocab.phon_codebook - 1)(rng);
      } while (!g.empty() && g.back() == p);
      g.push_back(p);
    }
    merged.phon.push_back(g);
  }
  return finalize_sequence(merged, vocab);
}

}  // namespace

TEST_CASE("feature files round-trip bit-exactly and follow the byte layout") {
  std::mt19937_64 rng(1);
  FeatureStream s;
  s.frames = float_matrix(7, 3, rng);
  s.frame_interval_ms = 20.0;
  const fs::path p = scratch("a.feat");
  write_feature_file(p, s);
  const FeatureStream back = read_feature_file(p);
  CHECK(back.frames == s.frames);
  CHECK(back.frame_interval_ms == 20.0);

  const std::string bytes = slurp(p);
  CHECK(bytes.size() == 4 + 4 * 4 + 7 * 3 * 4);
  CHECK(bytes.substr(0, 4) == "FEAT");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);   // version, little endian
  CHECK(static_cast<unsigned char>(bytes[8]) == 7);   // frames
  CHECK(static_cast<unsigned char>(bytes[12]) == 3);  // dim

  write_feature_file(scratch("b.feat"), back);
  CHECK(slurp(scratch("b.feat")) == bytes);
}

TEST_CASE("malformed binary files are rejected") {
  {
    std::ofstream f(scratch("bad.feat"), std::ios::binary);
    f << "NOPE";
  }
  CHECK_THROWS_AS(read_feature_file(scratch("bad.feat")), ParseError);
  CHECK_THROWS_AS(read_feature_file(scratch("does_not_exist.feat")), FileMissing);

  std::mt19937_64 rng(2);
  FeatureStream s;
  s.frames = float_matrix(2, 2, rng);
  s.frame_interval_ms = 10.0;
  write_feature_file(scratch("trunc.feat"), s);
  std::string bytes = slurp(scratch("trunc.feat"));
  {
    std::ofstream f(scratch("trunc.feat"), std::ios::binary);
    f << bytes.substr(0, bytes.size() - 2);
  }
  CHECK_THROWS_AS(read_feature_file(scratch("trunc.feat")), ParseError);
  {
    std::ofstream f(scratch("long.feat"), std::ios::binary);
    f << bytes << "xx";
  }
  CHECK_THROWS_AS(read_feature_file(scratch("long.feat")), ParseError);
}

TEST_CASE("codebook files round-trip") {
  std::mt19937_64 rng(3);
  Codebook cb;
  cb.centroids = float_matrix(5, 4, rng);
  write_codebook_file(scratch("c.cdbk"), cb);
  CHECK(read_codebook_file(scratch("c.cdbk")).centroids == cb.centroids);
  CHECK(slurp(scratch("c.cdbk")).substr(0, 4) == "CDBK");
  CHECK_THROWS_AS(read_codebook_file(scratch("a.feat")), ParseError);
}

TEST_CASE("unit files: header only, exact record text, random round trip") {
  UnitFile empty;
  empty.vocab = {10, 4};
  empty.ratio = 2;
  std::ostringstream out;
  write_units(out, empty);
  CHECK(out.str() == "{\"codebook_ctx\":10,\"codebook_phon\":4,\"ratio\":2}\n");
  std::istringstream in(out.str());
  CHECK(read_units(in) == empty);

  UnitFile one = empty;
  one.records.push_back({"u1", finalize_sequence(UnitSequence{{5, 3}, {{1, 2}, {0}}}, one.vocab)});
  std::ostringstream out1;
  write_units(out1, one);
  CHECK(out1.str() ==
        "{\"codebook_ctx\":10,\"codebook_phon\":4,\"ratio\":2}\n"
        "{\"id\":\"u1\",\"ctx\":[10,5,3,11],\"phon\":[[8],[1,2],[0],[8]]}\n");

  std::mt19937_64 rng(4);
  UnitFile big = empty;
  for (int i = 0; i < 1000; ++i) big.records.push_back({"r" + std::to_string(i), random_sequence(big.vocab, rng)});
  write_unit_file(scratch("u.jsonl"), big);
  CHECK(read_unit_file(scratch("u.jsonl")) == big);
}

TEST_CASE("unit file parse errors carry the line number") {
  const std::string header = "{\"codebook_ctx\":10,\"codebook_phon\":4,\"ratio\":2}\n";
  auto line_of = [](const std::string& text) {
    std::istringstream in(text);
    try {
      read_units(in);
    } catch (const ParseError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  CHECK(line_of("not json\n") == 1);
  CHECK(line_of(header + "{\"id\":\"a\",\"ctx\":[10,11],\"phon\":[[8],[8]]}\n{\"id\":\"b\"}\n") == 3);
  CHECK(line_of(header + "{\"id\":\"a\",\"ctx\":[10,5,5,11],\"phon\":[[8],[1],[2],[8]]}\n") == 2);
  CHECK(line_of(header + "{\"id\":\"a\",\"ctx\":[10,11],\"phon\":[[8]]}\n") == 2);
}

TEST_CASE("checkpoints round-trip parameters and configuration") {
  ModelConfig c;
  c.n_layers = 1;
  c.d_model = 8;
  c.n_heads = 2;
  c.ffn_dim = 16;
  c.ctx_vocab = 9;
  c.phon_vocab = 7;
  c.max_positions = 16;
  c.dropout = 0.25;
  DualChannelModel m(c, 5);
  // Store values at float precision so the round trip is exact.
  for (auto& p : m.params().all()) p.value = p.value.cast<float>().cast<double>();
  write_checkpoint(scratch("m.dclm"), m.config(), m.params());
  const Checkpoint back = read_checkpoint(scratch("m.dclm"));
  CHECK(back.config == c);
  REQUIRE(back.params.all().size() == m.params().all().size());
  for (const auto& p : m.params().all()) CHECK(back.params.get(p.name).value == p.value);
  CHECK(slurp(scratch("m.dclm")).substr(0, 4) == "DCLM");

  write_checkpoint(scratch("m2.dclm"), back.config, back.params);
  CHECK(slurp(scratch("m2.dclm")) == slurp(scratch("m.dclm")));
  CHECK_THROWS_AS(read_checkpoint(scratch("a.feat")), ParseError);
}
