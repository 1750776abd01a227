#pragma once

// On-disk formats shared by the pipeline stages.
//
//   feature file   "FEAT" u32 version=1, u32 n_frames, u32 dim, f32 interval_ms,
//                  n_frames*dim f32 row-major; all little-endian
//   codebook file  same layout with magic "CDBK" (interval stored as 0)
//   unit file      JSON lines; a header {"codebook_ctx","codebook_phon","ratio"}
//                  followed by {"id","ctx","phon"} per utterance

#include "dcslm/unitize.hpp"

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace dcslm {

void write_feature_file(const std::filesystem::path& path, const FeatureStream& stream);
FeatureStream read_feature_file(const std::filesystem::path& path);

void write_codebook_file(const std::filesystem::path& path, const Codebook& codebook);
Codebook read_codebook_file(const std::filesystem::path& path);

struct UnitRecord {
  std::string id;
  UnitSequence seq;

  bool operator==(const UnitRecord&) const = default;
};

struct UnitFile {
  UnitVocab vocab;
  int ratio = 1;
  std::vector<UnitRecord> records;

  bool operator==(const UnitFile&) const = default;
};

void write_units(std::ostream& out, const UnitFile& file);
UnitFile read_units(std::istream& in);
void write_unit_file(const std::filesystem::path& path, const UnitFile& file);
UnitFile read_unit_file(const std::filesystem::path& path);

// Little-endian primitives, also used by the checkpoint format.
namespace le {
void put_u32(std::ostream& out, std::uint32_t v);
void put_f32(std::ostream& out, float v);
std::uint32_t get_u32(std::istream& in);
float get_f32(std::istream& in);
}  // namespace le

}  // namespace dcslm
