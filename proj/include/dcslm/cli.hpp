#pragma once

// Command-line front end. Subcommands:
//   gen-corpus, train-codebook, unitize, train, eval-ssimi, finetune, eval-intent
// Every subcommand accepts --seed, --config and --out and writes a run
// manifest next to its output. Errors go to err as one JSON line; exit code
// 2 for usage errors, 1 for everything else.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace dcslm {

// args excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

// <out>/manifest.json for directory outputs, <out>.manifest.json otherwise.
std::filesystem::path manifest_path(const std::filesystem::path& out);

}  // namespace dcslm
