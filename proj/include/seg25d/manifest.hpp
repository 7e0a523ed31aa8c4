#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace seg25d {

struct ManifestRecord {
  std::string case_id;
  std::filesystem::path input_volume_path;
  std::optional<std::filesystem::path> second_input_path;
  std::filesystem::path truth_mask_path;
  std::string split_tag;

  bool operator==(const ManifestRecord&) const = default;
};

// Paths held in memory are absolute.
struct Manifest {
  std::vector<ManifestRecord> records;

  bool operator==(const Manifest&) const = default;
};

// Reads the JSON manifest. Relative paths resolve against the manifest's
// directory. Throws FormatError on malformed JSON and DataError on duplicate
// case ids or files that do not exist.
Manifest load_manifest(const std::filesystem::path& path);

// Writes paths relative to the output file's directory.
void write_manifest(const Manifest& m, const std::filesystem::path& path);

struct FoldSplit {
  Manifest train;
  Manifest test;
};

// Seeded k-fold partition. The first (n mod k) folds hold one extra record.
std::vector<FoldSplit> kfold_split(const Manifest& m, std::size_t k, std::uint64_t seed);

struct StudySplit {
  std::string train_tag;
  std::string test_tag;
  FoldSplit split;
};

// Train on one split tag and test on the other, in both directions. Needs
// exactly two distinct tags.
std::vector<StudySplit> cross_study_split(const Manifest& m);

}  // namespace seg25d
