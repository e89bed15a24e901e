#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpmface/features.hpp"

namespace dpmface {

/// One image of a dataset. `path` is relative to the manifest's directory
/// and doubles as the image id.
struct ImageRecord {
  std::string path;
  std::int64_t subject_id = 0;
  Modality modality = Modality::source;
  int session = 0;
  std::string condition;
  int enrollment_order = 0;
  /// "train", "test" or empty.
  std::string split;
};

/// Header-bearing comma-separated file, one record per image:
///   path,subject_id,modality,session,condition,enrollment_order,split
struct Manifest {
  std::filesystem::path root;
  std::vector<ImageRecord> records;
  /// Free-form "# ..." lines written after the header.
  std::vector<std::string> comments;

  static Manifest read(const std::filesystem::path& file);
  void write(const std::filesystem::path& file) const;

  std::filesystem::path resolve(const ImageRecord& r) const { return root / r.path; }
};

/// Parses "0-19,25,30-31" into sorted subject ids.
std::vector<std::int64_t> parse_id_list(const std::string& spec);

}  // namespace dpmface
