// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace stagewise::data {

inline const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names{"Normal", "Bacterial", "Viral", "COVID-19"};
  return names;
}

enum class Split { train, test };
const char* split_name(Split s);

struct Record {
  std::string path;  // as written in the manifest
  int label = 0;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<Record> records;
  std::vector<std::string> class_names = default_class_names();
  /// Relative record paths resolve against this directory.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const Record& r) const;
  /// Per-class record counts for one split.
  std::vector<int> class_counts(Split split) const;
  std::size_t count(Split split) const;
  std::vector<Record> split_records(Split split) const;
};

/// CSV with header `path,label,split`. Labels are class names or indices.
DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& file);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);

}  // namespace stagewise::data
