// SPDX-License-Identifier: Apache-2.0
#include "stagewise/data/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "stagewise/errors.hpp"

namespace stagewise::data {

namespace fs = std::filesystem;

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

fs::path DatasetManifest::resolve(const Record& r) const {
  fs::path p(r.path);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<int> DatasetManifest::class_counts(Split split) const {
  std::vector<int> counts(class_names.size(), 0);
  for (const auto& r : records) {
    if (r.split == split) ++counts.at(static_cast<std::size_t>(r.label));
  }
  return counts;
}

std::size_t DatasetManifest::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [&](const Record& r) { return r.split == split; }));
}

std::vector<Record> DatasetManifest::split_records(Split split) const {
  std::vector<Record> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

namespace {

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

// Comma-separated fields; double quotes protect commas, "" is a literal quote.
std::vector<std::string> split_csv(const std::string& line, int line_no) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  if (quoted) throw ParseError("unterminated quote", line_no);
  for (auto& f : fields) f = trim(f);
  return fields;
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

int parse_label(const std::string& text, const std::vector<std::string>& names, int line_no) {
  int idx = -1;
  const auto* end = text.data() + text.size();
  if (auto [p, ec] = std::from_chars(text.data(), end, idx); ec == std::errc() && p == end) {
    if (idx >= 0 && idx < static_cast<int>(names.size())) return idx;
    throw ParseError("label index " + text + " outside the class table", line_no);
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (lower(names[i]) == lower(text)) return static_cast<int>(i);
  }
  throw ParseError("unknown label '" + text + "'", line_no);
}

}  // namespace

DatasetManifest parse_manifest(std::istream& in, const fs::path& base_dir) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  std::unordered_map<std::string, int> first_seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line, line_no);
    if (!header_seen) {
      if (fields.size() != 3 || lower(fields[0]) != "path" || lower(fields[1]) != "label" ||
          lower(fields[2]) != "split") {
        throw ParseError("expected header 'path,label,split'", line_no);
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != 3) {
      throw ParseError("expected 3 fields, found " + std::to_string(fields.size()), line_no);
    }
    if (fields[0].empty()) throw ParseError("empty path", line_no);
    Record r;
    r.path = fields[0];
    r.label = parse_label(fields[1], m.class_names, line_no);
    const auto split = lower(fields[2]);
    if (split == "train") {
      r.split = Split::train;
    } else if (split == "test") {
      r.split = Split::test;
    } else {
      throw ParseError("unknown split '" + fields[2] + "' (expected train or test)", line_no);
    }
    if (auto [it, inserted] = first_seen.emplace(r.path, line_no); !inserted) {
      throw ParseError("duplicate path '" + r.path + "' (first seen on line " +
                           std::to_string(it->second) + ")",
                       line_no);
    }
    m.records.push_back(std::move(r));
  }
  if (!header_seen) throw ParseError("empty manifest, expected header 'path,label,split'", 1);
  return m;
}

DatasetManifest load_manifest(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ParseError("cannot open manifest " + file.string());
  return parse_manifest(in, file.parent_path());
}

void save_manifest(const DatasetManifest& manifest, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write manifest " + file.string());
  out << "path,label,split\n";
  for (const auto& r : manifest.records) {
    std::string path = r.path;
    if (path.find_first_of(",\"") != std::string::npos) {
      std::string q = "\"";
      for (char c : path) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
      path = q + "\"";
    }
    out << path << ',' << manifest.class_names.at(static_cast<std::size_t>(r.label)) << ','
        << split_name(r.split) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing manifest " + file.string());
}

}  // namespace stagewise::data
