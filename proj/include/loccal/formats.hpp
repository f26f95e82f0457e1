#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "loccal/confidence.hpp"
#include "loccal/diff_label.hpp"

namespace loccal {

// Run-length encoding of a boolean sequence. Runs alternate and start with
// a (possibly empty) run of true values.
std::vector<std::size_t> rle_encode(const std::vector<bool>& bits);
std::vector<bool> rle_decode(const std::vector<std::size_t>& runs);

struct LabelRecord {
  std::string problem_id;
  std::string dataset;
  // "passed" when the solution passed its tests, else the patch source.
  std::string patch_source;
  KeptLabels labels;

  friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

struct LabelFile {
  std::string run_config;  // JSON object text
  std::vector<LabelRecord> records;

  const LabelRecord* find(const std::string& problem_id) const;
};

struct ConfidenceRecord {
  std::string problem_id;
  std::string dataset;
  ConfidenceAssignment conf;
  bool compliant = true;  // reflective responses only
};

struct ConfidenceFile {
  std::string name;  // row label in reports, e.g. "probe-MIDDLE"
  EstimatorKind estimator = EstimatorKind::kTokenProb;
  std::string run_config;
  std::vector<ConfidenceRecord> records;

  const ConfidenceRecord* find(const std::string& problem_id) const;
};

void write_labels(const LabelFile& f, std::ostream& out);
LabelFile read_labels(std::istream& in);
void save_labels(const LabelFile& f, const std::filesystem::path& path);
LabelFile load_labels(const std::filesystem::path& path);

void write_confidences(const ConfidenceFile& f, std::ostream& out);
ConfidenceFile read_confidences(std::istream& in);
void save_confidences(const ConfidenceFile& f, const std::filesystem::path& path);
ConfidenceFile load_confidences(const std::filesystem::path& path);

// Writes `text` to `path`, creating parent directories.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace loccal
