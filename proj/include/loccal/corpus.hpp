#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "loccal/tok.hpp"

namespace loccal {

inline constexpr const char* kSchemaVersion = "v1";

struct Problem {
  std::string id;
  std::string dataset;
  std::string prompt;
  bool passed = false;

  friend bool operator==(const Problem&, const Problem&) = default;
};

// Row-major token x dim block of float32 values.
struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;
};

// Per-token embeddings, either inline or in a little-endian float32 sidecar
// file at a byte offset. `tag` names the extraction point (MIDDLE,
// THREE-QUARTERS, LAST, SHIFTED-THREE-QUARTERS, COMBINED, ...).
struct EmbeddingRef {
  std::string tag;
  std::size_t dim = 0;
  std::string path;  // relative to the manifest directory unless absolute
  std::uint64_t offset = 0;
  std::vector<float> inline_data;  // used when path is empty

  friend bool operator==(const EmbeddingRef&, const EmbeddingRef&) = default;
};

struct GeneratedSolution {
  std::string problem_id;
  TokenList tokens;
  std::optional<std::vector<double>> token_probs;
  std::vector<LineSpan> line_spans;
  std::optional<std::vector<TokenList>> variants;
  std::optional<EmbeddingRef> embeddings;
  // Generator tokenization with probabilities, aligned onto `tokens` when
  // token_probs is absent.
  std::optional<std::vector<tok::GeneratorToken>> gen_tokens;

  friend bool operator==(const GeneratedSolution&, const GeneratedSolution&) = default;
};

enum class PatchSource { kModelFixer, kReferenceFallback };

std::string to_string(PatchSource s);
PatchSource patch_source_from_string(const std::string& s);

struct PatchCandidate {
  std::string problem_id;
  TokenList tokens;
  PatchSource source = PatchSource::kModelFixer;
  std::string fixer_name;
  bool passes_tests = false;

  friend bool operator==(const PatchCandidate&, const PatchCandidate&) = default;
};

struct ManifestRecord {
  Problem problem;
  GeneratedSolution solution;
  std::vector<PatchCandidate> patches;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::map<std::string, double> base_rate_cache;
  // Not part of equality.
  std::filesystem::path base_dir;
  std::vector<std::string> warnings;

  const ManifestRecord* find(const std::string& problem_id) const;

  friend bool operator==(const DatasetManifest& x, const DatasetManifest& y) {
    return x.records == y.records && x.base_rate_cache == y.base_rate_cache;
  }
};

// Streams records from a line-delimited record file, validating each.
// Header lines (kind = "header") are skipped; a kind = "base_rates" line
// fills base_rates(). Errors carry the 1-based line number.
class ManifestReader {
 public:
  explicit ManifestReader(const std::filesystem::path& path);
  ManifestReader(std::istream& in, std::filesystem::path base_dir);
  ~ManifestReader();
  ManifestReader(ManifestReader&&) noexcept;
  ManifestReader& operator=(ManifestReader&&) noexcept;

  std::optional<ManifestRecord> next();
  const std::map<std::string, double>& base_rates() const { return base_rates_; }
  std::size_t line_number() const { return line_no_; }

 private:
  std::unique_ptr<std::ifstream> owned_;
  std::istream* in_ = nullptr;
  std::filesystem::path base_dir_;
  std::size_t line_no_ = 0;
  std::map<std::string, double> base_rates_;
};

// Loads and validates a whole manifest: per-record invariants plus unique
// problem ids. An empty file yields an empty manifest with a warning.
DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(std::istream& in,
                               const std::filesystem::path& base_dir = {});

void write_manifest(const DatasetManifest& m, std::ostream& out);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

// Throws DataError naming the record id and field on any violation.
void validate_record(const ManifestRecord& r, const std::filesystem::path& base_dir);

EmbeddingMatrix read_embeddings(const EmbeddingRef& ref, std::size_t token_count,
                                const std::filesystem::path& base_dir);

// Appends the matrix to a sidecar file and returns its byte offset.
std::uint64_t append_embeddings(const std::filesystem::path& sidecar,
                                const EmbeddingMatrix& m);

// Fraction of true entries. Throws DataError on an empty list.
double base_rate(const std::vector<bool>& labels);

enum class FoldMode { kDisjointKFold, kRepeatedRandomSplit };

std::string to_string(FoldMode m);
FoldMode fold_mode_from_string(const std::string& s);

struct FoldSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;

  friend bool operator==(const FoldSplit&, const FoldSplit&) = default;
};

struct FoldAssignment {
  std::size_t k = 5;
  FoldMode mode = FoldMode::kDisjointKFold;
  std::uint64_t seed = 0;
  // Disjoint mode only: record id -> fold index.
  std::map<std::string, std::size_t> assignment;
  // One (train, test) pair per fold, ids in input order. Filled in both
  // modes; disjoint test sets partition the ids.
  std::vector<FoldSplit> splits;

  friend bool operator==(const FoldAssignment&, const FoldAssignment&) = default;
};

inline constexpr double kHoldoutFraction = 0.2;

// disjoint: shuffle, then deal round-robin so fold sizes differ by <= 1.
// repeated random split: k independent shuffles, each holding out
// max(1, round(0.2 n)) ids. Deterministic in the seed.
FoldAssignment assign_folds(const std::vector<std::string>& record_ids, std::size_t k,
                            FoldMode mode, std::uint64_t seed);

}  // namespace loccal
