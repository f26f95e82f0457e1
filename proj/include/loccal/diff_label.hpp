#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "loccal/corpus.hpp"
#include "loccal/tok.hpp"

namespace loccal {

enum class DiffTag { kEqual, kReplace, kDelete, kInsert };

std::string to_string(DiffTag tag);

// One edit script step. a_* index the solution, b_* the patch.
struct DiffOp {
  DiffTag tag = DiffTag::kEqual;
  std::size_t a_begin = 0, a_end = 0;
  std::size_t b_begin = 0, b_end = 0;

  friend bool operator==(const DiffOp&, const DiffOp&) = default;
};

struct TokenDiff {
  std::vector<DiffOp> ops;
};

struct MatchingBlock {
  std::size_t a = 0, b = 0, size = 0;
  friend bool operator==(const MatchingBlock&, const MatchingBlock&) = default;
};

struct KeptLabels {
  std::vector<bool> token_kept;
  std::vector<bool> line_kept;
  bool problem_kept = true;

  friend bool operator==(const KeptLabels&, const KeptLabels&) = default;
};

namespace diff {

// Maximal matching blocks by recursive longest-common-block search: the
// longest block in the window is taken first (ties: earliest in a, then
// earliest in b), then the left and right remainders are searched. No junk
// heuristics. Adjacent blocks are merged. No sentinel block is appended.
std::vector<MatchingBlock> matching_blocks(std::span<const Token> a,
                                           std::span<const Token> b);

// Opcodes covering both sequences in order, derived from matching_blocks.
TokenDiff token_diff(std::span<const Token> a, std::span<const Token> b);

// Rebuilds b from a and the ops (equal ranges copy from a).
TokenList apply(const TokenDiff& d, std::span<const Token> a,
                std::span<const Token> b);

// A solution token is kept when it sits in an equal block and the op
// directly before it is not an insert. Lines and the problem are
// conjunctions; the problem additionally requires no insert after the last
// solution token.
KeptLabels kept_labels(std::span<const Token> solution,
                       std::span<const LineSpan> line_spans,
                       std::span<const Token> patch);

// Token-only part of kept_labels.
std::vector<bool> kept_tokens(const TokenDiff& d, std::size_t solution_size);

// True when the script ends with an insert after every solution token.
bool has_trailing_insert(const TokenDiff& d, std::size_t solution_size);

struct AggregatedLabels {
  std::vector<bool> line_kept;
  bool problem_kept = true;
};

// Per-span and overall conjunction. Throws DataError when the spans do not
// partition the label indices.
AggregatedLabels aggregate_labels(const std::vector<bool>& token_kept,
                                  std::span<const LineSpan> spans);

// Changed plus inserted lines of `candidate` relative to `solution`, with
// whole lines as diff atoms. A replace counts max(removed, added) lines.
std::size_t changed_line_count(std::span<const Token> solution,
                               std::span<const Token> candidate);

// Smallest passing candidate by changed_line_count; ties go to model fixers
// before the reference fallback, then to input order. Candidates that do
// not pass tests are skipped. Returns nullopt when nothing is eligible.
std::optional<PatchCandidate> select_minimal_patch(
    std::span<const PatchCandidate> candidates, std::span<const Token> solution);

}  // namespace diff
}  // namespace loccal
