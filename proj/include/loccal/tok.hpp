#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace loccal {

using Token = std::string;
using TokenList = std::vector<Token>;

// Half-open token index range [begin, end).
struct LineSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
  friend bool operator==(const LineSpan&, const LineSpan&) = default;
};

struct TokenStream {
  TokenList tokens;
  std::vector<LineSpan> line_spans;

  friend bool operator==(const TokenStream&, const TokenStream&) = default;
};

namespace tok {

// Lossless byte-level maximal-munch tokenizer. Token classes:
//   identifier/keyword runs   [A-Za-z_\x80-\xff][A-Za-z0-9_\x80-\xff]*
//   number literals           [0-9][A-Za-z0-9_.]*
//   horizontal whitespace     runs of any whitespace except '\n'
//   newline                   "\n" or "\r\n", always its own token
//   everything else           one byte per token
// Joining the tokens reproduces the input exactly.
TokenStream normalize_tokenize(std::string_view text);

// Line spans over an already tokenized sequence. A line ends after each
// token that ends with '\n'; trailing tokens without a terminator form the
// last line. An empty sequence has no lines.
std::vector<LineSpan> line_spans_of(std::span<const Token> tokens);

// Token groups of each line, following stream.line_spans.
std::vector<TokenList> split_lines(const TokenStream& stream);

// Concatenated text of each line, terminator included.
std::vector<std::string> line_strings(std::span<const Token> tokens,
                                      std::span<const LineSpan> spans);

std::string join(std::span<const Token> tokens);

// Throws DataError unless spans are ordered, disjoint and cover
// [0, token_count).
void check_partition(std::span<const LineSpan> spans, std::size_t token_count);

struct GeneratorToken {
  std::string text;
  double prob = 1.0;

  friend bool operator==(const GeneratorToken&, const GeneratorToken&) = default;
};

enum class ProbMerge { kMin, kMean };

// For each normalized token, the contiguous range [first, last) of
// generator-token indices whose character spans overlap it.
struct AlignmentMap {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
};

// Greedy left-to-right alignment by character offsets. Both sides must spell
// the same text; otherwise DataError reports the first diverging offset.
// Empty generator tokens attach to the normalized token at their offset
// (the last token when the offset is the end of text).
AlignmentMap align(std::span<const GeneratorToken> gen,
                   std::span<const Token> norm);

// Per normalized token: min (or mean) probability of overlapping generator
// tokens.
std::vector<double> align_probs(std::span<const GeneratorToken> gen,
                                std::span<const Token> norm,
                                ProbMerge merge = ProbMerge::kMin);

}  // namespace tok
}  // namespace loccal
