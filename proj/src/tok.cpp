#include "loccal/tok.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "loccal/error.hpp"

namespace loccal::tok {
namespace {

bool is_ident_start(unsigned char c) {
  return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_' ||
         c >= 0x80;
}

bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

bool is_ident_char(unsigned char c) { return is_ident_start(c) || is_digit(c); }

bool is_hspace(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\v' || c == '\f' || c == '\r';
}

}  // namespace

TokenStream normalize_tokenize(std::string_view text) {
  TokenStream out;
  const std::size_t n = text.size();
  std::size_t i = 0;
  auto at = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
  while (i < n) {
    const unsigned char c = at(i);
    std::size_t j = i + 1;
    if (c == '\n') {
      // j already past the newline
    } else if (c == '\r' && i + 1 < n && at(i + 1) == '\n') {
      j = i + 2;
    } else if (is_ident_start(c)) {
      while (j < n && is_ident_char(at(j))) ++j;
    } else if (is_digit(c)) {
      while (j < n && (is_ident_char(at(j)) || at(j) == '.')) ++j;
    } else if (is_hspace(c)) {
      // A '\r' directly before '\n' belongs to the newline token.
      while (j < n && is_hspace(at(j)) &&
             !(at(j) == '\r' && j + 1 < n && at(j + 1) == '\n'))
        ++j;
    }
    out.tokens.emplace_back(text.substr(i, j - i));
    i = j;
  }
  out.line_spans = line_spans_of(out.tokens);
  return out;
}

std::vector<LineSpan> line_spans_of(std::span<const Token> tokens) {
  std::vector<LineSpan> spans;
  std::size_t start = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!tokens[i].empty() && tokens[i].back() == '\n') {
      spans.push_back({start, i + 1});
      start = i + 1;
    }
  }
  if (start < tokens.size()) spans.push_back({start, tokens.size()});
  return spans;
}

std::vector<TokenList> split_lines(const TokenStream& stream) {
  std::vector<TokenList> groups;
  groups.reserve(stream.line_spans.size());
  for (const LineSpan& s : stream.line_spans) {
    groups.emplace_back(stream.tokens.begin() + static_cast<std::ptrdiff_t>(s.begin),
                        stream.tokens.begin() + static_cast<std::ptrdiff_t>(s.end));
  }
  return groups;
}

std::vector<std::string> line_strings(std::span<const Token> tokens,
                                      std::span<const LineSpan> spans) {
  std::vector<std::string> lines;
  lines.reserve(spans.size());
  for (const LineSpan& s : spans) lines.push_back(join(tokens.subspan(s.begin, s.size())));
  return lines;
}

std::string join(std::span<const Token> tokens) {
  std::size_t total = 0;
  for (const Token& t : tokens) total += t.size();
  std::string out;
  out.reserve(total);
  for (const Token& t : tokens) out += t;
  return out;
}

void check_partition(std::span<const LineSpan> spans, std::size_t token_count) {
  std::size_t expect = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (spans[i].begin != expect || spans[i].end < spans[i].begin) {
      std::ostringstream msg;
      msg << "line span " << i << " [" << spans[i].begin << "," << spans[i].end
          << ") does not continue the partition at " << expect;
      throw DataError(msg.str());
    }
    expect = spans[i].end;
  }
  if (expect != token_count) {
    std::ostringstream msg;
    msg << "line spans cover " << expect << " of " << token_count << " tokens";
    throw DataError(msg.str());
  }
}

AlignmentMap align(std::span<const GeneratorToken> gen,
                   std::span<const Token> norm) {
  // Character offsets of both tokenizations, checked for identical text.
  std::vector<std::size_t> gen_start(gen.size() + 1, 0);
  for (std::size_t g = 0; g < gen.size(); ++g)
    gen_start[g + 1] = gen_start[g] + gen[g].text.size();
  std::vector<std::size_t> norm_start(norm.size() + 1, 0);
  for (std::size_t k = 0; k < norm.size(); ++k) {
    if (norm[k].empty()) throw DataError("normalized token " + std::to_string(k) + " is empty");
    norm_start[k + 1] = norm_start[k] + norm[k].size();
  }

  {
    std::size_t g = 0, gi = 0, k = 0, ki = 0, offset = 0;
    while (true) {
      while (g < gen.size() && gi == gen[g].text.size()) { ++g; gi = 0; }
      while (k < norm.size() && ki == norm[k].size()) { ++k; ki = 0; }
      const bool gen_done = g == gen.size();
      const bool norm_done = k == norm.size();
      if (gen_done && norm_done) break;
      if (gen_done || norm_done || gen[g].text[gi] != norm[k][ki]) {
        throw DataError("generator and normalized text diverge at character offset " +
                        std::to_string(offset));
      }
      ++gi;
      ++ki;
      ++offset;
    }
  }

  AlignmentMap map;
  map.ranges.assign(norm.size(), {0, 0});
  if (norm.empty()) return map;
  std::size_t g = 0;
  for (std::size_t k = 0; k < norm.size(); ++k) {
    const std::size_t lo = norm_start[k];
    const std::size_t hi = norm_start[k + 1];
    // Skip generator tokens that end at or before this token begins; empty
    // ones sitting exactly at lo belong here.
    while (g < gen.size() && gen_start[g + 1] <= lo &&
           !(gen_start[g] == lo && gen[g].text.empty()))
      ++g;
    std::size_t last = g;
    while (last < gen.size() && gen_start[last] < hi) ++last;
    // Empty tokens at the very end of the text go to the final token.
    if (k + 1 == norm.size()) last = gen.size();
    map.ranges[k] = {g, last};
    // The next token may share a straddling generator token.
    if (last > g && gen_start[last] > hi) g = last - 1;
    else g = last;
  }
  return map;
}

std::vector<double> align_probs(std::span<const GeneratorToken> gen,
                                std::span<const Token> norm, ProbMerge merge) {
  const AlignmentMap map = align(gen, norm);
  std::vector<double> out(norm.size(), 0.0);
  for (std::size_t k = 0; k < norm.size(); ++k) {
    const auto [first, last] = map.ranges[k];
    if (merge == ProbMerge::kMin) {
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t g = first; g < last; ++g) m = std::min(m, gen[g].prob);
      out[k] = m;
    } else {
      double s = 0.0;
      for (std::size_t g = first; g < last; ++g) s += gen[g].prob;
      out[k] = s / static_cast<double>(last - first);
    }
  }
  return out;
}

}  // namespace loccal::tok
