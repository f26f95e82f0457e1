#include "loccal/diff_label.hpp"

#include <algorithm>
#include <tuple>
#include <unordered_map>

#include "loccal/error.hpp"

namespace loccal {

std::string to_string(DiffTag tag) {
  switch (tag) {
    case DiffTag::kEqual: return "equal";
    case DiffTag::kReplace: return "replace";
    case DiffTag::kDelete: return "delete";
    case DiffTag::kInsert: return "insert";
  }
  return "?";
}

namespace diff {
namespace {

// Tokens interned to dense ids so the match search compares integers.
struct Interned {
  std::vector<int> a, b;
  std::vector<std::vector<std::size_t>> b_positions;  // id -> ascending positions in b
};

Interned intern(std::span<const Token> a, std::span<const Token> b) {
  std::unordered_map<std::string_view, int> ids;
  Interned out;
  auto id_of = [&](const Token& t) {
    auto [it, fresh] = ids.try_emplace(t, static_cast<int>(ids.size()));
    return it->second;
  };
  out.b.reserve(b.size());
  for (const Token& t : b) out.b.push_back(id_of(t));
  out.a.reserve(a.size());
  for (const Token& t : a) out.a.push_back(id_of(t));
  out.b_positions.resize(ids.size());
  for (std::size_t j = 0; j < out.b.size(); ++j)
    out.b_positions[static_cast<std::size_t>(out.b[j])].push_back(j);
  return out;
}

class BlockFinder {
 public:
  explicit BlockFinder(const Interned& s)
      : s_(s), prev_(s.b.size() + 1, 0), cur_(s.b.size() + 1, 0) {}

  // Longest a[alo,ahi) / b[blo,bhi) common run. Rows advance over a, so the
  // first maximum found ends (and therefore starts) earliest in a; within a
  // row b positions ascend.
  MatchingBlock longest(std::size_t alo, std::size_t ahi, std::size_t blo, std::size_t bhi) {
    MatchingBlock best{alo, blo, 0};
    prev_touched_.clear();
    for (std::size_t i = alo; i < ahi; ++i) {
      cur_touched_.clear();
      const auto& positions = s_.b_positions[static_cast<std::size_t>(s_.a[i])];
      auto it = std::lower_bound(positions.begin(), positions.end(), blo);
      for (; it != positions.end() && *it < bhi; ++it) {
        const std::size_t j = *it;
        const std::size_t k = (j > blo ? prev_[j] : 0) + 1;  // prev_[j] is run ending at j-1
        cur_[j + 1] = k;
        cur_touched_.push_back(j + 1);
        if (k > best.size) best = {i + 1 - k, j + 1 - k, k};
      }
      for (std::size_t t : prev_touched_) prev_[t] = 0;
      std::swap(prev_, cur_);
      std::swap(prev_touched_, cur_touched_);
    }
    for (std::size_t t : prev_touched_) prev_[t] = 0;
    prev_touched_.clear();
    return best;
  }

 private:
  const Interned& s_;
  std::vector<std::size_t> prev_, cur_;
  std::vector<std::size_t> prev_touched_, cur_touched_;
};

}  // namespace

std::vector<MatchingBlock> matching_blocks(std::span<const Token> a, std::span<const Token> b) {
  const Interned s = intern(a, b);
  BlockFinder finder(s);
  std::vector<MatchingBlock> blocks;
  std::vector<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>> queue;
  queue.emplace_back(0, a.size(), 0, b.size());
  while (!queue.empty()) {
    const auto [alo, ahi, blo, bhi] = queue.back();
    queue.pop_back();
    const MatchingBlock m = finder.longest(alo, ahi, blo, bhi);
    if (m.size == 0) continue;
    blocks.push_back(m);
    if (alo < m.a && blo < m.b) queue.emplace_back(alo, m.a, blo, m.b);
    if (m.a + m.size < ahi && m.b + m.size < bhi)
      queue.emplace_back(m.a + m.size, ahi, m.b + m.size, bhi);
  }
  std::sort(blocks.begin(), blocks.end(), [](const MatchingBlock& x, const MatchingBlock& y) {
    return std::tie(x.a, x.b, x.size) < std::tie(y.a, y.b, y.size);
  });
  std::vector<MatchingBlock> merged;
  for (const MatchingBlock& m : blocks) {
    if (!merged.empty() && merged.back().a + merged.back().size == m.a &&
        merged.back().b + merged.back().size == m.b) {
      merged.back().size += m.size;
    } else {
      merged.push_back(m);
    }
  }
  return merged;
}

TokenDiff token_diff(std::span<const Token> a, std::span<const Token> b) {
  std::vector<MatchingBlock> blocks = matching_blocks(a, b);
  blocks.push_back({a.size(), b.size(), 0});
  TokenDiff d;
  std::size_t i = 0, j = 0;
  for (const MatchingBlock& m : blocks) {
    if (i < m.a && j < m.b) d.ops.push_back({DiffTag::kReplace, i, m.a, j, m.b});
    else if (i < m.a) d.ops.push_back({DiffTag::kDelete, i, m.a, j, m.b});
    else if (j < m.b) d.ops.push_back({DiffTag::kInsert, i, m.a, j, m.b});
    i = m.a + m.size;
    j = m.b + m.size;
    if (m.size) d.ops.push_back({DiffTag::kEqual, m.a, i, m.b, j});
  }
  return d;
}

TokenList apply(const TokenDiff& d, std::span<const Token> a, std::span<const Token> b) {
  TokenList out;
  for (const DiffOp& op : d.ops) {
    if (op.tag == DiffTag::kEqual) {
      out.insert(out.end(), a.begin() + static_cast<std::ptrdiff_t>(op.a_begin),
                 a.begin() + static_cast<std::ptrdiff_t>(op.a_end));
    } else {
      out.insert(out.end(), b.begin() + static_cast<std::ptrdiff_t>(op.b_begin),
                 b.begin() + static_cast<std::ptrdiff_t>(op.b_end));
    }
  }
  return out;
}

std::vector<bool> kept_tokens(const TokenDiff& d, std::size_t solution_size) {
  std::vector<bool> kept(solution_size, false);
  for (std::size_t k = 0; k < d.ops.size(); ++k) {
    const DiffOp& op = d.ops[k];
    if (op.tag != DiffTag::kEqual) continue;
    const bool insert_before = k > 0 && d.ops[k - 1].tag == DiffTag::kInsert;
    for (std::size_t i = op.a_begin; i < op.a_end; ++i) kept[i] = true;
    if (insert_before && op.a_end > op.a_begin) kept[op.a_begin] = false;
  }
  return kept;
}

bool has_trailing_insert(const TokenDiff& d, std::size_t solution_size) {
  return !d.ops.empty() && d.ops.back().tag == DiffTag::kInsert &&
         d.ops.back().a_begin == solution_size;
}

AggregatedLabels aggregate_labels(const std::vector<bool>& token_kept,
                                  std::span<const LineSpan> spans) {
  tok::check_partition(spans, token_kept.size());
  AggregatedLabels out;
  out.line_kept.reserve(spans.size());
  for (const LineSpan& s : spans) {
    bool all = true;
    for (std::size_t i = s.begin; i < s.end; ++i) all = all && token_kept[i];
    out.line_kept.push_back(all);
    out.problem_kept = out.problem_kept && all;
  }
  return out;
}

KeptLabels kept_labels(std::span<const Token> solution, std::span<const LineSpan> line_spans,
                       std::span<const Token> patch) {
  const TokenDiff d = token_diff(solution, patch);
  KeptLabels out;
  out.token_kept = kept_tokens(d, solution.size());
  AggregatedLabels agg = aggregate_labels(out.token_kept, line_spans);
  out.line_kept = std::move(agg.line_kept);
  out.problem_kept = agg.problem_kept && !has_trailing_insert(d, solution.size());
  return out;
}

std::size_t changed_line_count(std::span<const Token> solution, std::span<const Token> candidate) {
  const TokenList a = tok::line_strings(solution, tok::line_spans_of(solution));
  const TokenList b = tok::line_strings(candidate, tok::line_spans_of(candidate));
  const TokenDiff d = token_diff(a, b);
  std::size_t count = 0;
  for (const DiffOp& op : d.ops) {
    const std::size_t removed = op.a_end - op.a_begin;
    const std::size_t added = op.b_end - op.b_begin;
    switch (op.tag) {
      case DiffTag::kEqual: break;
      case DiffTag::kReplace: count += std::max(removed, added); break;
      case DiffTag::kDelete: count += removed; break;
      case DiffTag::kInsert: count += added; break;
    }
  }
  return count;
}

std::optional<PatchCandidate> select_minimal_patch(std::span<const PatchCandidate> candidates,
                                                   std::span<const Token> solution) {
  std::optional<std::size_t> best;
  std::tuple<std::size_t, int, std::size_t> best_key{};
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const PatchCandidate& c = candidates[i];
    if (!c.passes_tests) continue;
    const auto key = std::make_tuple(changed_line_count(solution, c.tokens),
                                     c.source == PatchSource::kModelFixer ? 0 : 1, i);
    if (!best || key < best_key) {
      best = i;
      best_key = key;
    }
  }
  if (!best) return std::nullopt;
  return candidates[*best];
}

}  // namespace diff
}  // namespace loccal
