#include <doctest.h>

#include <string>
#include <vector>

#include "loccal/diff_label.hpp"
#include "loccal/error.hpp"
#include "loccal/random.hpp"
#include "oracles.hpp"

using namespace loccal;

namespace {

TokenList random_tokens(Rng& rng, std::size_t max_len, std::size_t alphabet) {
  TokenList t(rng.index(max_len + 1));
  for (auto& s : t) s = std::string(1, static_cast<char>('a' + rng.index(alphabet)));
  return t;
}

std::vector<LineSpan> one_line(std::size_t n) {
  if (n == 0) return {};
  return {{0, n}};
}

}  // namespace

TEST_SUITE("diff") {
  TEST_CASE("identity") {
    const TokenList a{"x"};
    const TokenDiff d = diff::token_diff(a, a);
    REQUIRE(d.ops.size() == 1);
    CHECK(d.ops[0].tag == DiffTag::kEqual);
  }

  TEST_CASE("replace in the middle") {
    const TokenList a{"a", "b", "c"}, b{"a", "x", "c"};
    const TokenDiff d = diff::token_diff(a, b);
    REQUIRE(d.ops.size() == 3);
    CHECK(d.ops[0].tag == DiffTag::kEqual);
    CHECK(d.ops[1] == DiffOp{DiffTag::kReplace, 1, 2, 1, 2});
    CHECK(d.ops[2].tag == DiffTag::kEqual);
    const std::vector<LineSpan> lines{{0, 2}, {2, 3}};
    const KeptLabels k = diff::kept_labels(a, lines, b);
    CHECK(k.token_kept == std::vector<bool>{true, false, true});
    CHECK(k.line_kept == std::vector<bool>{false, true});
    CHECK(!k.problem_kept);
  }

  TEST_CASE("insertion before a token") {
    const TokenList a{"a", "c"}, b{"a", "b", "c"};
    const KeptLabels k = diff::kept_labels(a, one_line(2), b);
    CHECK(k.token_kept == std::vector<bool>{true, false});
  }

  TEST_CASE("trailing insert fails only the problem") {
    const TokenList a{"a", "b"}, b{"a", "b", "c"};
    const KeptLabels k = diff::kept_labels(a, one_line(2), b);
    CHECK(k.token_kept == std::vector<bool>{true, true});
    CHECK(k.line_kept == std::vector<bool>{true});
    CHECK(!k.problem_kept);
    CHECK(diff::has_trailing_insert(diff::token_diff(a, b), 2));
  }

  TEST_CASE("identical sequences are all kept") {
    const TokenList a{"p", "q", "p", "r"};
    const KeptLabels k = diff::kept_labels(a, one_line(4), a);
    CHECK(k.token_kept == std::vector<bool>(4, true));
    CHECK(k.problem_kept);
  }

  TEST_CASE("random pairs reconstruct and match the reference") {
    Rng rng(21);
    for (int t = 0; t < 1000; ++t) {
      const TokenList a = random_tokens(rng, 14, 4);
      const TokenList b = random_tokens(rng, 14, 4);
      const TokenDiff d = diff::token_diff(a, b);
      REQUIRE(diff::apply(d, a, b) == b);
      REQUIRE(oracle::rebuild(a, b) == b);
      std::size_t pa = 0, pb = 0;
      for (const DiffOp& op : d.ops) {
        REQUIRE(op.a_begin == pa);
        REQUIRE(op.b_begin == pb);
        if (op.tag == DiffTag::kEqual)
          for (std::size_t i = 0; i < op.a_end - op.a_begin; ++i)
            REQUIRE(a[op.a_begin + i] == b[op.b_begin + i]);
        pa = op.a_end;
        pb = op.b_end;
      }
      REQUIRE(pa == a.size());
      REQUIRE(pb == b.size());
      REQUIRE(diff::kept_tokens(d, a.size()) == oracle::kept(a, b));
    }
  }

  TEST_CASE("matching blocks follow the tie rule") {
    Rng rng(4);
    for (int t = 0; t < 300; ++t) {
      const TokenList a = random_tokens(rng, 10, 3);
      const TokenList b = random_tokens(rng, 10, 3);
      std::vector<oracle::Block> raw;
      oracle::blocks_rec(a, b, 0, a.size(), 0, b.size(), raw);
      std::vector<MatchingBlock> expect;
      for (const auto& m : raw) {
        if (!expect.empty() && expect.back().a + expect.back().size == m.a &&
            expect.back().b + expect.back().size == m.b)
          expect.back().size += m.size;
        else
          expect.push_back({m.a, m.b, m.size});
      }
      REQUIRE(diff::matching_blocks(a, b) == expect);
    }
  }

  TEST_CASE("aggregate_labels") {
    const std::vector<LineSpan> spans{{0, 2}, {2, 3}, {3, 5}};
    const auto all = diff::aggregate_labels({true, true, true, true, true}, spans);
    CHECK(all.line_kept == std::vector<bool>{true, true, true});
    CHECK(all.problem_kept);
    const auto one = diff::aggregate_labels({true, true, false, true, true}, spans);
    CHECK(one.line_kept == std::vector<bool>{true, false, true});
    CHECK(!one.problem_kept);
    CHECK_THROWS_AS(diff::aggregate_labels({true, true}, spans), DataError);

    Rng rng(8);
    for (int t = 0; t < 200; ++t) {
      std::vector<LineSpan> sp;
      std::size_t pos = 0;
      const std::size_t lines = 1 + rng.index(5);
      for (std::size_t l = 0; l < lines; ++l) {
        const std::size_t len = rng.index(4);
        sp.push_back({pos, pos + len});
        pos += len;
      }
      std::vector<bool> kept(pos);
      for (std::size_t i = 0; i < pos; ++i) kept[i] = rng.bernoulli(0.8);
      const auto got = diff::aggregate_labels(kept, sp);
      bool all_kept = true;
      for (std::size_t l = 0; l < sp.size(); ++l) {
        bool v = true;
        for (std::size_t i = sp[l].begin; i < sp[l].end; ++i) v = v && kept[i];
        REQUIRE(got.line_kept[l] == v);
        all_kept = all_kept && v;
      }
      REQUIRE(got.problem_kept == all_kept);
    }
  }

  TEST_CASE("minimal patch selection") {
    const TokenList sol = tok::normalize_tokenize("a\nb\nc\nd\n").tokens;
    PatchCandidate three, one, ref_one, failing;
    three.tokens = tok::normalize_tokenize("x\ny\nz\nd\n").tokens;
    three.passes_tests = true;
    one.tokens = tok::normalize_tokenize("a\nB\nc\nd\n").tokens;
    one.passes_tests = true;
    one.fixer_name = "one";
    ref_one = one;
    ref_one.source = PatchSource::kReferenceFallback;
    failing.tokens = sol;
    failing.passes_tests = false;
    CHECK(diff::changed_line_count(sol, three.tokens) == 3);
    CHECK(diff::changed_line_count(sol, one.tokens) == 1);

    const std::vector<PatchCandidate> c1{three, failing, ref_one, one};
    const auto pick = diff::select_minimal_patch(c1, sol);
    REQUIRE(pick);
    CHECK(pick->source == PatchSource::kModelFixer);
    CHECK(pick->tokens == one.tokens);

    PatchCandidate same;
    same.tokens = sol;
    same.passes_tests = true;
    const std::vector<PatchCandidate> c2{one, same};
    CHECK(diff::select_minimal_patch(c2, sol)->tokens == sol);
    CHECK(!diff::select_minimal_patch(std::vector<PatchCandidate>{}, sol));
    CHECK(!diff::select_minimal_patch(std::vector<PatchCandidate>{failing}, sol));
  }
}
