#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "loccal/corpus.hpp"
#include "loccal/error.hpp"
#include "loccal/random.hpp"

using namespace loccal;

namespace {

ManifestRecord make_record(const std::string& id, const std::string& code) {
  ManifestRecord r;
  r.problem = {id, "ds", "prompt for " + id, false};
  const TokenStream s = tok::normalize_tokenize(code);
  r.solution.problem_id = id;
  r.solution.tokens = s.tokens;
  r.solution.line_spans = s.line_spans;
  r.solution.token_probs = std::vector<double>(s.tokens.size(), 0.5);
  PatchCandidate p;
  p.problem_id = id;
  p.tokens = s.tokens;
  p.passes_tests = true;
  p.fixer_name = "f";
  r.patches.push_back(p);
  return r;
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("single record manifest") {
    DatasetManifest m;
    m.records.push_back(make_record("p1", "x = 1\n"));
    std::stringstream ss;
    write_manifest(m, ss);
    const DatasetManifest back = parse_manifest(ss);
    CHECK(back.records.size() == 1);
    CHECK(back == m);
  }

  TEST_CASE("round trip with variants and inline embeddings") {
    DatasetManifest m;
    for (int i = 0; i < 4; ++i) {
      ManifestRecord r = make_record("p" + std::to_string(i), "def f():\n  return " + std::to_string(i) + "\n");
      r.solution.variants = std::vector<TokenList>{r.solution.tokens, {}};
      EmbeddingRef e;
      e.tag = "MIDDLE";
      e.dim = 2;
      e.inline_data.assign(r.solution.tokens.size() * 2, 0.25f * static_cast<float>(i));
      r.solution.embeddings = e;
      m.records.push_back(r);
    }
    m.base_rate_cache["ds"] = 0.4;
    std::stringstream ss;
    write_manifest(m, ss);
    std::stringstream again;
    write_manifest(parse_manifest(ss), again);
    std::stringstream first;
    write_manifest(m, first);
    CHECK(again.str() == first.str());
  }

  TEST_CASE("token_probs length mismatch names the record") {
    ManifestRecord r = make_record("bad-7", "a b\n");
    r.solution.token_probs->pop_back();
    try {
      validate_record(r, {});
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("bad-7") != std::string::npos);
    }
  }

  TEST_CASE("duplicate ids rejected") {
    DatasetManifest m;
    m.records.push_back(make_record("dup", "a\n"));
    m.records.push_back(make_record("dup", "b\n"));
    std::stringstream ss;
    write_manifest(m, ss);
    CHECK_THROWS_AS(parse_manifest(ss), DataError);
  }

  TEST_CASE("empty file warns") {
    std::stringstream ss;
    const DatasetManifest m = parse_manifest(ss);
    CHECK(m.records.empty());
    CHECK(!m.warnings.empty());
  }

  TEST_CASE("sidecar embeddings") {
    const auto dir = std::filesystem::temp_directory_path() / "loccal_corpus_sidecar";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    EmbeddingMatrix a{2, 3, {1, 2, 3, 4, 5, 6}};
    EmbeddingMatrix b{1, 3, {7, 8, 9}};
    const auto off_a = append_embeddings(dir / "e.f32", a);
    const auto off_b = append_embeddings(dir / "e.f32", b);
    CHECK(off_a == 0);
    CHECK(off_b == 24);
    EmbeddingRef ref{"LAST", 3, "e.f32", off_b, {}};
    CHECK(read_embeddings(ref, 1, dir) == b);
    ref.offset = off_a;
    CHECK(read_embeddings(ref, 2, dir) == a);
    CHECK_THROWS_AS(read_embeddings(ref, 4, dir), DataError);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("saving elsewhere rebases sidecar paths") {
    const auto dir = std::filesystem::temp_directory_path() / "loccal_corpus_rebase";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir / "a");
    DatasetManifest m;
    ManifestRecord r = make_record("p1", "x\n");
    const EmbeddingMatrix e{r.solution.tokens.size(), 2, {1, 2, 3, 4}};
    r.solution.embeddings = EmbeddingRef{"LAST", 2, "e.f32", append_embeddings(dir / "a" / "e.f32", e), {}};
    m.records.push_back(r);
    m.base_dir = dir / "a";
    save_manifest(m, dir / "moved.jsonl");
    const DatasetManifest back = load_manifest(dir / "moved.jsonl");
    CHECK(back.records[0].solution.embeddings->path == "a/e.f32");
    CHECK(read_embeddings(*back.records[0].solution.embeddings, 2, back.base_dir) == e);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("base_rate") {
    CHECK(base_rate({true, true, false, true}) == 0.75);
    CHECK(base_rate({false, false}) == 0.0);
    CHECK_THROWS_AS(base_rate({}), DataError);
    Rng rng(3);
    std::vector<bool> draws(1000);
    std::size_t count = 0;
    for (std::size_t i = 0; i < draws.size(); ++i) {
      draws[i] = rng.bernoulli(0.3);
      count += draws[i];
    }
    CHECK(base_rate(draws) == static_cast<double>(count) / 1000.0);
    std::vector<bool> neg(draws.size());
    for (std::size_t i = 0; i < draws.size(); ++i) neg[i] = !draws[i];
    CHECK(base_rate(neg) == doctest::Approx(1.0 - base_rate(draws)).epsilon(1e-15));
  }

  TEST_CASE("disjoint folds partition the ids") {
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("id" + std::to_string(i));
    const FoldAssignment f = assign_folds(ids, 5, FoldMode::kDisjointKFold, 9);
    REQUIRE(f.splits.size() == 5);
    std::multiset<std::string> seen;
    for (const FoldSplit& s : f.splits) {
      CHECK(s.test.size() == 2);
      CHECK(s.train.size() == 8);
      seen.insert(s.test.begin(), s.test.end());
      for (const auto& t : s.test)
        CHECK(std::find(s.train.begin(), s.train.end(), t) == s.train.end());
    }
    CHECK(seen == std::multiset<std::string>(ids.begin(), ids.end()));
    CHECK(assign_folds(ids, 5, FoldMode::kDisjointKFold, 9) == f);
    CHECK_THROWS_AS(assign_folds(ids, 11, FoldMode::kDisjointKFold, 9), Error);
  }

  TEST_CASE("repeated random split coverage by enumeration") {
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("id" + std::to_string(i));
    // Coverage fraction over many seeds grows with k toward 1; each split
    // holds out 2 of 10 ids and its train set is the complement.
    double prev = 0.0;
    for (std::size_t k : {2, 5, 10}) {
      double covered = 0;
      for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const FoldAssignment f = assign_folds(ids, k, FoldMode::kRepeatedRandomSplit, seed);
        REQUIRE(f.splits.size() == k);
        std::set<std::string> hit;
        for (const FoldSplit& s : f.splits) {
          REQUIRE(s.test.size() == 2);
          REQUIRE(s.train.size() + s.test.size() == 10);
          hit.insert(s.test.begin(), s.test.end());
        }
        covered += static_cast<double>(hit.size()) / 10.0;
      }
      covered /= 200.0;
      // Expected coverage 1 - (0.8)^k.
      double miss = 1.0;
      for (std::size_t i = 0; i < k; ++i) miss *= 0.8;
      CHECK(covered == doctest::Approx(1.0 - miss).epsilon(0.03));
      CHECK(covered > prev);
      prev = covered;
    }
  }
}
