#include <doctest.h>

#include <cmath>
#include <regex>
#include <string>
#include <vector>

#include "loccal/confidence.hpp"
#include "loccal/diff_label.hpp"
#include "loccal/random.hpp"
#include "oracles.hpp"

using namespace loccal;

TEST_SUITE("confidence") {
  TEST_CASE("aggregators") {
    const std::vector<double> v{0.9, 0.2, 0.8};
    CHECK(confidence::aggregate(v, TokenAgg::kMin) == 0.2);
    CHECK(confidence::aggregate(v, TokenAgg::kMean) == doctest::Approx((0.9 + 0.2 + 0.8) / 3.0));
    const std::vector<double> g{0.25, 1.0};
    CHECK(confidence::aggregate(g, TokenAgg::kGmean) == doctest::Approx(0.5));
    const std::vector<double> z{0.0, 0.7};
    CHECK(confidence::aggregate(z, TokenAgg::kGmean) == 0.0);
  }

  TEST_CASE("tokenprob assignment marks empty lines") {
    const std::vector<double> p{0.9, 0.2, 0.8};
    const std::vector<LineSpan> spans{{0, 2}, {2, 2}, {2, 3}};
    const auto a = confidence::tokenprob_confidence(p, spans, TokenAgg::kMin);
    CHECK(a.line_conf == std::vector<double>{0.2, 1.0, 0.8});
    CHECK(a.vacuous_lines == std::vector<std::size_t>{1});
    CHECK(a.problem_conf == 0.2);
  }

  TEST_CASE("three of five variants") {
    const TokenList s{"a", "t", "b"};
    const std::vector<TokenList> v{s, s, s, {"a", "u", "b"}, {"a", "b"}};
    const auto conf = confidence::multisample_token_confidence(s, v);
    CHECK(conf[1] == 0.6);
    CHECK(conf[0] == 1.0);
  }

  TEST_CASE("identical and empty variants") {
    const TokenList s{"x", "=", "1"};
    CHECK(confidence::multisample_token_confidence(s, std::vector<TokenList>(4, s)) ==
          std::vector<double>(3, 1.0));
    CHECK(confidence::multisample_token_confidence(s, std::vector<TokenList>(4)) ==
          std::vector<double>(3, 0.0));
  }

  TEST_CASE("token confidence equals counting over variants") {
    Rng rng(12);
    for (int t = 0; t < 200; ++t) {
      TokenList s(1 + rng.index(8));
      for (auto& x : s) x = std::string(1, static_cast<char>('a' + rng.index(3)));
      std::vector<TokenList> vars(5);
      for (auto& v : vars) {
        v.resize(rng.index(10));
        for (auto& x : v) x = std::string(1, static_cast<char>('a' + rng.index(3)));
      }
      const auto conf = confidence::multisample_token_confidence(s, vars);
      for (std::size_t i = 0; i < s.size(); ++i) {
        int count = 0;
        for (const auto& v : vars) count += oracle::kept(s, v)[i];
        REQUIRE(conf[i] == static_cast<double>(count) / 5.0);
      }
    }
  }

  TEST_CASE("line aggregation") {
    const std::vector<double> tc{0.6, 1.0, 0.8};
    const std::vector<LineSpan> sp{{0, 3}};
    const TokenList s{"a", "b", "c"};
    const std::vector<TokenList> none;
    CHECK(confidence::multisample_line_confidence(tc, sp, s, none, LineAgg::kMean)[0] ==
          doctest::Approx(0.8));
    CHECK(confidence::multisample_line_confidence(tc, sp, s, none, LineAgg::kMin)[0] == 0.6);
    const double gm = confidence::multisample_line_confidence(tc, sp, s, none, LineAgg::kGmean)[0];
    CHECK(gm == doctest::Approx(std::cbrt(0.6 * 0.8)));
    CHECK(0.6 <= gm);
    CHECK(gm <= 0.8);
    const std::vector<double> ones(3, 1.0);
    const std::vector<TokenList> same(3, s);
    for (LineAgg m : {LineAgg::kMean, LineAgg::kGmean, LineAgg::kMin, LineAgg::kPreMin,
                      LineAgg::kPreMean})
      CHECK(confidence::multisample_line_confidence(ones, sp, s, same, m)[0] == 1.0);
    CHECK_THROWS(line_agg_from_string("median"));
  }

  TEST_CASE("pre_min keeps whole lines") {
    const TokenStream s = tok::normalize_tokenize("a = 1\nb = 2\n");
    std::vector<TokenList> v{tok::normalize_tokenize("a = 1\nb = 3\n").tokens,
                             tok::normalize_tokenize("a = 1\nb = 2\n").tokens};
    const auto tc = confidence::multisample_token_confidence(s.tokens, v);
    const auto lc = confidence::multisample_line_confidence(tc, s.line_spans, s.tokens, v,
                                                            LineAgg::kPreMin);
    CHECK(lc == std::vector<double>{1.0, 0.5});
  }

  TEST_CASE("reflective prompt fields re-extract") {
    const std::string code = "x = 1\nprint(x)\n";
    const std::vector<std::string> lines{"x = 1", "print(x)"};
    const auto p = confidence::build_reflective_prompt(code, lines);
    CHECK(p.warnings.empty());
    std::smatch m;
    REQUIRE(std::regex_search(p.text, m, std::regex("length (\\d+)")));
    CHECK(m[1] == "2");
    REQUIRE(std::regex_search(p.text, m, std::regex("\"x = 1\",\\n\\s*\"print\\(x\\)\"")));
    CHECK(p.text.find(code) != std::string::npos);
    const auto empty = confidence::build_reflective_prompt("", {});
    CHECK(std::regex_search(empty.text, m, std::regex("length (\\d+)")));
    CHECK(m[1] == "0");
    CHECK(!empty.warnings.empty());
  }

  TEST_CASE("reflective parsing") {
    auto r = confidence::parse_reflective_response("Sure.\n```\n[0.9, 0.8]\n```", 2, 0.3);
    CHECK(r.compliant);
    CHECK(r.line_conf == std::vector<double>{0.9, 0.8});
    r = confidence::parse_reflective_response("```\n[0.9, 0.8, 0.1]\n```", 2, 0.3);
    CHECK(!r.compliant);
    CHECK(r.line_conf == std::vector<double>{0.3, 0.3});
    r = confidence::parse_reflective_response("```\n[0.9, 1.7]\n```", 2, 0.3);
    CHECK(!r.compliant);
    r = confidence::parse_reflective_response(
        "```python\n[0.1, 0.2]\n```\nrevised:\n```python\n[0.5, 0.6]\n```", 2, 0.3);
    CHECK(r.line_conf == std::vector<double>{0.5, 0.6});
    r = confidence::parse_reflective_response("no list here", 1, 0.4);
    CHECK(r.line_conf == std::vector<double>{0.4});
  }

  TEST_CASE("deaggregation") {
    CHECK(confidence::deaggregate_line_to_token(std::vector<double>{0.4},
                                                std::vector<LineSpan>{{0, 3}}) ==
          std::vector<double>(3, 0.4));
    CHECK(confidence::deaggregate_line_to_token(std::vector<double>{0.2, 0.9},
                                                std::vector<LineSpan>{{0, 1}, {1, 3}}) ==
          std::vector<double>{0.2, 0.9, 0.9});
    CHECK(confidence::deaggregate_line_to_token(std::vector<double>{0.2, 0.5, 0.9},
                                                std::vector<LineSpan>{{0, 1}, {1, 1}, {1, 2}}) ==
          std::vector<double>{0.2, 0.9});
  }
}
