#include <doctest.h>

#include <cmath>
#include <vector>

#include "loccal/calib.hpp"
#include "loccal/error.hpp"
#include "loccal/random.hpp"
#include "oracles.hpp"

using namespace loccal;

namespace {

std::vector<PredictionSample> make(const std::vector<double>& p, const std::vector<int>& y,
                                   Granularity g = Granularity::kToken) {
  std::vector<PredictionSample> s(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    s[i].confidence = p[i];
    s[i].outcome = y[i] != 0;
    s[i].granularity = g;
    s[i].dataset = i % 2 ? "odd" : "even";
    s[i].problem_id = "p" + std::to_string(i / 3);
  }
  return s;
}

}  // namespace

TEST_SUITE("calib") {
  TEST_CASE("brier") {
    CHECK(calib::brier(make({1, 0}, {1, 0})) == 0.0);
    CHECK(calib::brier(make({0.5, 0.5, 0.5}, {1, 0, 0})) == 0.25);
    CHECK(calib::brier(make({0.8, 0.4, 0.9}, {1, 0, 1})) == doctest::Approx(0.07));
    CHECK(calib::brier_ref(0.5) == 0.25);
    CHECK(calib::brier_ref(0.0) == 0.0);
    CHECK(calib::brier_ref(1.0) == 0.0);
    CHECK(calib::brier_ref(0.25) == 0.1875);
  }

  TEST_CASE("skill score") {
    CHECK(calib::skill_score(0.2, 0.2) == 0.0);
    CHECK(calib::skill_score(0.0, 0.2) == 1.0);
    CHECK(calib::skill_score(0.15, 0.1875) == doctest::Approx(0.2));
    CHECK_THROWS_AS(calib::skill_score(0.1, 0.0), DataError);
  }

  TEST_CASE("ece") {
    std::vector<double> p(10, 0.7);
    std::vector<int> y{1, 1, 1, 1, 1, 1, 1, 0, 0, 0};
    CHECK(calib::ece(make(p, y)).ece == doctest::Approx(0.0));
    CHECK(calib::ece(make({0.2, 0.4, 0.6, 0.8}, {0, 1, 1, 1}), 2).ece == doctest::Approx(0.25));
    const auto s = make({0.1, 0.3, 0.9}, {1, 0, 0});
    CHECK(calib::ece(s, 1).ece == doctest::Approx(std::abs(1.3 / 3 - 1.0 / 3)));
    const auto r = calib::ece(make({1.0, 0.0}, {1, 0}), 10);
    CHECK(r.buckets.back().count == 1);
    CHECK(r.buckets.front().count == 1);
    CHECK_THROWS(calib::ece(std::vector<PredictionSample>{}));
  }

  TEST_CASE("auc") {
    CHECK(calib::auc_roc(make({0.9, 0.8, 0.1}, {1, 1, 0})) == 1.0);
    CHECK(calib::auc_roc(make({0.5, 0.5, 0.5}, {1, 0, 1})) == 0.5);
    CHECK(calib::auc_roc(make({0.9, 0.4, 0.6}, {1, 1, 0})) == 0.5);
    CHECK_THROWS_AS(calib::auc_roc(make({0.2, 0.3}, {1, 1})), DataError);
  }

  TEST_CASE("random sets match oracles") {
    Rng rng(17);
    for (int t = 0; t < 300; ++t) {
      const std::size_t n = 2 + rng.index(60);
      std::vector<double> p(n);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        // Coarse grid so that ties and bucket edges occur.
        p[i] = rng.bernoulli(0.5) ? static_cast<double>(rng.index(11)) / 10.0 : rng.uniform();
        y[i] = rng.bernoulli(0.4);
      }
      y[0] = 1;
      y[1] = 0;
      const auto s = make(p, y);
      REQUIRE(std::abs(calib::brier(s) - oracle::brier(p, y)) < 1e-12);
      const std::size_t m = 1 + rng.index(12);
      REQUIRE(std::abs(calib::ece(s, m).ece - oracle::ece(p, y, static_cast<int>(m))) < 1e-12);
      REQUIRE(std::abs(calib::auc_roc(s) - oracle::auc(p, y)) < 1e-12);
    }
  }

  TEST_CASE("platt fit recovers a sigmoid link") {
    Rng rng(23);
    std::vector<double> p(10000);
    std::vector<int> y(10000);
    const double a = 1.7, b = -0.4;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = rng.uniform(0.01, 0.99);
      y[i] = rng.bernoulli(oracle::sigmoid(a * std::log(p[i] / (1 - p[i])) + b));
    }
    const PlattParams fit = calib::fit_platt(make(p, y));
    CHECK(fit.scale == doctest::Approx(a).epsilon(0.05 / a));
    CHECK(std::abs(fit.bias - b) < 0.05);
  }

  TEST_CASE("platt handles extremes") {
    const PlattParams fit = calib::fit_platt(make({0.0, 1.0, 0.0, 1.0, 0.5}, {0, 1, 1, 0, 1}));
    CHECK(std::isfinite(fit.scale));
    CHECK(std::isfinite(fit.bias));
    CHECK_THROWS(calib::fit_platt(make({0.2, 0.4}, {1, 1})));
  }

  TEST_CASE("apply_platt") {
    CHECK(calib::apply_platt({1.0, 0.0}, 0.3) == doctest::Approx(0.3));
    CHECK(calib::apply_platt({0.0, 0.7}, 0.1) == calib::apply_platt({0.0, 0.7}, 0.9));
    CHECK(calib::apply_platt({2.0, 0.1}, 0.2) < calib::apply_platt({2.0, 0.1}, 0.3));
    const double hi = calib::apply_platt({1.0, 0.0}, 1.0);
    CHECK(hi < 1.0);
    CHECK(hi > 0.999);
  }

  TEST_CASE("reliability curves") {
    Rng rng(2);
    std::vector<double> p(5000);
    std::vector<int> y(5000);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = rng.uniform();
      y[i] = rng.bernoulli(p[i]);
    }
    const auto eq = calib::reliability_curve(make(p, y), BucketScheme::kEqualWidth, 10);
    REQUIRE(eq.size() == 10);
    for (const auto& pt : eq) {
      CHECK(pt.weight == doctest::Approx(0.1).epsilon(0.2));
      CHECK(std::abs(pt.frequency - pt.mean_confidence) < 0.06);
    }
    const auto q = calib::reliability_curve(make(p, y), BucketScheme::kQuantile, 5);
    REQUIRE(q.size() == 5);
    for (const auto& pt : q) CHECK(pt.weight == doctest::Approx(0.2));
    const auto flat = calib::reliability_curve(make(std::vector<double>(50, 0.4), std::vector<int>(50, 1)),
                                               BucketScheme::kQuantile, 5);
    CHECK(flat.size() == 1);
  }

  TEST_CASE("crossfold identities") {
    std::vector<double> p;
    std::vector<int> y;
    Rng rng(6);
    for (int i = 0; i < 400; ++i) {
      y.push_back(rng.bernoulli(0.3));
      p.push_back(y.back());
    }
    const auto reports =
        calib::crossfold_evaluate(make(p, y), FoldConfig{5, FoldMode::kDisjointKFold, 1}, 10,
                                  EvalScope::kCumulative);
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].partition == "all");
    CHECK(reports[0].bss == 1.0);
    CHECK(reports[0].ece == 0.0);
    CHECK(reports[0].folds.size() == 5);

    const double rate = oracle::base_rate(y);
    std::vector<double> constant(p.size(), rate);
    const auto flat = calib::crossfold_evaluate(make(constant, y),
                                                FoldConfig{5, FoldMode::kDisjointKFold, 1}, 10,
                                                EvalScope::kCumulative);
    CHECK(std::abs(flat[0].bss) < 1e-12);
    CHECK(std::abs(flat[0].scaled_bss) < 0.02);

    const auto per = calib::crossfold_evaluate(make(p, y), FoldConfig{5, FoldMode::kDisjointKFold, 1},
                                               10, EvalScope::kPerDataset);
    CHECK(per.size() == 2);
  }

  TEST_CASE("eta squared") {
    auto fr = [](std::vector<std::pair<std::string, double>> v) {
      std::vector<calib::FactorResult> out;
      for (auto& [l, x] : v) out.push_back({{{"f", l}}, x});
      return out;
    };
    CHECK(calib::eta_squared(fr({{"a", 1}, {"a", 1}, {"b", 1}}), "f") == 0.0);
    CHECK(calib::eta_squared(fr({{"a", 1}, {"a", 1}, {"b", 3}, {"b", 3}}), "f") ==
          doctest::Approx(1.0));
    CHECK(calib::eta_squared(fr({{"a", 1}, {"a", 2}, {"b", 3}, {"b", 4}}), "f") ==
          doctest::Approx(0.8));
    CHECK_THROWS(calib::eta_squared(fr({{"a", 1}, {"a", 2}}), "f"));

    Rng rng(3);
    std::vector<std::string> lv;
    std::vector<double> v;
    std::vector<calib::FactorResult> rs;
    for (int i = 0; i < 40; ++i) {
      lv.push_back(std::string(1, static_cast<char>('a' + rng.index(3))));
      v.push_back(rng.normal());
      rs.push_back({{{"f", lv.back()}}, v.back()});
    }
    CHECK(calib::eta_squared(rs, "f") == doctest::Approx(oracle::eta_squared(lv, v)));
  }
}
