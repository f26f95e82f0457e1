#include "loccal/calib.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "loccal/error.hpp"

namespace loccal {

std::string to_string(Granularity g) {
  switch (g) {
    case Granularity::kToken: return "token";
    case Granularity::kLine: return "line";
    case Granularity::kProblem: return "problem";
  }
  return "?";
}

Granularity granularity_from_string(const std::string& s) {
  if (s == "token") return Granularity::kToken;
  if (s == "line") return Granularity::kLine;
  if (s == "problem") return Granularity::kProblem;
  throw ConfigError("unknown granularity '" + s + "'");
}

std::string to_string(EvalScope s) {
  switch (s) {
    case EvalScope::kCumulative: return "cumulative";
    case EvalScope::kPerDataset: return "per_dataset";
    case EvalScope::kLeaveOneOut: return "leave_one_out";
  }
  return "?";
}

EvalScope eval_scope_from_string(const std::string& s) {
  if (s == "cumulative") return EvalScope::kCumulative;
  if (s == "per_dataset" || s == "per-dataset") return EvalScope::kPerDataset;
  if (s == "leave_one_out" || s == "leave-one-out") return EvalScope::kLeaveOneOut;
  throw ConfigError("unknown evaluation scope '" + s + "'");
}

namespace calib {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_nonempty(std::span<const PredictionSample> samples, const char* what) {
  if (samples.empty()) throw DataError(std::string(what) + " of an empty sample set");
}

double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

}  // namespace

double brier(std::span<const PredictionSample> samples) {
  require_nonempty(samples, "brier score");
  double s = 0.0;
  for (const PredictionSample& x : samples) {
    const double d = x.confidence - (x.outcome ? 1.0 : 0.0);
    s += d * d;
  }
  return s / static_cast<double>(samples.size());
}

double brier_ref(double base_rate) {
  if (!(base_rate >= 0.0 && base_rate <= 1.0)) throw DataError("base rate outside [0,1]");
  return base_rate * (1.0 - base_rate);
}

double skill_score(double b_model, double b_ref) {
  if (b_ref <= 0.0)
    throw DataError("skill score undefined: reference Brier is zero (degenerate base rate)");
  return (b_ref - b_model) / b_ref;
}

double mean_outcome(std::span<const PredictionSample> samples) {
  require_nonempty(samples, "base rate");
  std::size_t pos = 0;
  for (const PredictionSample& x : samples) pos += x.outcome ? 1 : 0;
  return static_cast<double>(pos) / static_cast<double>(samples.size());
}

EceResult ece(std::span<const PredictionSample> samples, std::size_t m) {
  require_nonempty(samples, "ECE");
  if (m == 0) throw ConfigError("bucket count must be positive");
  EceResult r;
  r.buckets.resize(m);
  std::vector<double> conf_sum(m, 0.0), out_sum(m, 0.0);
  for (const PredictionSample& x : samples) {
    auto b = static_cast<std::size_t>(std::floor(x.confidence * static_cast<double>(m)));
    b = std::min(b, m - 1);
    ++r.buckets[b].count;
    conf_sum[b] += x.confidence;
    out_sum[b] += x.outcome ? 1.0 : 0.0;
  }
  const auto n = static_cast<double>(samples.size());
  for (std::size_t b = 0; b < m; ++b) {
    Bucket& k = r.buckets[b];
    k.lower = static_cast<double>(b) / static_cast<double>(m);
    k.upper = static_cast<double>(b + 1) / static_cast<double>(m);
    if (k.count == 0) continue;
    const auto c = static_cast<double>(k.count);
    k.weight = c / n;
    k.accuracy = out_sum[b] / c;
    k.confidence = conf_sum[b] / c;
    r.ece += k.weight * std::abs(k.accuracy - k.confidence);
  }
  return r;
}

double auc_roc(std::span<const PredictionSample> samples) {
  std::vector<std::pair<double, bool>> v;
  v.reserve(samples.size());
  std::size_t pos = 0;
  for (const PredictionSample& x : samples) {
    v.emplace_back(x.confidence, x.outcome);
    pos += x.outcome ? 1 : 0;
  }
  const std::size_t neg = v.size() - pos;
  if (pos == 0 || neg == 0) throw DataError("AUC undefined: samples contain a single class");
  std::sort(v.begin(), v.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // Sum of positive ranks with ties sharing the average rank.
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < v.size()) {
    std::size_t j = i;
    std::size_t pos_in_tie = 0;
    while (j < v.size() && v[j].first == v[i].first) {
      pos_in_tie += v[j].second ? 1 : 0;
      ++j;
    }
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    rank_sum += avg_rank * static_cast<double>(pos_in_tie);
    i = j;
  }
  const auto p = static_cast<double>(pos);
  const auto q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

double clamp_prob(double p) { return std::clamp(p, kPlattClamp, 1.0 - kPlattClamp); }

}  // namespace

PlattParams fit_platt(std::span<const PredictionSample> samples) {
  require_nonempty(samples, "Platt fit");
  const double rate = mean_outcome(samples);
  if (rate == 0.0 || rate == 1.0)
    throw DataError("Platt fit is degenerate: samples contain a single class");
  const std::size_t n = samples.size();
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = logit(clamp_prob(samples[i].confidence));
    y[i] = samples[i].outcome ? 1.0 : 0.0;
  }
  const auto inv_n = 1.0 / static_cast<double>(n);
  auto loss = [&](double a, double b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = a * x[i] + b;
      s += softplus(z) - y[i] * z;
    }
    return s * inv_n;
  };

  PlattParams p{1.0, 0.0};
  double current = loss(p.scale, p.bias);
  for (int iter = 0; iter < 100; ++iter) {
    double ga = 0, gb = 0, haa = 0, hab = 0, hbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double q = sigmoid(p.scale * x[i] + p.bias);
      const double r = q - y[i];
      const double w = q * (1.0 - q);
      ga += r * x[i];
      gb += r;
      haa += w * x[i] * x[i];
      hab += w * x[i];
      hbb += w;
    }
    ga *= inv_n; gb *= inv_n; haa *= inv_n; hab *= inv_n; hbb *= inv_n;
    if (std::max(std::abs(ga), std::abs(gb)) < 1e-10) break;
    // A small ridge keeps the step defined when all inputs coincide.
    const double ridge = 1e-12 * (haa + hbb) + 1e-300;
    haa += ridge;
    hbb += ridge;
    const double det = haa * hbb - hab * hab;
    double da, db;
    if (det > 0 && std::isfinite(det)) {
      da = -(hbb * ga - hab * gb) / det;
      db = -(haa * gb - hab * ga) / det;
    } else {
      da = -ga;
      db = -gb;
    }
    double step = 1.0;
    bool improved = false;
    for (int halving = 0; halving < 40; ++halving) {
      const double na = p.scale + step * da;
      const double nb = p.bias + step * db;
      const double l = loss(na, nb);
      if (l <= current) {
        p = {na, nb};
        improved = l < current;
        current = l;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;
  }
  if (!std::isfinite(p.scale) || !std::isfinite(p.bias))
    throw DataError("Platt fit diverged");
  return p;
}

double apply_platt(const PlattParams& params, double p) {
  return sigmoid(params.scale * logit(clamp_prob(p)) + params.bias);
}

std::vector<PredictionSample> apply_platt(const PlattParams& params,
                                          std::span<const PredictionSample> samples) {
  std::vector<PredictionSample> out(samples.begin(), samples.end());
  for (PredictionSample& s : out) s.confidence = apply_platt(params, s.confidence);
  return out;
}

std::vector<CurvePoint> reliability_curve(std::span<const PredictionSample> samples,
                                          BucketScheme scheme, std::size_t buckets) {
  std::vector<CurvePoint> points;
  if (samples.empty() || buckets == 0) return points;
  if (scheme == BucketScheme::kEqualWidth) {
    for (const Bucket& b : ece(samples, buckets).buckets) {
      if (b.count == 0) continue;
      points.push_back({b.confidence, b.accuracy, b.weight});
    }
    return points;
  }
  std::vector<std::pair<double, bool>> v;
  for (const PredictionSample& s : samples) v.emplace_back(s.confidence, s.outcome);
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  const std::size_t n = v.size();
  std::size_t start = 0;
  for (std::size_t q = 1; q <= buckets && start < n; ++q) {
    std::size_t end = q == buckets ? n : (n * q) / buckets;
    if (end <= start) continue;
    // Extend past equal confidences so ties stay in one bucket.
    while (end < n && v[end].first == v[end - 1].first) ++end;
    double cs = 0, os = 0;
    for (std::size_t i = start; i < end; ++i) {
      cs += v[i].first;
      os += v[i].second ? 1.0 : 0.0;
    }
    const auto c = static_cast<double>(end - start);
    points.push_back({cs / c, os / c, c / static_cast<double>(n)});
    start = end;
  }
  return points;
}

namespace {

struct PartitionKey {
  std::string partition;
  Granularity granularity;
  auto operator<=>(const PartitionKey&) const = default;
};

CalibrationReport evaluate_partition(const std::vector<PredictionSample>& s,
                                     const PartitionKey& key, const FoldConfig& folds,
                                     std::size_t m, EvalScope scope) {
  CalibrationReport r;
  r.partition = key.partition;
  r.granularity = key.granularity;
  r.scope = scope;
  r.fold_config = folds;
  r.buckets = m;
  r.n = s.size();
  r.base_rate = mean_outcome(s);
  r.brier = brier(s);
  r.brier_ref = brier_ref(r.base_rate);
  const bool degenerate = r.brier_ref <= 0.0;
  if (degenerate) r.notes.push_back("base rate is 0 or 1; skill score undefined");
  r.bss = degenerate ? kNaN : skill_score(r.brier, r.brier_ref);
  EceResult e = ece(s, m);
  r.ece = e.ece;
  r.bucket_table = std::move(e.buckets);
  r.auc = degenerate ? kNaN : auc_roc(s);

  std::set<std::string> id_set;
  for (const PredictionSample& x : s) id_set.insert(x.problem_id);
  const std::vector<std::string> ids(id_set.begin(), id_set.end());
  if (ids.size() < folds.k) {
    r.scaled = false;
    r.scaled_brier = r.scaled_bss = r.scaled_ece = kNaN;
    r.notes.push_back("fewer problems than folds; Platt scaling skipped");
    return r;
  }
  const FoldAssignment fa = assign_folds(ids, folds.k, folds.mode, folds.seed);
  double sb = 0, sbss = 0, sece = 0;
  std::size_t used = 0;
  for (std::size_t f = 0; f < fa.splits.size(); ++f) {
    const std::set<std::string> test_ids(fa.splits[f].test.begin(), fa.splits[f].test.end());
    std::vector<PredictionSample> train, test;
    for (const PredictionSample& x : s) (test_ids.count(x.problem_id) ? test : train).push_back(x);
    if (test.empty() || train.empty()) {
      r.notes.push_back("fold " + std::to_string(f) + " skipped: empty split");
      continue;
    }
    const double train_rate = mean_outcome(train);
    if (train_rate == 0.0 || train_rate == 1.0) {
      r.notes.push_back("fold " + std::to_string(f) + " skipped: single-class training split");
      continue;
    }
    FoldMetrics fm;
    fm.fold = f;
    fm.n_test = test.size();
    fm.platt = fit_platt(train);
    const std::vector<PredictionSample> scaled = apply_platt(fm.platt, test);
    fm.brier = brier(scaled);
    fm.bss = degenerate ? kNaN : skill_score(fm.brier, r.brier_ref);
    fm.ece = ece(scaled, m).ece;
    sb += fm.brier;
    sbss += fm.bss;
    sece += fm.ece;
    ++used;
    r.folds.push_back(fm);
  }
  if (used == 0) {
    r.scaled = false;
    r.scaled_brier = r.scaled_bss = r.scaled_ece = kNaN;
    return r;
  }
  const auto u = static_cast<double>(used);
  r.scaled_brier = sb / u;
  r.scaled_bss = sbss / u;
  r.scaled_ece = sece / u;
  return r;
}

}  // namespace

std::vector<CalibrationReport> crossfold_evaluate(std::span<const PredictionSample> samples,
                                                  const FoldConfig& folds, std::size_t m,
                                                  EvalScope scope) {
  require_nonempty(samples, "cross-fold evaluation");
  std::map<PartitionKey, std::vector<PredictionSample>> parts;
  for (const PredictionSample& x : samples) {
    if (x.problem_id.empty()) throw DataError("prediction sample without a problem id");
    const std::string part = scope == EvalScope::kCumulative ? "all" : x.dataset;
    if (part.empty()) throw DataError("prediction sample for '" + x.problem_id + "' has no dataset");
    parts[{part, x.granularity}].push_back(x);
  }
  std::vector<CalibrationReport> out;
  for (const auto& [key, s] : parts) out.push_back(evaluate_partition(s, key, folds, m, scope));
  return out;
}

double eta_squared(std::span<const FactorResult> results, const std::string& factor) {
  if (results.empty()) throw DataError("eta squared of an empty result set");
  std::map<std::string, std::pair<double, std::size_t>> groups;
  double total = 0.0;
  for (const FactorResult& r : results) {
    auto it = r.levels.find(factor);
    if (it == r.levels.end()) throw DataError("result lacks a level for factor '" + factor + "'");
    auto& g = groups[it->second];
    g.first += r.value;
    ++g.second;
    total += r.value;
  }
  const double grand = total / static_cast<double>(results.size());
  double ss_total = 0.0, ss_raw = 0.0;
  for (const FactorResult& r : results) {
    ss_total += (r.value - grand) * (r.value - grand);
    ss_raw += r.value * r.value;
  }
  // Rounding residue of identical values counts as zero variance.
  if (ss_total <= 1e-24 * ss_raw || ss_total == 0.0) return 0.0;
  if (groups.size() < 2) throw DataError("factor '" + factor + "' has fewer than 2 levels");
  double ss_between = 0.0;
  for (const auto& [level, g] : groups) {
    const double mean = g.first / static_cast<double>(g.second);
    ss_between += static_cast<double>(g.second) * (mean - grand) * (mean - grand);
  }
  return ss_between / ss_total;
}

}  // namespace calib
}  // namespace loccal
