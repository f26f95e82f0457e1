#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "loccal/corpus.hpp"
#include "loccal/types.hpp"

namespace loccal {

struct PredictionSample {
  double confidence = 0.0;
  bool outcome = false;
  Granularity granularity = Granularity::kToken;
  std::string dataset;
  std::string problem_id;
};

struct PlattParams {
  double scale = 1.0;
  double bias = 0.0;
};

struct Bucket {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double weight = 0.0;      // count / N
  double accuracy = 0.0;    // mean outcome; 0 for empty buckets
  double confidence = 0.0;  // mean confidence; 0 for empty buckets
};

struct EceResult {
  double ece = 0.0;
  std::vector<Bucket> buckets;
};

struct CurvePoint {
  double mean_confidence = 0.0;
  double frequency = 0.0;
  double weight = 0.0;
};

enum class BucketScheme { kEqualWidth, kQuantile };

enum class EvalScope { kCumulative, kPerDataset, kLeaveOneOut };

std::string to_string(EvalScope s);
EvalScope eval_scope_from_string(const std::string& s);

struct FoldConfig {
  std::size_t k = 5;
  FoldMode mode = FoldMode::kDisjointKFold;
  std::uint64_t seed = 0;
};

// Held-out metrics of one Platt fold.
struct FoldMetrics {
  std::size_t fold = 0;
  std::size_t n_test = 0;
  PlattParams platt;
  double brier = 0.0;
  double bss = 0.0;
  double ece = 0.0;
};

struct CalibrationReport {
  std::string partition;  // "all" or a dataset name
  EvalScope scope = EvalScope::kCumulative;
  Granularity granularity = Granularity::kToken;
  std::size_t n = 0;
  double base_rate = 0.0;
  double brier = 0.0;
  double brier_ref = 0.0;
  double bss = 0.0;  // NaN when the base rate is 0 or 1
  double ece = 0.0;
  std::size_t buckets = 10;
  double auc = 0.0;  // NaN for single-class partitions
  std::vector<Bucket> bucket_table;
  bool scaled = true;
  double scaled_brier = 0.0;
  double scaled_bss = 0.0;
  double scaled_ece = 0.0;
  std::vector<FoldMetrics> folds;
  FoldConfig fold_config;
  std::vector<std::string> notes;
};

namespace calib {

inline constexpr double kPlattClamp = 1e-6;

double brier(std::span<const PredictionSample> samples);
double brier_ref(double base_rate);
// Throws DataError when b_ref == 0.
double skill_score(double b_model, double b_ref);

// Equal-width buckets over [0,1]; bucket i holds [i/m, (i+1)/m), the last
// one also holds 1.0.
EceResult ece(std::span<const PredictionSample> samples, std::size_t m = 10);

// Mann-Whitney AUC with ties credited 0.5. Needs both classes.
double auc_roc(std::span<const PredictionSample> samples);

double mean_outcome(std::span<const PredictionSample> samples);

double logit(double p);
double sigmoid(double x);

// Log-loss fit of sigmoid(scale * logit(clamp(p)) + bias) by damped Newton.
PlattParams fit_platt(std::span<const PredictionSample> samples);
double apply_platt(const PlattParams& params, double p);
std::vector<PredictionSample> apply_platt(const PlattParams& params,
                                          std::span<const PredictionSample> samples);

// Bucketed reliability points; empty buckets are omitted. Quantile buckets
// hold roughly equal counts and never split equal confidences.
std::vector<CurvePoint> reliability_curve(std::span<const PredictionSample> samples,
                                          BucketScheme scheme, std::size_t buckets);

// Unscaled metrics of one partition plus Platt scaling evaluated on held-out
// folds (assigned per partition over its problem ids) and averaged.
// Samples are grouped by granularity; leave_one_out partitions like
// per_dataset and assumes the confidences came from estimators trained
// without the held-out dataset.
std::vector<CalibrationReport> crossfold_evaluate(std::span<const PredictionSample> samples,
                                                  const FoldConfig& folds, std::size_t m,
                                                  EvalScope scope);

struct FactorResult {
  std::map<std::string, std::string> levels;
  double value = 0.0;
};

// One-way SS_between / SS_total for `factor`. Zero total variance gives 0.
double eta_squared(std::span<const FactorResult> results, const std::string& factor);

}  // namespace calib
}  // namespace loccal
