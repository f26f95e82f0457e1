#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "loccal/confidence.hpp"
#include "loccal/diff_label.hpp"
#include "loccal/random.hpp"
#include "loccal/tok.hpp"
#include "loccal/types.hpp"

namespace loccal {

enum class Pooling { kMax, kMean, kAttention4 };
enum class LossStyle { kBce, kFocal, kBrier };
// How the token, line and problem query losses are combined per step.
// kSumOfMeans weights the three levels equally; kPooledMean averages every
// query together, so token queries dominate.
enum class LevelAgg { kSumOfMeans, kPooledMean };

std::string to_string(Pooling p);
std::string to_string(LossStyle l);
std::string to_string(LevelAgg a);
Pooling pooling_from_string(const std::string& s);
LossStyle loss_style_from_string(const std::string& s);
LevelAgg level_agg_from_string(const std::string& s);

struct ProbeConfig {
  std::size_t proj_dim = 32;
  Pooling pooling = Pooling::kMax;
  LossStyle loss = LossStyle::kBce;
  double focal_gamma = 2.0;
  std::size_t epochs = 30;
  double learning_rate = 0.001;
  double dropout_rate = 0.2;
  std::uint64_t seed = 0;
  std::string embedding_tag;
  LevelAgg level_agg = LevelAgg::kSumOfMeans;
  // Train only the logistic head (the projection stays at initialization).
  bool freeze_projection = false;
};

// Throws ConfigError on d < 8, attention4 with (d - 4) % 4 != 0, or
// out-of-range rates.
void validate(const ProbeConfig& c);

std::string probe_config_to_json(const ProbeConfig& c);
ProbeConfig probe_config_from_json(const std::string& text);

struct ProbeParams {
  Eigen::MatrixXd projection;  // embed_dim x proj_dim
  Eigen::VectorXd projection_bias;
  Eigen::VectorXd head;  // pooled dimension
  double head_bias = 0.0;

  std::size_t embed_dim() const { return static_cast<std::size_t>(projection.rows()); }
  std::size_t size() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& v);
  bool finite() const;

  friend bool operator==(const ProbeParams& a, const ProbeParams& b);
};

struct ProbeGrads {
  Eigen::MatrixXd projection;
  Eigen::VectorXd projection_bias;
  Eigen::VectorXd head;
  double head_bias = 0.0;
};

std::size_t pooled_dim(const ProbeConfig& c);

// Projection ~ U(+-1/sqrt(embed_dim)), projection bias and head zero.
ProbeParams init_params(std::size_t embed_dim, const ProbeConfig& c);

struct Query {
  std::vector<std::size_t> indices;
  Granularity granularity = Granularity::kToken;
  bool label = false;
};

// Token queries, then one per non-empty line, then the problem query.
std::vector<Query> build_queries(const KeptLabels& labels, std::span<const LineSpan> line_spans);

struct ProbeExample {
  std::string problem_id;
  std::string dataset;
  Eigen::MatrixXd embeddings;  // tokens x embed_dim
  std::vector<LineSpan> line_spans;
  KeptLabels labels;
};

namespace probe {

inline constexpr double kLossClamp = 1e-7;

// Affine map per token. Dimension mismatch throws DataError.
Eigen::MatrixXd down_project(const Eigen::MatrixXd& embeddings, const ProbeParams& params);

// Pools rows `indices` of `projected`. Empty set throws DataError.
Eigen::VectorXd pool(const Eigen::MatrixXd& projected, std::span<const std::size_t> indices,
                     Pooling mode);

// Eval-mode probability for a query set.
double predict(const Eigen::MatrixXd& embeddings, std::span<const std::size_t> indices,
               const ProbeParams& params, const ProbeConfig& config);

// Token, line and problem confidences for one solution.
ConfidenceAssignment predict_all(const Eigen::MatrixXd& embeddings,
                                 std::span<const LineSpan> line_spans, const ProbeParams& params,
                                 const ProbeConfig& config);

double loss(double p, bool y, LossStyle style, double gamma);
// d loss / d p at the clamped probability (0 where the clamp is active).
double loss_grad(double p, bool y, LossStyle style, double gamma);

// Loss of one problem step and, when grads != nullptr, its gradient.
// `mask` multiplies the projected units (inverted dropout already folded
// in); pass an empty matrix for eval mode.
double example_loss(const ProbeExample& ex, const ProbeParams& params,
                    const ProbeConfig& config, const Eigen::MatrixXd& mask, ProbeGrads* grads);

// Inverted-dropout mask for `rows` tokens; attention logit units are never
// dropped.
Eigen::MatrixXd dropout_mask(std::size_t rows, const ProbeConfig& config, Rng& rng);

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
};

struct TrainResult {
  ProbeParams params;
  std::vector<EpochLog> log;
  std::string batching;
};

// Adam (0.9, 0.999, 1e-8), one step per example, examples shuffled each
// epoch. Deterministic in config.seed.
TrainResult train(std::span<const ProbeExample> examples, const ProbeConfig& config);

// Max relative error between analytic and central-difference (h = 1e-5)
// gradients over `coordinates` sampled parameter indices.
double grad_check(const ProbeParams& params, std::span<const ProbeExample> batch,
                  const ProbeConfig& config, std::size_t coordinates = 120,
                  std::uint64_t seed = 0);

void save_params(const ProbeParams& params, const ProbeConfig& config,
                 const std::filesystem::path& path);
std::pair<ProbeParams, ProbeConfig> load_params(const std::filesystem::path& path);

}  // namespace probe
}  // namespace loccal
