#include "loccal/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "loccal/calib.hpp"
#include "loccal/error.hpp"

namespace loccal {

std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::kMax: return "max";
    case Pooling::kMean: return "mean";
    case Pooling::kAttention4: return "attention4";
  }
  return "?";
}

std::string to_string(LossStyle l) {
  switch (l) {
    case LossStyle::kBce: return "bce";
    case LossStyle::kFocal: return "focal";
    case LossStyle::kBrier: return "brier";
  }
  return "?";
}

std::string to_string(LevelAgg a) {
  return a == LevelAgg::kSumOfMeans ? "sum_of_means" : "pooled_mean";
}

Pooling pooling_from_string(const std::string& s) {
  if (s == "max") return Pooling::kMax;
  if (s == "mean") return Pooling::kMean;
  if (s == "attention4" || s == "attn4") return Pooling::kAttention4;
  throw ConfigError("unknown pooling '" + s + "'");
}

LossStyle loss_style_from_string(const std::string& s) {
  if (s == "bce") return LossStyle::kBce;
  if (s == "focal") return LossStyle::kFocal;
  if (s == "brier") return LossStyle::kBrier;
  throw ConfigError("unknown loss style '" + s + "'");
}

LevelAgg level_agg_from_string(const std::string& s) {
  if (s == "sum_of_means") return LevelAgg::kSumOfMeans;
  if (s == "pooled_mean") return LevelAgg::kPooledMean;
  throw ConfigError("unknown level aggregation '" + s + "'");
}

void validate(const ProbeConfig& c) {
  if (c.proj_dim < 8) throw ConfigError("proj_dim must be at least 8");
  if (c.pooling == Pooling::kAttention4 && (c.proj_dim - 4) % 4 != 0)
    throw ConfigError("attention4 pooling needs proj_dim - 4 divisible by 4");
  if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0))
    throw ConfigError("dropout_rate must lie in [0,1)");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(c.focal_gamma >= 0.0)) throw ConfigError("focal_gamma must be non-negative");
}

std::string probe_config_to_json(const ProbeConfig& c) {
  nlohmann::json j = {{"proj_dim", c.proj_dim},
                      {"pooling", to_string(c.pooling)},
                      {"loss", to_string(c.loss)},
                      {"focal_gamma", c.focal_gamma},
                      {"epochs", c.epochs},
                      {"learning_rate", c.learning_rate},
                      {"dropout_rate", c.dropout_rate},
                      {"seed", c.seed},
                      {"embedding_tag", c.embedding_tag},
                      {"level_agg", to_string(c.level_agg)},
                      {"freeze_projection", c.freeze_projection}};
  return j.dump();
}

ProbeConfig probe_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("probe config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("probe config must be an object");
  ProbeConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "proj_dim") c.proj_dim = v.get<std::size_t>();
      else if (key == "pooling") c.pooling = pooling_from_string(v.get<std::string>());
      else if (key == "loss") c.loss = loss_style_from_string(v.get<std::string>());
      else if (key == "focal_gamma") c.focal_gamma = v.get<double>();
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "dropout_rate") c.dropout_rate = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "embedding_tag") c.embedding_tag = v.get<std::string>();
      else if (key == "level_agg") c.level_agg = level_agg_from_string(v.get<std::string>());
      else if (key == "freeze_projection") c.freeze_projection = v.get<bool>();
      else throw ConfigError("probe config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("probe config: ") + e.what());
  }
  validate(c);
  return c;
}

std::size_t ProbeParams::size() const {
  return static_cast<std::size_t>(projection.size() + projection_bias.size() + head.size()) + 1;
}

Eigen::VectorXd ProbeParams::flatten() const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(size()));
  Eigen::Index o = 0;
  v.segment(o, projection.size()) = Eigen::Map<const Eigen::VectorXd>(projection.data(), projection.size());
  o += projection.size();
  v.segment(o, projection_bias.size()) = projection_bias;
  o += projection_bias.size();
  v.segment(o, head.size()) = head;
  o += head.size();
  v(o) = head_bias;
  return v;
}

void ProbeParams::unflatten(const Eigen::VectorXd& v) {
  Eigen::Index o = 0;
  Eigen::Map<Eigen::VectorXd>(projection.data(), projection.size()) = v.segment(o, projection.size());
  o += projection.size();
  projection_bias = v.segment(o, projection_bias.size());
  o += projection_bias.size();
  head = v.segment(o, head.size());
  o += head.size();
  head_bias = v(o);
}

bool ProbeParams::finite() const {
  return projection.allFinite() && projection_bias.allFinite() && head.allFinite() &&
         std::isfinite(head_bias);
}

bool operator==(const ProbeParams& a, const ProbeParams& b) {
  if (a.projection.rows() != b.projection.rows() || a.projection.cols() != b.projection.cols() ||
      a.head.size() != b.head.size())
    return false;
  const Eigen::VectorXd x = a.flatten(), y = b.flatten();
  // Bitwise comparison, so -0.0 != 0.0 and NaN payloads matter.
  return std::memcmp(x.data(), y.data(), static_cast<std::size_t>(x.size()) * sizeof(double)) == 0;
}

std::size_t pooled_dim(const ProbeConfig& c) {
  return c.pooling == Pooling::kAttention4 ? c.proj_dim - 4 : c.proj_dim;
}

ProbeParams init_params(std::size_t embed_dim, const ProbeConfig& c) {
  validate(c);
  if (embed_dim == 0) throw DataError("embedding dimension is zero");
  ProbeParams p;
  const auto e = static_cast<Eigen::Index>(embed_dim);
  const auto d = static_cast<Eigen::Index>(c.proj_dim);
  p.projection.resize(e, d);
  Rng rng(c.seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  for (Eigen::Index r = 0; r < e; ++r)
    for (Eigen::Index k = 0; k < d; ++k) p.projection(r, k) = rng.uniform(-bound, bound);
  p.projection_bias = Eigen::VectorXd::Zero(d);
  p.head = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pooled_dim(c)));
  p.head_bias = 0.0;
  return p;
}

std::vector<Query> build_queries(const KeptLabels& labels, std::span<const LineSpan> line_spans) {
  std::vector<Query> qs;
  const std::size_t n = labels.token_kept.size();
  if (n == 0) return qs;
  if (labels.line_kept.size() != line_spans.size())
    throw DataError("line label count does not match line spans");
  for (std::size_t i = 0; i < n; ++i) qs.push_back({{i}, Granularity::kToken, labels.token_kept[i]});
  for (std::size_t l = 0; l < line_spans.size(); ++l) {
    if (line_spans[l].empty()) continue;
    Query q{{}, Granularity::kLine, labels.line_kept[l]};
    for (std::size_t i = line_spans[l].begin; i < line_spans[l].end; ++i) q.indices.push_back(i);
    qs.push_back(std::move(q));
  }
  Query all{{}, Granularity::kProblem, labels.problem_kept};
  all.indices.resize(n);
  std::iota(all.indices.begin(), all.indices.end(), std::size_t{0});
  qs.push_back(std::move(all));
  return qs;
}

namespace probe {
namespace {

constexpr Eigen::Index kHeads = 4;

// Forward state of one pooling call, kept for the backward pass.
struct PoolCache {
  std::vector<Eigen::Index> argmax;  // max: winning row per unit
  Eigen::MatrixXd alpha;             // attention4: |Q| x 4 softmax weights
};

Eigen::VectorXd pool_forward(const Eigen::MatrixXd& h, std::span<const std::size_t> idx,
                             Pooling mode, PoolCache* cache) {
  if (idx.empty()) throw DataError("pooling over an empty token set");
  const Eigen::Index d = h.cols();
  const auto q = static_cast<Eigen::Index>(idx.size());
  for (std::size_t i : idx)
    if (static_cast<Eigen::Index>(i) >= h.rows()) throw DataError("query index out of range");
  switch (mode) {
    case Pooling::kMax: {
      Eigen::VectorXd g = h.row(static_cast<Eigen::Index>(idx[0])).transpose();
      std::vector<Eigen::Index> arg(static_cast<std::size_t>(d), static_cast<Eigen::Index>(idx[0]));
      for (std::size_t t = 1; t < idx.size(); ++t) {
        const auto r = static_cast<Eigen::Index>(idx[t]);
        for (Eigen::Index j = 0; j < d; ++j) {
          if (h(r, j) > g(j)) {
            g(j) = h(r, j);
            arg[static_cast<std::size_t>(j)] = r;
          }
        }
      }
      if (cache) cache->argmax = std::move(arg);
      return g;
    }
    case Pooling::kMean: {
      Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
      for (std::size_t i : idx) g += h.row(static_cast<Eigen::Index>(i)).transpose();
      return g / static_cast<double>(q);
    }
    case Pooling::kAttention4: {
      const Eigen::Index s = (d - kHeads) / kHeads;
      Eigen::MatrixXd alpha(q, kHeads);
      for (Eigen::Index k = 0; k < kHeads; ++k) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index t = 0; t < q; ++t)
          mx = std::max(mx, h(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(t)]), k));
        double z = 0.0;
        for (Eigen::Index t = 0; t < q; ++t) {
          alpha(t, k) = std::exp(h(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(t)]), k) - mx);
          z += alpha(t, k);
        }
        alpha.col(k) /= z;
      }
      Eigen::VectorXd g = Eigen::VectorXd::Zero(kHeads * s);
      for (Eigen::Index t = 0; t < q; ++t) {
        const auto r = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(t)]);
        for (Eigen::Index k = 0; k < kHeads; ++k)
          g.segment(k * s, s) += alpha(t, k) * h.row(r).segment(kHeads + k * s, s).transpose();
      }
      if (cache) cache->alpha = std::move(alpha);
      return g;
    }
  }
  return {};
}

void pool_backward(const Eigen::MatrixXd& h, std::span<const std::size_t> idx, Pooling mode,
                   const PoolCache& cache, const Eigen::VectorXd& dg, Eigen::MatrixXd& dh) {
  const Eigen::Index d = h.cols();
  const auto q = static_cast<Eigen::Index>(idx.size());
  switch (mode) {
    case Pooling::kMax:
      for (Eigen::Index j = 0; j < d; ++j) dh(cache.argmax[static_cast<std::size_t>(j)], j) += dg(j);
      return;
    case Pooling::kMean:
      for (std::size_t i : idx)
        dh.row(static_cast<Eigen::Index>(i)) += dg.transpose() / static_cast<double>(q);
      return;
    case Pooling::kAttention4: {
      const Eigen::Index s = (d - kHeads) / kHeads;
      for (Eigen::Index k = 0; k < kHeads; ++k) {
        const Eigen::VectorXd dgk = dg.segment(k * s, s);
        Eigen::VectorXd dalpha(q);
        for (Eigen::Index t = 0; t < q; ++t) {
          const auto r = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(t)]);
          dalpha(t) = dgk.dot(h.row(r).segment(kHeads + k * s, s).transpose());
          dh.row(r).segment(kHeads + k * s, s) += cache.alpha(t, k) * dgk.transpose();
        }
        const double weighted = cache.alpha.col(k).dot(dalpha);
        for (Eigen::Index t = 0; t < q; ++t) {
          const auto r = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(t)]);
          dh(r, k) += cache.alpha(t, k) * (dalpha(t) - weighted);
        }
      }
      return;
    }
  }
}

double clamp_p(double p) { return std::clamp(p, kLossClamp, 1.0 - kLossClamp); }

}  // namespace

Eigen::MatrixXd down_project(const Eigen::MatrixXd& embeddings, const ProbeParams& params) {
  if (embeddings.cols() != params.projection.rows())
    throw DataError("embedding dimension " + std::to_string(embeddings.cols()) +
                    " does not match probe input dimension " +
                    std::to_string(params.projection.rows()));
  Eigen::MatrixXd z = embeddings * params.projection;
  z.rowwise() += params.projection_bias.transpose();
  return z;
}

Eigen::VectorXd pool(const Eigen::MatrixXd& projected, std::span<const std::size_t> indices,
                     Pooling mode) {
  if (mode == Pooling::kAttention4 && (projected.cols() < 8 || (projected.cols() - 4) % 4 != 0))
    throw DataError("attention4 pooling needs width 4 + 4k");
  return pool_forward(projected, indices, mode, nullptr);
}

double predict(const Eigen::MatrixXd& embeddings, std::span<const std::size_t> indices,
               const ProbeParams& params, const ProbeConfig& config) {
  const Eigen::MatrixXd h = down_project(embeddings, params);
  const Eigen::VectorXd g = pool(h, indices, config.pooling);
  return calib::sigmoid(params.head.dot(g) + params.head_bias);
}

ConfidenceAssignment predict_all(const Eigen::MatrixXd& embeddings,
                                 std::span<const LineSpan> line_spans, const ProbeParams& params,
                                 const ProbeConfig& config) {
  tok::check_partition(line_spans, static_cast<std::size_t>(embeddings.rows()));
  const Eigen::MatrixXd h = down_project(embeddings, params);
  auto prob = [&](std::span<const std::size_t> idx) {
    return calib::sigmoid(params.head.dot(pool(h, idx, config.pooling)) + params.head_bias);
  };
  ConfidenceAssignment a;
  a.estimator = EstimatorKind::kProbe;
  const auto n = static_cast<std::size_t>(embeddings.rows());
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t one[] = {i};
    a.token_conf.push_back(prob(one));
  }
  for (std::size_t l = 0; l < line_spans.size(); ++l) {
    if (line_spans[l].empty()) {
      a.line_conf.push_back(1.0);
      a.vacuous_lines.push_back(l);
      continue;
    }
    idx.resize(line_spans[l].size());
    std::iota(idx.begin(), idx.end(), line_spans[l].begin);
    a.line_conf.push_back(prob(idx));
  }
  idx.resize(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  a.problem_conf = n == 0 ? 1.0 : prob(idx);
  return a;
}

double loss(double p, bool y, LossStyle style, double gamma) {
  const double pc = clamp_p(p);
  switch (style) {
    case LossStyle::kBce:
      return y ? -std::log(pc) : -std::log1p(-pc);
    case LossStyle::kFocal: {
      const double pt = y ? pc : 1.0 - pc;
      return std::pow(1.0 - pt, gamma) * -std::log(pt);
    }
    case LossStyle::kBrier: {
      const double d = pc - (y ? 1.0 : 0.0);
      return d * d;
    }
  }
  return 0.0;
}

double loss_grad(double p, bool y, LossStyle style, double gamma) {
  if (p < kLossClamp || p > 1.0 - kLossClamp) return 0.0;
  switch (style) {
    case LossStyle::kBce:
      return y ? -1.0 / p : 1.0 / (1.0 - p);
    case LossStyle::kFocal: {
      const double pt = y ? p : 1.0 - p;
      const double one_minus = 1.0 - pt;
      // d/dpt of (1-pt)^g * (-ln pt)
      const double dpt = (gamma == 0.0 ? 0.0 : gamma * std::pow(one_minus, gamma - 1.0) * std::log(pt)) -
                         std::pow(one_minus, gamma) / pt;
      return y ? dpt : -dpt;
    }
    case LossStyle::kBrier:
      return 2.0 * (p - (y ? 1.0 : 0.0));
  }
  return 0.0;
}

Eigen::MatrixXd dropout_mask(std::size_t rows, const ProbeConfig& config, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(config.proj_dim);
  Eigen::MatrixXd m = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(rows), d);
  if (config.dropout_rate <= 0.0) return m;
  const double keep = 1.0 - config.dropout_rate;
  const Eigen::Index first = config.pooling == Pooling::kAttention4 ? kHeads : 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index j = first; j < d; ++j) m(r, j) = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  return m;
}

double example_loss(const ProbeExample& ex, const ProbeParams& params, const ProbeConfig& config,
                    const Eigen::MatrixXd& mask, ProbeGrads* grads) {
  const std::vector<Query> queries = build_queries(ex.labels, ex.line_spans);
  if (static_cast<std::size_t>(ex.embeddings.rows()) != ex.labels.token_kept.size())
    throw DataError("record '" + ex.problem_id + "': embedding rows do not match token labels");
  const Eigen::MatrixXd z = down_project(ex.embeddings, params);
  const bool masked = mask.size() > 0;
  const Eigen::MatrixXd h = masked ? Eigen::MatrixXd(z.cwiseProduct(mask)) : z;

  std::size_t counts[3] = {0, 0, 0};
  for (const Query& q : queries) ++counts[static_cast<int>(q.granularity)];
  auto weight = [&](Granularity g) {
    if (config.level_agg == LevelAgg::kPooledMean) return 1.0 / static_cast<double>(queries.size());
    return 1.0 / static_cast<double>(counts[static_cast<int>(g)]);
  };

  Eigen::MatrixXd dh;
  if (grads) {
    dh = Eigen::MatrixXd::Zero(h.rows(), h.cols());
    grads->head = Eigen::VectorXd::Zero(params.head.size());
    grads->head_bias = 0.0;
  }
  double total = 0.0;
  PoolCache cache;
  for (const Query& q : queries) {
    const double w = weight(q.granularity);
    const Eigen::VectorXd g = pool_forward(h, q.indices, config.pooling, grads ? &cache : nullptr);
    const double p = calib::sigmoid(params.head.dot(g) + params.head_bias);
    total += w * loss(p, q.label, config.loss, config.focal_gamma);
    if (!grads) continue;
    const double du = w * loss_grad(p, q.label, config.loss, config.focal_gamma) * p * (1.0 - p);
    if (du == 0.0) continue;
    grads->head += du * g;
    grads->head_bias += du;
    pool_backward(h, q.indices, config.pooling, cache, du * params.head, dh);
  }
  if (grads) {
    const Eigen::MatrixXd dz = masked ? Eigen::MatrixXd(dh.cwiseProduct(mask)) : dh;
    grads->projection = ex.embeddings.transpose() * dz;
    grads->projection_bias = dz.colwise().sum().transpose();
  }
  return total;
}

namespace {

Eigen::VectorXd flatten_grads(const ProbeGrads& g) {
  ProbeParams tmp{g.projection, g.projection_bias, g.head, g.head_bias};
  return tmp.flatten();
}

void check_examples(std::span<const ProbeExample> examples, std::size_t embed_dim) {
  for (const ProbeExample& ex : examples) {
    if (ex.embeddings.rows() > 0 && static_cast<std::size_t>(ex.embeddings.cols()) != embed_dim)
      throw DataError("record '" + ex.problem_id + "': embedding dimension " +
                      std::to_string(ex.embeddings.cols()) + " differs from " +
                      std::to_string(embed_dim));
    if (static_cast<std::size_t>(ex.embeddings.rows()) != ex.labels.token_kept.size())
      throw DataError("record '" + ex.problem_id + "': embedding rows do not match token labels");
  }
}

}  // namespace

TrainResult train(std::span<const ProbeExample> examples, const ProbeConfig& config) {
  validate(config);
  if (examples.empty()) throw DataError("no training examples");
  std::size_t embed_dim = 0;
  for (const ProbeExample& ex : examples)
    if (ex.embeddings.rows() > 0) embed_dim = static_cast<std::size_t>(ex.embeddings.cols());
  if (embed_dim == 0) throw DataError("training examples carry no embeddings");
  check_examples(examples, embed_dim);

  TrainResult result;
  result.params = init_params(embed_dim, config);
  result.batching =
      "one Adam step per problem; token, line and problem query losses " +
      std::string(config.level_agg == LevelAgg::kSumOfMeans ? "mean-normalized per level and summed"
                                                            : "averaged over all queries");
  ProbeParams& params = result.params;
  const auto n_params = static_cast<Eigen::Index>(params.size());
  const Eigen::Index frozen =
      config.freeze_projection ? params.projection.size() + params.projection_bias.size() : 0;
  Eigen::VectorXd theta = params.flatten();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(n_params);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(n_params);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  double beta1_t = 1.0, beta2_t = 1.0;

  Rng rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  ProbeGrads grads;
  const Eigen::MatrixXd no_mask;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t idx : order) {
      const ProbeExample& ex = examples[idx];
      if (ex.labels.token_kept.empty()) continue;
      const Eigen::MatrixXd mask =
          config.dropout_rate > 0.0
              ? dropout_mask(static_cast<std::size_t>(ex.embeddings.rows()), config, rng)
              : no_mask;
      sum += example_loss(ex, params, config, mask, &grads);
      ++steps;
      Eigen::VectorXd g = flatten_grads(grads);
      if (frozen) g.head(frozen).setZero();
      beta1_t *= kBeta1;
      beta2_t *= kBeta2;
      m1 = kBeta1 * m1 + (1.0 - kBeta1) * g;
      m2 = kBeta2 * m2 + (1.0 - kBeta2) * g.cwiseProduct(g);
      const Eigen::VectorXd mhat = m1 / (1.0 - beta1_t);
      const Eigen::VectorXd vhat = m2 / (1.0 - beta2_t);
      Eigen::VectorXd step = config.learning_rate * mhat.array() / (vhat.array().sqrt() + kEps);
      if (frozen) step.head(frozen).setZero();
      theta -= step;
      params.unflatten(theta);
    }
    result.log.push_back({epoch, steps ? sum / static_cast<double>(steps) : 0.0});
  }
  if (!params.finite()) throw DataError("probe training produced non-finite parameters");
  return result;
}

double grad_check(const ProbeParams& params, std::span<const ProbeExample> batch,
                  const ProbeConfig& config, std::size_t coordinates, std::uint64_t seed) {
  if (batch.empty()) throw DataError("gradient check needs a non-empty batch");
  check_examples(batch, params.embed_dim());
  Rng rng(seed);
  std::vector<Eigen::MatrixXd> masks;
  for (const ProbeExample& ex : batch)
    masks.push_back(config.dropout_rate > 0.0
                        ? dropout_mask(static_cast<std::size_t>(ex.embeddings.rows()), config, rng)
                        : Eigen::MatrixXd());

  auto total_loss = [&](const ProbeParams& p, Eigen::VectorXd* grad) {
    double l = 0.0;
    if (grad) *grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.size()));
    ProbeGrads g;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      l += example_loss(batch[i], p, config, masks[i], grad ? &g : nullptr);
      if (grad) *grad += flatten_grads(g);
    }
    return l;
  };

  Eigen::VectorXd analytic;
  total_loss(params, &analytic);
  const Eigen::VectorXd theta = params.flatten();
  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  rng.shuffle(coords);
  coords.resize(std::min(coordinates, coords.size()));

  constexpr double kStep = 1e-5;
  ProbeParams probe_params = params;
  double worst = 0.0;
  for (std::size_t c : coords) {
    const auto i = static_cast<Eigen::Index>(c);
    Eigen::VectorXd t = theta;
    t(i) = theta(i) + kStep;
    probe_params.unflatten(t);
    const double up = total_loss(probe_params, nullptr);
    t(i) = theta(i) - kStep;
    probe_params.unflatten(t);
    const double down = total_loss(probe_params, nullptr);
    const double numeric = (up - down) / (2.0 * kStep);
    const double denom = std::max({std::abs(numeric), std::abs(analytic(i)), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic(i)) / denom);
  }
  return worst;
}

namespace {

constexpr char kMagic[8] = {'L', 'O', 'C', 'C', 'A', 'L', 'P', 'B'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("probe parameter file truncated");
  return v;
}

}  // namespace

void save_params(const ProbeParams& params, const ProbeConfig& config,
                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put(out, kFormatVersion);
  const std::string cfg = probe_config_to_json(config);
  put(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put(out, static_cast<std::uint64_t>(params.projection.rows()));
  put(out, static_cast<std::uint64_t>(params.projection.cols()));
  put(out, static_cast<std::uint64_t>(params.head.size()));
  // Row-major projection, then projection bias, head, head bias.
  for (Eigen::Index r = 0; r < params.projection.rows(); ++r)
    for (Eigen::Index c = 0; c < params.projection.cols(); ++c) put(out, params.projection(r, c));
  for (Eigen::Index i = 0; i < params.projection_bias.size(); ++i) put(out, params.projection_bias(i));
  for (Eigen::Index i = 0; i < params.head.size(); ++i) put(out, params.head(i));
  put(out, params.head_bias);
}

std::pair<ProbeParams, ProbeConfig> load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open probe parameter file " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw DataError(path.string() + " is not a probe parameter file");
  if (get<std::uint32_t>(in) != kFormatVersion)
    throw DataError("unsupported probe parameter file version");
  const auto cfg_len = get<std::uint32_t>(in);
  std::string cfg(cfg_len, '\0');
  in.read(cfg.data(), cfg_len);
  if (!in) throw DataError("probe parameter file truncated");
  ProbeConfig config = probe_config_from_json(cfg);
  const auto rows = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  const auto cols = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  const auto head = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  if (cols != static_cast<Eigen::Index>(config.proj_dim) ||
      head != static_cast<Eigen::Index>(pooled_dim(config)))
    throw DataError("probe parameter shapes disagree with the stored config");
  ProbeParams p;
  p.projection.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) p.projection(r, c) = get<double>(in);
  p.projection_bias.resize(cols);
  for (Eigen::Index i = 0; i < cols; ++i) p.projection_bias(i) = get<double>(in);
  p.head.resize(head);
  for (Eigen::Index i = 0; i < head; ++i) p.head(i) = get<double>(in);
  p.head_bias = get<double>(in);
  return {std::move(p), std::move(config)};
}

}  // namespace probe
}  // namespace loccal
