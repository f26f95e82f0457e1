#include "loccal/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

#include "json.hpp"
#include "loccal/diff_label.hpp"
#include "loccal/error.hpp"

namespace loccal {

std::string to_string(EstimatorKind e) {
  switch (e) {
    case EstimatorKind::kTokenProb: return "token_prob";
    case EstimatorKind::kMultisample: return "multisample";
    case EstimatorKind::kReflective: return "reflective";
    case EstimatorKind::kProbe: return "probe";
  }
  return "?";
}

EstimatorKind estimator_from_string(const std::string& s) {
  if (s == "token_prob") return EstimatorKind::kTokenProb;
  if (s == "multisample") return EstimatorKind::kMultisample;
  if (s == "reflective") return EstimatorKind::kReflective;
  if (s == "probe") return EstimatorKind::kProbe;
  throw ConfigError("unknown estimator '" + s + "'");
}

std::string to_string(TokenAgg a) {
  switch (a) {
    case TokenAgg::kMin: return "min";
    case TokenAgg::kMean: return "mean";
    case TokenAgg::kGmean: return "gmean";
  }
  return "?";
}

TokenAgg token_agg_from_string(const std::string& s) {
  if (s == "min") return TokenAgg::kMin;
  if (s == "mean") return TokenAgg::kMean;
  if (s == "gmean") return TokenAgg::kGmean;
  throw ConfigError("unknown token aggregator '" + s + "'");
}

std::string to_string(LineAgg a) {
  switch (a) {
    case LineAgg::kMean: return "mean";
    case LineAgg::kGmean: return "gmean";
    case LineAgg::kMin: return "min";
    case LineAgg::kPreMin: return "pre_min";
    case LineAgg::kPreMean: return "pre_mean";
  }
  return "?";
}

LineAgg line_agg_from_string(const std::string& s) {
  if (s == "mean") return LineAgg::kMean;
  if (s == "gmean") return LineAgg::kGmean;
  if (s == "min") return LineAgg::kMin;
  if (s == "pre_min") return LineAgg::kPreMin;
  if (s == "pre_mean") return LineAgg::kPreMean;
  throw ConfigError("unknown line aggregator '" + s + "'");
}

namespace confidence {

double aggregate(std::span<const double> values, TokenAgg agg) {
  if (values.empty()) throw DataError("aggregate of an empty value list");
  switch (agg) {
    case TokenAgg::kMin:
      return *std::min_element(values.begin(), values.end());
    case TokenAgg::kMean: {
      double s = 0.0;
      for (double v : values) s += v;
      return s / static_cast<double>(values.size());
    }
    case TokenAgg::kGmean: {
      double s = 0.0;
      for (double v : values) {
        if (v <= 0.0) return 0.0;
        s += std::log(v);
      }
      return std::exp(s / static_cast<double>(values.size()));
    }
  }
  return 0.0;
}

namespace {

std::vector<double> per_line(std::span<const double> token_conf,
                             std::span<const LineSpan> spans, TokenAgg agg,
                             std::vector<std::size_t>* vacuous) {
  std::vector<double> out;
  out.reserve(spans.size());
  for (std::size_t l = 0; l < spans.size(); ++l) {
    if (spans[l].empty()) {
      out.push_back(1.0);
      if (vacuous) vacuous->push_back(l);
      continue;
    }
    out.push_back(aggregate(token_conf.subspan(spans[l].begin, spans[l].size()), agg));
  }
  return out;
}

}  // namespace

ConfidenceAssignment tokenprob_confidence(std::span<const double> aligned_probs,
                                          std::span<const LineSpan> line_spans, TokenAgg agg) {
  tok::check_partition(line_spans, aligned_probs.size());
  for (double p : aligned_probs)
    if (!(p >= 0.0 && p <= 1.0)) throw DataError("token probability outside [0,1]");
  ConfidenceAssignment a;
  a.estimator = EstimatorKind::kTokenProb;
  a.token_conf.assign(aligned_probs.begin(), aligned_probs.end());
  a.line_conf = per_line(aligned_probs, line_spans, agg, &a.vacuous_lines);
  a.problem_conf = aligned_probs.empty() ? 1.0 : aggregate(aligned_probs, agg);
  return a;
}

std::vector<double> multisample_token_confidence(std::span<const Token> sample,
                                                 std::span<const TokenList> variants) {
  std::vector<double> conf(sample.size(), 0.0);
  if (variants.empty()) return conf;
  std::vector<std::size_t> counts(sample.size(), 0);
  for (const TokenList& v : variants) {
    const std::vector<bool> kept = diff::kept_tokens(diff::token_diff(sample, v), sample.size());
    for (std::size_t i = 0; i < sample.size(); ++i) counts[i] += kept[i] ? 1 : 0;
  }
  const auto k = static_cast<double>(variants.size());
  for (std::size_t i = 0; i < sample.size(); ++i) conf[i] = static_cast<double>(counts[i]) / k;
  return conf;
}

std::vector<double> multisample_line_confidence(std::span<const double> token_conf,
                                                std::span<const LineSpan> line_spans,
                                                std::span<const Token> sample,
                                                std::span<const TokenList> variants,
                                                LineAgg mode) {
  tok::check_partition(line_spans, token_conf.size());
  switch (mode) {
    case LineAgg::kMean: return per_line(token_conf, line_spans, TokenAgg::kMean, nullptr);
    case LineAgg::kGmean: return per_line(token_conf, line_spans, TokenAgg::kGmean, nullptr);
    case LineAgg::kMin: return per_line(token_conf, line_spans, TokenAgg::kMin, nullptr);
    case LineAgg::kPreMin: {
      std::vector<double> out(line_spans.size(), 0.0);
      if (variants.empty()) return out;
      const TokenList lines = tok::line_strings(sample, line_spans);
      for (const TokenList& v : variants) {
        const TokenList vlines = tok::line_strings(v, tok::line_spans_of(v));
        const std::vector<bool> kept =
            diff::kept_tokens(diff::token_diff(lines, vlines), lines.size());
        for (std::size_t l = 0; l < lines.size(); ++l) out[l] += kept[l] ? 1.0 : 0.0;
      }
      for (std::size_t l = 0; l < out.size(); ++l) {
        out[l] = line_spans[l].empty() ? 1.0 : out[l] / static_cast<double>(variants.size());
      }
      return out;
    }
    case LineAgg::kPreMean: {
      std::vector<double> out(line_spans.size(), 0.0);
      if (variants.empty()) return out;
      for (const TokenList& v : variants) {
        const std::vector<bool> kept =
            diff::kept_tokens(diff::token_diff(sample, v), sample.size());
        for (std::size_t l = 0; l < line_spans.size(); ++l) {
          const LineSpan s = line_spans[l];
          if (s.empty()) continue;
          std::size_t c = 0;
          for (std::size_t i = s.begin; i < s.end; ++i) c += kept[i] ? 1 : 0;
          out[l] += static_cast<double>(c) / static_cast<double>(s.size());
        }
      }
      for (std::size_t l = 0; l < out.size(); ++l) {
        out[l] = line_spans[l].empty() ? 1.0 : out[l] / static_cast<double>(variants.size());
      }
      return out;
    }
  }
  throw ConfigError("unknown line aggregator");
}

ConfidenceAssignment multisample_confidence(std::span<const Token> sample,
                                            std::span<const LineSpan> line_spans,
                                            std::span<const TokenList> variants, LineAgg mode) {
  ConfidenceAssignment a;
  a.estimator = EstimatorKind::kMultisample;
  a.token_conf = multisample_token_confidence(sample, variants);
  a.line_conf = multisample_line_confidence(a.token_conf, line_spans, sample, variants, mode);
  for (std::size_t l = 0; l < line_spans.size(); ++l)
    if (line_spans[l].empty()) a.vacuous_lines.push_back(l);
  a.problem_conf = a.token_conf.empty() ? 1.0 : aggregate(a.token_conf, TokenAgg::kMean);
  return a;
}

namespace {

constexpr const char* kReflectiveTemplate =
    "We are attempting estimated calibrated probabilities that lines of code are correct or if "
    "they will need to be edited.\n"
    "Consider the following code:\n"
    "```python\n"
    "{content}\n"
    "```\n"
    "We are attempting to estimate the probability that each line of code is correct.\n"
    "Please provide your estimate as a list[float] where each element is between \n"
    "0 and 1 representing the probability that the line will be correct and \n"
    "unedited. One or two digits of precision is fine.\n"
    "This is the individual line probabilities so the sum is not expected to be 1.\n"
    "These are the line splitting we are using:\n"
    "[\n"
    "    {list_of_considered_lines}\n"
    "]\n"
    "Create a calibrated estimate of the probability that each line is correct. \n"
    "You can consider any potential issues with the code, but then place your final answer in "
    "a markdown code block with only a list[float] of length {len(lines)}. Do not end early, and "
    "do not stop until you list all {len(lines)} probabilities corresponding to the given "
    "splits.";

// Single pass, so substituted text is never expanded again.
std::string render(std::string_view tmpl,
                   std::span<const std::pair<std::string_view, std::string>> fields) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool hit = false;
    if (tmpl[i] == '{') {
      for (const auto& [key, value] : fields) {
        if (tmpl.substr(i, key.size()) == key) {
          out += value;
          i += key.size();
          hit = true;
          break;
        }
      }
    }
    if (!hit) out += tmpl[i++];
  }
  return out;
}

std::string strip_terminator(std::string line) {
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
  return line;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

bool parse_float_list(const std::string& block, std::vector<double>& out) {
  const std::string body = trim(block);
  if (body.size() < 2 || body.front() != '[' || body.back() != ']') return false;
  const std::string inner = body.substr(1, body.size() - 2);
  out.clear();
  if (trim(inner).empty()) return true;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = inner.find(',', start);
    const std::string item =
        trim(std::string_view(inner).substr(start, comma == std::string::npos ? std::string::npos
                                                                              : comma - start));
    if (item.empty()) {
      // Only a single trailing comma is tolerated.
      return comma == std::string::npos && !out.empty();
    }
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (end != item.c_str() + item.size()) return false;
    out.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return true;
}

}  // namespace

ReflectivePrompt build_reflective_prompt(const std::string& code,
                                         std::span<const std::string> lines) {
  ReflectivePrompt p;
  std::string listed;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) listed += ",\n    ";
    listed += nlohmann::json(strip_terminator(lines[i])).dump();
  }
  const std::pair<std::string_view, std::string> fields[] = {
      {"{content}", code},
      {"{list_of_considered_lines}", listed},
      {"{len(lines)}", std::to_string(lines.size())},
  };
  p.text = render(kReflectiveTemplate, fields);
  if (lines.empty()) p.warnings.push_back("reflective prompt built for empty code (length 0)");
  return p;
}

ReflectiveParse parse_reflective_response(const std::string& text, std::size_t expected_len,
                                          double fallback_rate) {
  // Fence contents sit between the 1st/2nd, 3rd/4th, ... occurrences of ```.
  std::vector<std::string> blocks;
  std::size_t pos = 0;
  while (true) {
    const std::size_t open = text.find("```", pos);
    if (open == std::string::npos) break;
    const std::size_t close = text.find("```", open + 3);
    if (close == std::string::npos) break;
    std::string body = text.substr(open + 3, close - open - 3);
    // Drop an info string such as "python" on the opening fence line.
    const std::size_t nl = body.find('\n');
    if (nl != std::string::npos && body.substr(0, nl).find('[') == std::string::npos)
      body = body.substr(nl + 1);
    blocks.push_back(std::move(body));
    pos = close + 3;
  }
  ReflectiveParse r;
  std::vector<double> values;
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
    if (!parse_float_list(*it, values) || values.size() != expected_len) continue;
    const bool in_range = std::all_of(values.begin(), values.end(), [](double v) {
      return std::isfinite(v) && v >= 0.0 && v <= 1.0;
    });
    if (!in_range) continue;
    r.line_conf = values;
    r.compliant = true;
    return r;
  }
  r.line_conf.assign(expected_len, fallback_rate);
  r.compliant = false;
  return r;
}

std::vector<double> deaggregate_line_to_token(std::span<const double> line_conf,
                                              std::span<const LineSpan> line_spans) {
  if (line_conf.size() != line_spans.size())
    throw DataError("line confidence count does not match line spans");
  std::vector<double> out;
  for (std::size_t l = 0; l < line_spans.size(); ++l)
    out.insert(out.end(), line_spans[l].size(), line_conf[l]);
  return out;
}

ConfidenceAssignment reflective_confidence(const ReflectiveParse& parsed,
                                           std::span<const LineSpan> line_spans) {
  ConfidenceAssignment a;
  a.estimator = EstimatorKind::kReflective;
  a.line_conf = parsed.line_conf;
  a.token_conf = deaggregate_line_to_token(parsed.line_conf, line_spans);
  a.problem_conf = a.line_conf.empty() ? 1.0 : aggregate(a.line_conf, TokenAgg::kMin);
  return a;
}

}  // namespace confidence
}  // namespace loccal
