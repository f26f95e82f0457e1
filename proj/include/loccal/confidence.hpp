#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "loccal/tok.hpp"

namespace loccal {

enum class EstimatorKind { kTokenProb, kMultisample, kReflective, kProbe };

std::string to_string(EstimatorKind e);
EstimatorKind estimator_from_string(const std::string& s);

struct ConfidenceAssignment {
  EstimatorKind estimator = EstimatorKind::kTokenProb;
  std::vector<double> token_conf;
  std::vector<double> line_conf;
  double problem_conf = 1.0;
  // Lines whose confidence is the vacuous 1.0 of an empty span.
  std::vector<std::size_t> vacuous_lines;
};

enum class TokenAgg { kMin, kMean, kGmean };

std::string to_string(TokenAgg a);
TokenAgg token_agg_from_string(const std::string& s);

enum class LineAgg { kMean, kGmean, kMin, kPreMin, kPreMean };

std::string to_string(LineAgg a);
LineAgg line_agg_from_string(const std::string& s);

struct MultisampleConfig {
  std::size_t variant_count = 5;
  double temperature = 0.8;
  LineAgg line_agg = LineAgg::kMean;
};

namespace confidence {

// Aggregate of a non-empty value list. gmean of any zero is zero.
double aggregate(std::span<const double> values, TokenAgg agg);

// token_conf is the aligned probabilities; lines and the problem aggregate
// over their tokens. An empty line gets 1.0 and is listed in vacuous_lines.
ConfidenceAssignment tokenprob_confidence(std::span<const double> aligned_probs,
                                          std::span<const LineSpan> line_spans,
                                          TokenAgg agg = TokenAgg::kMin);

// Per token of `sample`: fraction of variants that keep it (equal block, no
// insert directly before). With no variants every token gets 0.
std::vector<double> multisample_token_confidence(std::span<const Token> sample,
                                                 std::span<const TokenList> variants);

// mean / gmean / min aggregate token_conf over each line.
// pre_min diffs whole lines against each variant's lines and takes the
// fraction of variants that keep the line. pre_mean takes, per variant, the
// fraction of the line's tokens kept by the token diff and averages over
// variants (numerically the same as mean).
std::vector<double> multisample_line_confidence(std::span<const double> token_conf,
                                                std::span<const LineSpan> line_spans,
                                                std::span<const Token> sample,
                                                std::span<const TokenList> variants,
                                                LineAgg mode);

// Full assignment; the problem confidence is the mean token confidence.
ConfidenceAssignment multisample_confidence(std::span<const Token> sample,
                                            std::span<const LineSpan> line_spans,
                                            std::span<const TokenList> variants,
                                            LineAgg mode = LineAgg::kMean);

struct ReflectivePrompt {
  std::string text;
  std::vector<std::string> warnings;
};

// Renders the line-confidence prompt for `code` split into `lines`
// (terminators stripped by the caller or here, either works).
ReflectivePrompt build_reflective_prompt(const std::string& code,
                                         std::span<const std::string> lines);

struct ReflectiveParse {
  std::vector<double> line_conf;
  bool compliant = false;
};

// Scans fenced code blocks from last to first and returns the first one
// holding a float list of exactly expected_len values in [0,1]. Otherwise
// returns expected_len copies of fallback_rate, non-compliant.
ReflectiveParse parse_reflective_response(const std::string& text, std::size_t expected_len,
                                          double fallback_rate);

// Each token takes its line's confidence.
std::vector<double> deaggregate_line_to_token(std::span<const double> line_conf,
                                              std::span<const LineSpan> line_spans);

ConfidenceAssignment reflective_confidence(const ReflectiveParse& parsed,
                                           std::span<const LineSpan> line_spans);

}  // namespace confidence
}  // namespace loccal
