#pragma once

#include <string>

namespace loccal {

// Level at which a confidence or label applies.
enum class Granularity { kToken, kLine, kProblem };

std::string to_string(Granularity g);
Granularity granularity_from_string(const std::string& s);

}  // namespace loccal
