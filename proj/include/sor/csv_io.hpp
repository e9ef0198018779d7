#pragma once

#include <string>

#include "sor/types.hpp"

namespace sor {

// Strict CSV schema: a header naming covariate columns plus the reserved
// trio y, r1, r2 (any column order; covariates keep header order). The
// outcome uses the exact token NA when (and only when) r2 = 0; r1/r2 are 0/1.
// Malformed numbers, inconsistent missingness, or r2 < r1 raise DataError
// with 1-based line numbers. Writing uses %.17g so a round trip preserves
// every double bit-for-bit.
Dataset load_csv(const std::string& path);
void save_csv(const Dataset& data, const std::string& path);

// In-memory variants (used by tests and the CLI's report echo).
Dataset parse_csv(const std::string& text, const std::string& origin = "<memory>");
std::string format_csv(const Dataset& data);

}  // namespace sor
