#pragma once

#include <cstdint>

namespace xssl::mathk {

// In-place elementwise kernels, compiled in a fast-math TU so the calls
// vectorize through libmvec. Deterministic for a given build.
void vexp(double* v, int64_t n);
void vtanh(double* v, int64_t n);

}  // namespace xssl::mathk
