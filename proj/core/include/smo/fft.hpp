#pragma once

#include "smo/field.hpp"

namespace smo::fft {

// 2-D transforms on square grids. Forward is unnormalized, inverse carries
// the 1/N^2 factor, so inverse(forward(x)) == x up to rounding.
//
// Plans are cached per grid size; plan creation is serialized internally and
// execution is safe to call concurrently on distinct buffers.
void forward(const ComplexGrid& in, ComplexGrid& out);
void inverse(const ComplexGrid& in, ComplexGrid& out);

ComplexGrid forward(const RealGrid& in);
ComplexGrid forward(const ComplexGrid& in);
ComplexGrid inverse(const ComplexGrid& in);

// Signed frequency index of natural-order FFT bin r on an N-point axis:
// r for r < N/2, r - N otherwise.
inline int signed_bin(int r, int n) { return r < (n + 1) / 2 ? r : r - n; }

// Natural-order bin of a signed frequency index.
inline int natural_bin(int k, int n) { return k >= 0 ? k : k + n; }

}  // namespace smo::fft
