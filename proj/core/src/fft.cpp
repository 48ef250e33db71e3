#include "smo/fft.hpp"

#include <fftw3.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <map>
#include <mutex>

#include "smo/errors.hpp"

namespace smo::fft {
namespace {

// Grid buffers sit right at glibc's default mmap threshold, so every
// forward call would otherwise fault in fresh pages and return them on free.
// Keeping large blocks on the heap lets the allocator recycle them.
const bool g_malloc_tuned = [] {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 64 << 20);
#endif
  return true;
}();

struct PlanPair {
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;
};

std::mutex g_plan_mu;
std::map<int, PlanPair>& plan_cache() {
  static auto* cache = new std::map<int, PlanPair>();
  return *cache;
}

// Plans are created once per grid size on scratch buffers with
// FFTW_UNALIGNED so they can execute on arbitrarily aligned user arrays.
const PlanPair& plans_for(int n) {
  std::lock_guard<std::mutex> lk(g_plan_mu);
  auto& cache = plan_cache();
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;

  fftw_complex* a = fftw_alloc_complex(static_cast<size_t>(n) * n);
  fftw_complex* b = fftw_alloc_complex(static_cast<size_t>(n) * n);
  if (!a || !b) throw NumericError("fft: allocation failed");
  PlanPair p;
  const unsigned flags = FFTW_MEASURE | FFTW_UNALIGNED;
  p.fwd = fftw_plan_dft_2d(n, n, a, b, FFTW_FORWARD, flags);
  p.inv = fftw_plan_dft_2d(n, n, a, b, FFTW_BACKWARD, flags);
  fftw_free(a);
  fftw_free(b);
  if (!p.fwd || !p.inv) throw NumericError("fft: planning failed");
  return cache.emplace(n, p).first->second;
}

fftw_complex* as_fftw(std::complex<double>* p) { return reinterpret_cast<fftw_complex*>(p); }
const fftw_complex* as_fftw(const std::complex<double>* p) {
  return reinterpret_cast<const fftw_complex*>(p);
}

void check_square(const ComplexGrid& g) {
  if (g.rows() != g.cols() || g.rows() == 0) throw ConfigError("fft: grid must be square");
}

}  // namespace

void forward(const ComplexGrid& in, ComplexGrid& out) {
  check_square(in);
  const int n = static_cast<int>(in.rows());
  out.resize(n, n);
  const PlanPair& p = plans_for(n);
  fftw_execute_dft(p.fwd, const_cast<fftw_complex*>(as_fftw(in.data())), as_fftw(out.data()));
}

void inverse(const ComplexGrid& in, ComplexGrid& out) {
  check_square(in);
  const int n = static_cast<int>(in.rows());
  out.resize(n, n);
  const PlanPair& p = plans_for(n);
  fftw_execute_dft(p.inv, const_cast<fftw_complex*>(as_fftw(in.data())), as_fftw(out.data()));
  out *= 1.0 / (static_cast<double>(n) * n);
}

ComplexGrid forward(const RealGrid& in) {
  ComplexGrid c = in.cast<std::complex<double>>();
  ComplexGrid out;
  forward(c, out);
  return out;
}

ComplexGrid forward(const ComplexGrid& in) {
  ComplexGrid out;
  forward(in, out);
  return out;
}

ComplexGrid inverse(const ComplexGrid& in) {
  ComplexGrid out;
  inverse(in, out);
  return out;
}

}  // namespace smo::fft
