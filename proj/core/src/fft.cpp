#include "ovrcine/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

namespace ovrcine {

namespace {

struct FftwFree
{
  void operator()(void *p) const { fftw_free(p); }
};
using Buffer = std::unique_ptr<fftw_complex[], FftwFree>;

Buffer alloc(size_t n) { return Buffer(static_cast<fftw_complex *>(fftw_malloc(sizeof(fftw_complex) * n))); }

// The FFTW planner is not thread-safe; execution with new-array interfaces on
// fftw_malloc'd buffers is. Plans use FFTW_ESTIMATE so the chosen algorithm, and
// therefore every output bit, is reproducible from run to run.
class PlanCache
{
public:
  ~PlanCache()
  {
    for (auto &[key, plan] : plans_) { fftw_destroy_plan(plan); }
  }

  fftw_plan get(int rows, int cols, int sign)
  {
    std::scoped_lock lock(mutex_);
    auto const key = std::make_tuple(rows, cols, sign);
    if (auto it = plans_.find(key); it != plans_.end()) { return it->second; }
    size_t const n = static_cast<size_t>(rows) * static_cast<size_t>(cols);
    Buffer in = alloc(n);
    Buffer out = alloc(n);
    fftw_plan p = fftw_plan_dft_2d(rows, cols, in.get(), out.get(), sign, FFTW_ESTIMATE);
    plans_.emplace(key, p);
    return p;
  }

private:
  std::mutex mutex_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

PlanCache &cache()
{
  static PlanCache c;
  return c;
}

void transform(ComplexImage const &in, ComplexImage &out, int sign)
{
  int const rows = static_cast<int>(in.rows());
  int const cols = static_cast<int>(in.cols());
  size_t const n = static_cast<size_t>(rows) * static_cast<size_t>(cols);
  fftw_plan plan = cache().get(rows, cols, sign);

  thread_local Buffer a;
  thread_local Buffer b;
  thread_local size_t capacity = 0;
  if (capacity < n) {
    a = alloc(n);
    b = alloc(n);
    capacity = n;
  }

  // ifftshift on the way in: centered index (r, c) lands at (r - rows/2, c - cols/2) mod size.
  int const hr = rows / 2;
  int const hc = cols / 2;
  for (int r = 0; r < rows; ++r) {
    int const rr = ((r - hr) % rows + rows) % rows;
    for (int c = 0; c < cols; ++c) {
      int const cc = ((c - hc) % cols + cols) % cols;
      cplx const v = in(r, c);
      a[static_cast<size_t>(rr) * cols + cc][0] = v.real();
      a[static_cast<size_t>(rr) * cols + cc][1] = v.imag();
    }
  }
  fftw_execute_dft(plan, a.get(), b.get());

  out.resize(rows, cols);
  double const scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (int r = 0; r < rows; ++r) {
    int const rr = ((r - hr) % rows + rows) % rows;
    for (int c = 0; c < cols; ++c) {
      int const cc = ((c - hc) % cols + cols) % cols;
      auto const &v = b[static_cast<size_t>(rr) * cols + cc];
      out(r, c) = cplx(v[0] * scale, v[1] * scale);
    }
  }
}

} // namespace

void fft2c_into(ComplexImage const &in, ComplexImage &out) { transform(in, out, FFTW_FORWARD); }
void ifft2c_into(ComplexImage const &in, ComplexImage &out) { transform(in, out, FFTW_BACKWARD); }

ComplexImage fft2c(ComplexImage const &img)
{
  require_finite(img, "fft2c");
  ComplexImage out;
  fft2c_into(img, out);
  return out;
}

ComplexImage ifft2c(ComplexImage const &ksp)
{
  require_finite(ksp, "ifft2c");
  ComplexImage out;
  ifft2c_into(ksp, out);
  return out;
}

} // namespace ovrcine
