#include "hflow/ptycho/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

namespace hflow::ptycho {
namespace {

// Planning is not thread-safe in FFTW; execution with the new-array API is.
std::mutex plan_mu;

fftw_plan plan_for(Eigen::Index rows, Eigen::Index cols, int sign) {
  static std::map<std::tuple<Eigen::Index, Eigen::Index, int>, fftw_plan> cache;
  std::lock_guard lock(plan_mu);
  auto key = std::make_tuple(rows, cols, sign);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  // Eigen is column-major: a rows x cols array is a cols x rows C array.
  Eigen::ArrayXXcd in(rows, cols), out(rows, cols);
  fftw_plan p = fftw_plan_dft_2d(static_cast<int>(cols), static_cast<int>(rows),
                                 reinterpret_cast<fftw_complex*>(in.data()),
                                 reinterpret_cast<fftw_complex*>(out.data()), sign,
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
  cache.emplace(key, p);
  return p;
}

Eigen::ArrayXXcd transform(const Eigen::ArrayXXcd& x, int sign) {
  Eigen::ArrayXXcd in = x;  // FFTW may scribble on its input
  Eigen::ArrayXXcd out(x.rows(), x.cols());
  if (x.size() == 0) return out;
  fftw_execute_dft(plan_for(x.rows(), x.cols(), sign), reinterpret_cast<fftw_complex*>(in.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  out *= 1.0 / std::sqrt(static_cast<double>(x.size()));
  return out;
}

}  // namespace

Eigen::ArrayXXcd fft2(const Eigen::ArrayXXcd& x) { return transform(x, FFTW_FORWARD); }
Eigen::ArrayXXcd ifft2(const Eigen::ArrayXXcd& x) { return transform(x, FFTW_BACKWARD); }

}  // namespace hflow::ptycho
