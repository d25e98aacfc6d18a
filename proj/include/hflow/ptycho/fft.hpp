#pragma once

#include <Eigen/Dense>

namespace hflow::ptycho {

/// Unitary 2-D DFT (1/sqrt(rows*cols) each way), so fft2 and ifft2 are exact
/// inverses and preserve the squared norm. Plans are cached per shape.
Eigen::ArrayXXcd fft2(const Eigen::ArrayXXcd& x);
Eigen::ArrayXXcd ifft2(const Eigen::ArrayXXcd& x);

}  // namespace hflow::ptycho
