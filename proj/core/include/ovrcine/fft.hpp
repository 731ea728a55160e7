#pragma once

#include "ovrcine/image.hpp"

namespace ovrcine {

// Centered, orthonormal 2D DFT: DC sits at (n_pe/2, n_fe/2) in both domains and
// both directions scale by 1/sqrt(n_pe * n_fe), so the pair is unitary.
// Non-finite input throws NumericalError.
ComplexImage fft2c(ComplexImage const &img);
ComplexImage ifft2c(ComplexImage const &ksp);

// Unchecked variants for inner loops whose inputs are known finite.
void fft2c_into(ComplexImage const &in, ComplexImage &out);
void ifft2c_into(ComplexImage const &in, ComplexImage &out);

} // namespace ovrcine
