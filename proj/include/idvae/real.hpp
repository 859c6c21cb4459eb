#pragma once

// Scalar type of every tensor. The double build exists for finite-difference
// gradient checks; training and the file formats use float.
#ifndef IDVAE_REAL
#define IDVAE_REAL float
#endif

namespace idvae {
using real = IDVAE_REAL;
}
