#pragma once

#include <vector>

#include "s3net/autograd.hpp"
#include "s3net/tensor.hpp"

namespace s3net::wavelet {

// One-step 2-D Haar decomposition in the orthonormal (1/sqrt(2) per axis)
// convention, applied to the last two dimensions; leading dimensions are
// treated as independent planes. Subband naming: first letter is the filter
// along the height axis, second along the width axis, so for the 2x2 block
// [[a, b], [c, d]]:
//   ll = (a+b+c+d)/2   lh = (a-b+c-d)/2
//   hl = (a+b-c-d)/2   hh = (a-b-c+d)/2
// The orthonormal scaling makes the transform energy-preserving and its
// adjoint equal to the inverse.
struct SubbandSet {
    Tensor ll, lh, hl, hh;
};

// levels[0] is the first decomposition; levels[i] decomposes levels[i-1].ll.
// level0 keeps the undecomposed input.
struct SubbandPyramid {
    Tensor level0;
    std::vector<SubbandSet> levels;
};

// Requires even height and width; throws DimensionError naming the axis.
SubbandSet dwt_step(const Tensor& x);

// Exact inverse of dwt_step; throws ShapeError on mismatched subband shapes.
Tensor idwt_step(const SubbandSet& s);

// Requires height and width divisible by 2^levels.
SubbandPyramid dwt_pyramid(const Tensor& x, int levels);

// Differentiable single-step decomposition used by the wavelet-SSIM loss.
struct VarSubbandSet {
    ag::Var ll, lh, hl, hh;
};

VarSubbandSet dwt_step(const ag::Var& x);

} // namespace s3net::wavelet
