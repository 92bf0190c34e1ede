#include "s3net/wavelet.hpp"

#include <string>

namespace s3net::wavelet {

namespace {

struct PlaneDims {
    std::int64_t planes; // product of leading dims
    int h;
    int w;
};

PlaneDims plane_dims(const Tensor& x, const char* who) {
    if (x.rank() < 2) {
        throw DimensionError(std::string(who) + ": need at least 2 dimensions, got " +
                             x.shape_str());
    }
    PlaneDims d;
    d.h = x.dim(x.rank() - 2);
    d.w = x.dim(x.rank() - 1);
    d.planes = x.size() / (static_cast<std::int64_t>(d.h) * d.w);
    return d;
}

void require_even(const PlaneDims& d, const Tensor& x, const char* who) {
    if (d.h % 2 != 0) {
        throw DimensionError(std::string(who) + ": height " + std::to_string(d.h) +
                             " must be even (shape " + x.shape_str() + ")");
    }
    if (d.w % 2 != 0) {
        throw DimensionError(std::string(who) + ": width " + std::to_string(d.w) +
                             " must be even (shape " + x.shape_str() + ")");
    }
}

std::vector<int> halved_shape(const Tensor& x) {
    std::vector<int> s = x.shape();
    s[s.size() - 2] /= 2;
    s[s.size() - 1] /= 2;
    return s;
}

// Subband signs on (a, b, c, d) = (top-left, top-right, bottom-left,
// bottom-right); every coefficient carries the common factor 1/2.
struct Signs {
    double a, b, c, d;
};

constexpr Signs kSigns[4] = {
    {1.0, 1.0, 1.0, 1.0},    // ll
    {1.0, -1.0, 1.0, -1.0},  // lh
    {1.0, 1.0, -1.0, -1.0},  // hl
    {1.0, -1.0, -1.0, 1.0},  // hh
};

void analyze_plane(const double* x, int h, int w, double* ll, double* lh, double* hl, double* hh) {
    const int oh = h / 2;
    const int ow = w / 2;
    for (int oy = 0; oy < oh; ++oy) {
        const double* r0 = x + static_cast<std::int64_t>(2 * oy) * w;
        const double* r1 = r0 + w;
        for (int ox = 0; ox < ow; ++ox) {
            const double a = r0[2 * ox];
            const double b = r0[2 * ox + 1];
            const double c = r1[2 * ox];
            const double d = r1[2 * ox + 1];
            const std::int64_t o = static_cast<std::int64_t>(oy) * ow + ox;
            ll[o] = 0.5 * (a + b + c + d);
            lh[o] = 0.5 * (a - b + c - d);
            hl[o] = 0.5 * (a + b - c - d);
            hh[o] = 0.5 * (a - b - c + d);
        }
    }
}

void synthesize_plane(const double* ll, const double* lh, const double* hl, const double* hh,
                      int oh, int ow, double* x) {
    const int w = 2 * ow;
    for (int oy = 0; oy < oh; ++oy) {
        double* r0 = x + static_cast<std::int64_t>(2 * oy) * w;
        double* r1 = r0 + w;
        for (int ox = 0; ox < ow; ++ox) {
            const std::int64_t o = static_cast<std::int64_t>(oy) * ow + ox;
            const double vll = ll[o];
            const double vlh = lh[o];
            const double vhl = hl[o];
            const double vhh = hh[o];
            r0[2 * ox] = 0.5 * (vll + vlh + vhl + vhh);
            r0[2 * ox + 1] = 0.5 * (vll - vlh + vhl - vhh);
            r1[2 * ox] = 0.5 * (vll + vlh - vhl - vhh);
            r1[2 * ox + 1] = 0.5 * (vll - vlh - vhl + vhh);
        }
    }
}

} // namespace

SubbandSet dwt_step(const Tensor& x) {
    const PlaneDims d = plane_dims(x, "dwt_step");
    require_even(d, x, "dwt_step");
    std::vector<int> out_shape = halved_shape(x);
    SubbandSet s{Tensor(out_shape), Tensor(out_shape), Tensor(out_shape), Tensor(out_shape)};
    const std::int64_t in_plane = static_cast<std::int64_t>(d.h) * d.w;
    const std::int64_t out_plane = in_plane / 4;
    for (std::int64_t p = 0; p < d.planes; ++p) {
        analyze_plane(x.data() + p * in_plane, d.h, d.w, s.ll.data() + p * out_plane,
                      s.lh.data() + p * out_plane, s.hl.data() + p * out_plane,
                      s.hh.data() + p * out_plane);
    }
    return s;
}

Tensor idwt_step(const SubbandSet& s) {
    check_same_shape(s.ll, s.lh, "idwt_step (ll vs lh)");
    check_same_shape(s.ll, s.hl, "idwt_step (ll vs hl)");
    check_same_shape(s.ll, s.hh, "idwt_step (ll vs hh)");
    const PlaneDims d = plane_dims(s.ll, "idwt_step");
    std::vector<int> out_shape = s.ll.shape();
    out_shape[out_shape.size() - 2] *= 2;
    out_shape[out_shape.size() - 1] *= 2;
    Tensor x(out_shape);
    const std::int64_t out_plane = static_cast<std::int64_t>(d.h) * d.w;
    const std::int64_t in_plane = out_plane * 4;
    for (std::int64_t p = 0; p < d.planes; ++p) {
        synthesize_plane(s.ll.data() + p * out_plane, s.lh.data() + p * out_plane,
                         s.hl.data() + p * out_plane, s.hh.data() + p * out_plane, d.h, d.w,
                         x.data() + p * in_plane);
    }
    return x;
}

SubbandPyramid dwt_pyramid(const Tensor& x, int levels) {
    if (levels < 0) {
        throw DimensionError("dwt_pyramid: level count must be >= 0");
    }
    const PlaneDims d = plane_dims(x, "dwt_pyramid");
    const int divisor = 1 << levels;
    if (d.h % divisor != 0 || d.w % divisor != 0) {
        throw DimensionError("dwt_pyramid: spatial dims of " + x.shape_str() +
                             " must be divisible by 2^levels = " + std::to_string(divisor));
    }
    SubbandPyramid pyr;
    pyr.level0 = x;
    Tensor current = x;
    for (int i = 0; i < levels; ++i) {
        SubbandSet s = dwt_step(current);
        current = s.ll;
        pyr.levels.push_back(std::move(s));
    }
    return pyr;
}

namespace {

// The transform is linear and orthonormal, so the adjoint of extracting one
// subband scatters the gradient back with the same signed half-weights.
ag::Var subband_op(const ag::Var& x, int which) {
    const PlaneDims d = plane_dims(x->value, "dwt_step");
    require_even(d, x->value, "dwt_step");
    const Signs sg = kSigns[which];
    Tensor out(halved_shape(x->value));
    const int oh = d.h / 2;
    const int ow = d.w / 2;
    const std::int64_t in_plane = static_cast<std::int64_t>(d.h) * d.w;
    const std::int64_t out_plane = in_plane / 4;
    for (std::int64_t p = 0; p < d.planes; ++p) {
        const double* src = x->value.data() + p * in_plane;
        double* dst = out.data() + p * out_plane;
        for (int oy = 0; oy < oh; ++oy) {
            const double* r0 = src + static_cast<std::int64_t>(2 * oy) * d.w;
            const double* r1 = r0 + d.w;
            for (int ox = 0; ox < ow; ++ox) {
                dst[static_cast<std::int64_t>(oy) * ow + ox] =
                    0.5 * (sg.a * r0[2 * ox] + sg.b * r0[2 * ox + 1] + sg.c * r1[2 * ox] +
                           sg.d * r1[2 * ox + 1]);
            }
        }
    }
    const int h = d.h;
    const int w = d.w;
    const std::int64_t planes = d.planes;
    return ag::make_op(std::move(out), {x}, [x, sg, planes, h, w, oh, ow](ag::Node& node) {
        if (!x->requires_grad) {
            return;
        }
        Tensor& gx = x->grad_buffer();
        const std::int64_t in_plane = static_cast<std::int64_t>(h) * w;
        const std::int64_t out_plane = in_plane / 4;
        for (std::int64_t p = 0; p < planes; ++p) {
            const double* g = node.grad.data() + p * out_plane;
            double* dst = gx.data() + p * in_plane;
            for (int oy = 0; oy < oh; ++oy) {
                double* r0 = dst + static_cast<std::int64_t>(2 * oy) * w;
                double* r1 = r0 + w;
                for (int ox = 0; ox < ow; ++ox) {
                    const double gv = 0.5 * g[static_cast<std::int64_t>(oy) * ow + ox];
                    r0[2 * ox] += sg.a * gv;
                    r0[2 * ox + 1] += sg.b * gv;
                    r1[2 * ox] += sg.c * gv;
                    r1[2 * ox + 1] += sg.d * gv;
                }
            }
        }
    });
}

} // namespace

VarSubbandSet dwt_step(const ag::Var& x) {
    return {subband_op(x, 0), subband_op(x, 1), subband_op(x, 2), subband_op(x, 3)};
}

} // namespace s3net::wavelet
