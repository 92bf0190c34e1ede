#include <algorithm>
#include <string>

#include "s3net/autograd.hpp"

namespace s3net::ag {

namespace {

// Output-coordinate bounds for which in = out*stride + k - pad stays inside
// [0, limit). Returns [lo, hi] inclusive; empty when lo > hi.
struct Range {
    int lo;
    int hi;
};

Range valid_range(int k, int pad, int stride, int limit, int out_limit) {
    const int shift = pad - k;
    int lo = 0;
    if (shift > 0) {
        lo = (shift + stride - 1) / stride;
    }
    const int num = limit - 1 + pad - k;
    if (num < 0) {
        return {1, 0}; // empty
    }
    int hi = num / stride;
    hi = std::min(hi, out_limit - 1);
    return {lo, hi};
}

void check_4d(const Tensor& t, const std::string& who) {
    if (t.rank() != 4) {
        throw ShapeError(who + ": expected N x C x H x W, got " + t.shape_str());
    }
}

} // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    check_4d(x->value, "conv2d input");
    check_4d(weight->value, "conv2d weight");
    const int n = x->value.dim(0);
    const int ci = x->value.dim(1);
    const int h = x->value.dim(2);
    const int w = x->value.dim(3);
    const int co = weight->value.dim(0);
    const int kh = weight->value.dim(2);
    const int kw = weight->value.dim(3);
    if (weight->value.dim(1) != ci) {
        throw ShapeError("conv2d: weight expects " + std::to_string(weight->value.dim(1)) +
                         " input channels, input has " + std::to_string(ci));
    }
    if (bias && (bias->value.rank() != 1 || bias->value.dim(0) != co)) {
        throw ShapeError("conv2d: bias shape " + bias->value.shape_str() + " does not match " +
                         std::to_string(co) + " output channels");
    }
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    if (oh < 1 || ow < 1) {
        throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                             " does not fit input " + x->value.shape_str());
    }

    Tensor out({n, co, oh, ow});
    for (int b = 0; b < n; ++b) {
        for (int oc = 0; oc < co; ++oc) {
            double* oplane = out.data() + (static_cast<std::int64_t>(b) * co + oc) * oh * ow;
            const double bv = bias ? bias->value.flat(oc) : 0.0;
            std::fill(oplane, oplane + static_cast<std::int64_t>(oh) * ow, bv);
            for (int ic = 0; ic < ci; ++ic) {
                const double* xplane =
                    x->value.data() + (static_cast<std::int64_t>(b) * ci + ic) * h * w;
                const double* wbase =
                    weight->value.data() +
                    ((static_cast<std::int64_t>(oc) * ci + ic) * kh) * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    const Range ry = valid_range(ky, pad, stride, h, oh);
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv = wbase[ky * kw + kx];
                        const Range rx = valid_range(kx, pad, stride, w, ow);
                        for (int oy = ry.lo; oy <= ry.hi; ++oy) {
                            const double* xrow = xplane + (oy * stride + ky - pad) * w + kx - pad;
                            double* orow = oplane + static_cast<std::int64_t>(oy) * ow;
                            for (int ox = rx.lo; ox <= rx.hi; ++ox) {
                                orow[ox] += wv * xrow[ox * stride];
                            }
                        }
                    }
                }
            }
        }
    }

    std::vector<Var> parents = bias ? std::vector<Var>{x, weight, bias}
                                    : std::vector<Var>{x, weight};
    return make_op(std::move(out), std::move(parents),
                   [x, weight, bias, stride, pad, n, ci, h, w, co, kh, kw, oh, ow](Node& node) {
        const Tensor& g = node.grad;
        if (x->requires_grad) {
            Tensor& gx = x->grad_buffer();
            for (int b = 0; b < n; ++b) {
                for (int oc = 0; oc < co; ++oc) {
                    const double* gplane =
                        g.data() + (static_cast<std::int64_t>(b) * co + oc) * oh * ow;
                    for (int ic = 0; ic < ci; ++ic) {
                        double* dxplane =
                            gx.data() + (static_cast<std::int64_t>(b) * ci + ic) * h * w;
                        const double* wbase =
                            weight->value.data() +
                            ((static_cast<std::int64_t>(oc) * ci + ic) * kh) * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            const Range ry = valid_range(ky, pad, stride, h, oh);
                            for (int kx = 0; kx < kw; ++kx) {
                                const double wv = wbase[ky * kw + kx];
                                const Range rx = valid_range(kx, pad, stride, w, ow);
                                for (int oy = ry.lo; oy <= ry.hi; ++oy) {
                                    double* dxrow =
                                        dxplane + (oy * stride + ky - pad) * w + kx - pad;
                                    const double* grow =
                                        gplane + static_cast<std::int64_t>(oy) * ow;
                                    for (int ox = rx.lo; ox <= rx.hi; ++ox) {
                                        dxrow[ox * stride] += wv * grow[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if (weight->requires_grad) {
            Tensor& gw = weight->grad_buffer();
            for (int b = 0; b < n; ++b) {
                for (int oc = 0; oc < co; ++oc) {
                    const double* gplane =
                        g.data() + (static_cast<std::int64_t>(b) * co + oc) * oh * ow;
                    for (int ic = 0; ic < ci; ++ic) {
                        const double* xplane =
                            x->value.data() + (static_cast<std::int64_t>(b) * ci + ic) * h * w;
                        double* dwbase =
                            gw.data() + ((static_cast<std::int64_t>(oc) * ci + ic) * kh) * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            const Range ry = valid_range(ky, pad, stride, h, oh);
                            for (int kx = 0; kx < kw; ++kx) {
                                const Range rx = valid_range(kx, pad, stride, w, ow);
                                double acc = 0.0;
                                for (int oy = ry.lo; oy <= ry.hi; ++oy) {
                                    const double* xrow =
                                        xplane + (oy * stride + ky - pad) * w + kx - pad;
                                    const double* grow =
                                        gplane + static_cast<std::int64_t>(oy) * ow;
                                    for (int ox = rx.lo; ox <= rx.hi; ++ox) {
                                        acc += grow[ox] * xrow[ox * stride];
                                    }
                                }
                                dwbase[ky * kw + kx] += acc;
                            }
                        }
                    }
                }
            }
        }
        if (bias && bias->requires_grad) {
            Tensor& gb = bias->grad_buffer();
            for (int b = 0; b < n; ++b) {
                for (int oc = 0; oc < co; ++oc) {
                    const double* gplane =
                        g.data() + (static_cast<std::int64_t>(b) * co + oc) * oh * ow;
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) {
                        acc += gplane[i];
                    }
                    gb.flat(oc) += acc;
                }
            }
        }
    });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    check_4d(x->value, "conv_transpose2d input");
    check_4d(weight->value, "conv_transpose2d weight");
    const int n = x->value.dim(0);
    const int ci = x->value.dim(1);
    const int ih = x->value.dim(2);
    const int iw = x->value.dim(3);
    if (weight->value.dim(0) != ci) {
        throw ShapeError("conv_transpose2d: weight expects " +
                         std::to_string(weight->value.dim(0)) + " input channels, input has " +
                         std::to_string(ci));
    }
    const int co = weight->value.dim(1);
    const int kh = weight->value.dim(2);
    const int kw = weight->value.dim(3);
    if (bias && (bias->value.rank() != 1 || bias->value.dim(0) != co)) {
        throw ShapeError("conv_transpose2d: bias shape " + bias->value.shape_str() +
                         " does not match " + std::to_string(co) + " output channels");
    }
    const int oh = (ih - 1) * stride + kh - 2 * pad;
    const int ow = (iw - 1) * stride + kw - 2 * pad;
    if (oh < 1 || ow < 1) {
        throw DimensionError("conv_transpose2d: degenerate output for input " +
                             x->value.shape_str());
    }

    Tensor out({n, co, oh, ow});
    for (int b = 0; b < n; ++b) {
        for (int oc = 0; oc < co; ++oc) {
            double* oplane = out.data() + (static_cast<std::int64_t>(b) * co + oc) * oh * ow;
            const double bv = bias ? bias->value.flat(oc) : 0.0;
            std::fill(oplane, oplane + static_cast<std::int64_t>(oh) * ow, bv);
            for (int ic = 0; ic < ci; ++ic) {
                const double* xplane =
                    x->value.data() + (static_cast<std::int64_t>(b) * ci + ic) * ih * iw;
                const double* wbase =
                    weight->value.data() +
                    ((static_cast<std::int64_t>(ic) * co + oc) * kh) * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    const Range ry = valid_range(ky, pad, stride, oh, ih);
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv = wbase[ky * kw + kx];
                        const Range rx = valid_range(kx, pad, stride, ow, iw);
                        for (int iy = ry.lo; iy <= ry.hi; ++iy) {
                            double* orow = oplane + (iy * stride + ky - pad) * ow + kx - pad;
                            const double* xrow = xplane + static_cast<std::int64_t>(iy) * iw;
                            for (int ix = rx.lo; ix <= rx.hi; ++ix) {
                                orow[ix * stride] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    }

    std::vector<Var> parents = bias ? std::vector<Var>{x, weight, bias}
                                    : std::vector<Var>{x, weight};
    return make_op(std::move(out), std::move(parents),
                   [x, weight, bias, stride, pad, n, ci, ih, iw, co, kh, kw, oh, ow](Node& node) {
        const Tensor& g = node.grad;
        if (x->requires_grad) {
            Tensor& gx = x->grad_buffer();
            for (int b = 0; b < n; ++b) {
                for (int oc = 0; oc < co; ++oc) {
                    const double* gplane =
                        g.data() + (static_cast<std::int64_t>(b) * co + oc) * oh * ow;
                    for (int ic = 0; ic < ci; ++ic) {
                        double* dxplane =
                            gx.data() + (static_cast<std::int64_t>(b) * ci + ic) * ih * iw;
                        const double* wbase =
                            weight->value.data() +
                            ((static_cast<std::int64_t>(ic) * co + oc) * kh) * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            const Range ry = valid_range(ky, pad, stride, oh, ih);
                            for (int kx = 0; kx < kw; ++kx) {
                                const double wv = wbase[ky * kw + kx];
                                const Range rx = valid_range(kx, pad, stride, ow, iw);
                                for (int iy = ry.lo; iy <= ry.hi; ++iy) {
                                    const double* grow =
                                        gplane + (iy * stride + ky - pad) * ow + kx - pad;
                                    double* dxrow = dxplane + static_cast<std::int64_t>(iy) * iw;
                                    for (int ix = rx.lo; ix <= rx.hi; ++ix) {
                                        dxrow[ix] += wv * grow[ix * stride];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if (weight->requires_grad) {
            Tensor& gw = weight->grad_buffer();
            for (int b = 0; b < n; ++b) {
                for (int oc = 0; oc < co; ++oc) {
                    const double* gplane =
                        g.data() + (static_cast<std::int64_t>(b) * co + oc) * oh * ow;
                    for (int ic = 0; ic < ci; ++ic) {
                        const double* xplane =
                            x->value.data() + (static_cast<std::int64_t>(b) * ci + ic) * ih * iw;
                        double* dwbase =
                            gw.data() + ((static_cast<std::int64_t>(ic) * co + oc) * kh) * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            const Range ry = valid_range(ky, pad, stride, oh, ih);
                            for (int kx = 0; kx < kw; ++kx) {
                                const Range rx = valid_range(kx, pad, stride, ow, iw);
                                double acc = 0.0;
                                for (int iy = ry.lo; iy <= ry.hi; ++iy) {
                                    const double* grow =
                                        gplane + (iy * stride + ky - pad) * ow + kx - pad;
                                    const double* xrow =
                                        xplane + static_cast<std::int64_t>(iy) * iw;
                                    for (int ix = rx.lo; ix <= rx.hi; ++ix) {
                                        acc += grow[ix * stride] * xrow[ix];
                                    }
                                }
                                dwbase[ky * kw + kx] += acc;
                            }
                        }
                    }
                }
            }
        }
        if (bias && bias->requires_grad) {
            Tensor& gb = bias->grad_buffer();
            for (int b = 0; b < n; ++b) {
                for (int oc = 0; oc < co; ++oc) {
                    const double* gplane =
                        g.data() + (static_cast<std::int64_t>(b) * co + oc) * oh * ow;
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) {
                        acc += gplane[i];
                    }
                    gb.flat(oc) += acc;
                }
            }
        }
    });
}

Var avg_pool2d(const Var& x, int factor) {
    check_4d(x->value, "avg_pool2d");
    const int n = x->value.dim(0);
    const int c = x->value.dim(1);
    const int h = x->value.dim(2);
    const int w = x->value.dim(3);
    if (h % factor != 0) {
        throw DimensionError("avg_pool2d: height " + std::to_string(h) +
                             " not divisible by pool factor " + std::to_string(factor));
    }
    if (w % factor != 0) {
        throw DimensionError("avg_pool2d: width " + std::to_string(w) +
                             " not divisible by pool factor " + std::to_string(factor));
    }
    const int oh = h / factor;
    const int ow = w / factor;
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    Tensor out({n, c, oh, ow});
    for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
            const double* xplane = x->value.data() + (static_cast<std::int64_t>(b) * c + ch) * h * w;
            double* oplane = out.data() + (static_cast<std::int64_t>(b) * c + ch) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = 0.0;
                    for (int dy = 0; dy < factor; ++dy) {
                        const double* row = xplane + (oy * factor + dy) * w + ox * factor;
                        for (int dx = 0; dx < factor; ++dx) {
                            acc += row[dx];
                        }
                    }
                    oplane[oy * ow + ox] = acc * inv;
                }
            }
        }
    }
    return make_op(std::move(out), {x}, [x, factor, n, c, h, w, oh, ow, inv](Node& node) {
        if (!x->requires_grad) {
            return;
        }
        Tensor& gx = x->grad_buffer();
        for (int b = 0; b < n; ++b) {
            for (int ch = 0; ch < c; ++ch) {
                double* dxplane = gx.data() + (static_cast<std::int64_t>(b) * c + ch) * h * w;
                const double* gplane =
                    node.grad.data() + (static_cast<std::int64_t>(b) * c + ch) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        const double gv = gplane[oy * ow + ox] * inv;
                        for (int dy = 0; dy < factor; ++dy) {
                            double* row = dxplane + (oy * factor + dy) * w + ox * factor;
                            for (int dx = 0; dx < factor; ++dx) {
                                row[dx] += gv;
                            }
                        }
                    }
                }
            }
        }
    });
}

Var global_avg_pool(const Var& x) {
    check_4d(x->value, "global_avg_pool");
    const int n = x->value.dim(0);
    const int c = x->value.dim(1);
    const int h = x->value.dim(2);
    const int w = x->value.dim(3);
    const double inv = 1.0 / (static_cast<double>(h) * w);
    Tensor out({n, c, 1, 1});
    for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
            const double* plane = x->value.data() + (static_cast<std::int64_t>(b) * c + ch) * h * w;
            double acc = 0.0;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i) {
                acc += plane[i];
            }
            out.flat(static_cast<std::int64_t>(b) * c + ch) = acc * inv;
        }
    }
    return make_op(std::move(out), {x}, [x, n, c, h, w, inv](Node& node) {
        if (!x->requires_grad) {
            return;
        }
        Tensor& gx = x->grad_buffer();
        for (int b = 0; b < n; ++b) {
            for (int ch = 0; ch < c; ++ch) {
                const double gv = node.grad.flat(static_cast<std::int64_t>(b) * c + ch) * inv;
                double* plane = gx.data() + (static_cast<std::int64_t>(b) * c + ch) * h * w;
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i) {
                    plane[i] += gv;
                }
            }
        }
    });
}

Var upsample_nearest(const Var& x, int factor) {
    check_4d(x->value, "upsample_nearest");
    const int n = x->value.dim(0);
    const int c = x->value.dim(1);
    const int h = x->value.dim(2);
    const int w = x->value.dim(3);
    const int oh = h * factor;
    const int ow = w * factor;
    Tensor out({n, c, oh, ow});
    for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
            const double* xplane = x->value.data() + (static_cast<std::int64_t>(b) * c + ch) * h * w;
            double* oplane = out.data() + (static_cast<std::int64_t>(b) * c + ch) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
                const double* xrow = xplane + (oy / factor) * w;
                double* orow = oplane + static_cast<std::int64_t>(oy) * ow;
                for (int ox = 0; ox < ow; ++ox) {
                    orow[ox] = xrow[ox / factor];
                }
            }
        }
    }
    return make_op(std::move(out), {x}, [x, factor, n, c, h, w, oh, ow](Node& node) {
        if (!x->requires_grad) {
            return;
        }
        Tensor& gx = x->grad_buffer();
        for (int b = 0; b < n; ++b) {
            for (int ch = 0; ch < c; ++ch) {
                double* dxplane = gx.data() + (static_cast<std::int64_t>(b) * c + ch) * h * w;
                const double* gplane =
                    node.grad.data() + (static_cast<std::int64_t>(b) * c + ch) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    double* dxrow = dxplane + (oy / factor) * w;
                    const double* grow = gplane + static_cast<std::int64_t>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        dxrow[ox / factor] += grow[ox];
                    }
                }
            }
        }
    });
}

Var pixel_shuffle(const Var& x, int r) {
    check_4d(x->value, "pixel_shuffle");
    const int n = x->value.dim(0);
    const int c = x->value.dim(1);
    const int h = x->value.dim(2);
    const int w = x->value.dim(3);
    if (c % (r * r) != 0) {
        throw DimensionError("pixel_shuffle: channel count " + std::to_string(c) +
                             " not divisible by r^2 = " + std::to_string(r * r));
    }
    const int oc = c / (r * r);
    const int oh = h * r;
    const int ow = w * r;
    Tensor out({n, oc, oh, ow});
    for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < oc; ++ch) {
            for (int a = 0; a < r; ++a) {
                for (int bb = 0; bb < r; ++bb) {
                    const double* xplane =
                        x->value.data() +
                        (static_cast<std::int64_t>(b) * c + ch * r * r + a * r + bb) * h * w;
                    double* oplane =
                        out.data() + (static_cast<std::int64_t>(b) * oc + ch) * oh * ow;
                    for (int y = 0; y < h; ++y) {
                        double* orow = oplane + (static_cast<std::int64_t>(y) * r + a) * ow + bb;
                        const double* xrow = xplane + static_cast<std::int64_t>(y) * w;
                        for (int xx = 0; xx < w; ++xx) {
                            orow[static_cast<std::int64_t>(xx) * r] = xrow[xx];
                        }
                    }
                }
            }
        }
    }
    return make_op(std::move(out), {x}, [x, r, n, c, h, w, oc, oh, ow](Node& node) {
        if (!x->requires_grad) {
            return;
        }
        Tensor& gx = x->grad_buffer();
        for (int b = 0; b < n; ++b) {
            for (int ch = 0; ch < oc; ++ch) {
                for (int a = 0; a < r; ++a) {
                    for (int bb = 0; bb < r; ++bb) {
                        double* dxplane =
                            gx.data() +
                            (static_cast<std::int64_t>(b) * c + ch * r * r + a * r + bb) * h * w;
                        const double* gplane =
                            node.grad.data() + (static_cast<std::int64_t>(b) * oc + ch) * oh * ow;
                        for (int y = 0; y < h; ++y) {
                            const double* grow =
                                gplane + (static_cast<std::int64_t>(y) * r + a) * ow + bb;
                            double* dxrow = dxplane + static_cast<std::int64_t>(y) * w;
                            for (int xx = 0; xx < w; ++xx) {
                                dxrow[xx] += grow[static_cast<std::int64_t>(xx) * r];
                            }
                        }
                    }
                }
            }
        }
    });
}

Var window_filter(const Var& x, const Tensor& kernel) {
    check_4d(x->value, "window_filter");
    if (kernel.rank() != 2) {
        throw ShapeError("window_filter: kernel must be 2-D, got " + kernel.shape_str());
    }
    const int n = x->value.dim(0);
    const int c = x->value.dim(1);
    const int h = x->value.dim(2);
    const int w = x->value.dim(3);
    const int kh = kernel.dim(0);
    const int kw = kernel.dim(1);
    const int oh = h - kh + 1;
    const int ow = w - kw + 1;
    if (oh < 1 || ow < 1) {
        throw DimensionError("window_filter: window " + std::to_string(kh) + "x" +
                             std::to_string(kw) + " larger than image " + std::to_string(h) +
                             "x" + std::to_string(w));
    }
    Tensor out({n, c, oh, ow});
    for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
            const double* xplane = x->value.data() + (static_cast<std::int64_t>(b) * c + ch) * h * w;
            double* oplane = out.data() + (static_cast<std::int64_t>(b) * c + ch) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = 0.0;
                    for (int ky = 0; ky < kh; ++ky) {
                        const double* xrow = xplane + (oy + ky) * w + ox;
                        const double* krow = kernel.data() + static_cast<std::int64_t>(ky) * kw;
                        for (int kx = 0; kx < kw; ++kx) {
                            acc += krow[kx] * xrow[kx];
                        }
                    }
                    oplane[static_cast<std::int64_t>(oy) * ow + ox] = acc;
                }
            }
        }
    }
    return make_op(std::move(out), {x}, [x, kernel, n, c, h, w, kh, kw, oh, ow](Node& node) {
        if (!x->requires_grad) {
            return;
        }
        Tensor& gx = x->grad_buffer();
        for (int b = 0; b < n; ++b) {
            for (int ch = 0; ch < c; ++ch) {
                double* dxplane = gx.data() + (static_cast<std::int64_t>(b) * c + ch) * h * w;
                const double* gplane =
                    node.grad.data() + (static_cast<std::int64_t>(b) * c + ch) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        const double gv = gplane[static_cast<std::int64_t>(oy) * ow + ox];
                        for (int ky = 0; ky < kh; ++ky) {
                            double* dxrow = dxplane + (oy + ky) * w + ox;
                            const double* krow =
                                kernel.data() + static_cast<std::int64_t>(ky) * kw;
                            for (int kx = 0; kx < kw; ++kx) {
                                dxrow[kx] += gv * krow[kx];
                            }
                        }
                    }
                }
            }
        }
    });
}

} // namespace s3net::ag
