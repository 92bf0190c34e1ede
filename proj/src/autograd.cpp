#include "s3net/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace s3net::ag {

Tensor& Node::grad_buffer() {
    if (grad.empty()) {
        grad = Tensor::zeros(value.shape());
    }
    return grad;
}

Var leaf(Tensor value, bool requires_grad, std::string name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->name = std::move(name);
    return n;
}

Var constant(Tensor value) {
    return leaf(std::move(value), false);
}

Var scalar(double value) {
    return constant(Tensor::full({1}, value));
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const Var& p : parents) {
        n->requires_grad = n->requires_grad || p->requires_grad;
    }
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

void backward(const Var& root) {
    if (!root) {
        throw ShapeError("backward: null root");
    }
    if (root->value.size() != 1) {
        throw ShapeError("backward: root must be scalar, got " + root->value.shape_str());
    }

    // Post-order DFS so reversed `order` is a valid reverse-topological sweep.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Node* p = f.node->parents[f.next_parent++].get();
            if (visited.insert(p).second) {
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    root->grad = Tensor::full({1}, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) {
            n->backward_fn(*n);
        }
    }
}

void zero_grads(const std::vector<Var>& vars) {
    for (const Var& v : vars) {
        v->grad = Tensor();
    }
}

namespace {

void accum(Node& target, const Tensor& g) {
    if (!target.requires_grad) {
        return;
    }
    target.grad_buffer().add_inplace(g);
}

using MapFn = double (*)(double);
using MapGradFn = double (*)(double value_in, double value_out);

Var unary_map(const Var& a, MapFn fn, MapGradFn grad_fn) {
    Tensor out(a->value.shape());
    const double* src = a->value.data();
    double* dst = out.data();
    const std::int64_t n = a->value.size();
    for (std::int64_t i = 0; i < n; ++i) {
        dst[i] = fn(src[i]);
    }
    return make_op(std::move(out), {a}, [a, grad_fn](Node& node) {
        if (!a->requires_grad) {
            return;
        }
        Tensor& ga = a->grad_buffer();
        const double* g = node.grad.data();
        const double* in = a->value.data();
        const double* outv = node.value.data();
        const std::int64_t m = node.value.size();
        for (std::int64_t i = 0; i < m; ++i) {
            ga.flat(i) += g[i] * grad_fn(in[i], outv[i]);
        }
    });
}

} // namespace

Var add(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "add");
    Tensor out = a->value;
    out.add_inplace(b->value);
    return make_op(std::move(out), {a, b}, [a, b](Node& node) {
        accum(*a, node.grad);
        accum(*b, node.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "sub");
    Tensor out = a->value;
    out.add_scaled_inplace(b->value, -1.0);
    return make_op(std::move(out), {a, b}, [a, b](Node& node) {
        accum(*a, node.grad);
        if (b->requires_grad) {
            b->grad_buffer().add_scaled_inplace(node.grad, -1.0);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "mul");
    Tensor out(a->value.shape());
    const std::int64_t n = out.size();
    for (std::int64_t i = 0; i < n; ++i) {
        out.flat(i) = a->value.flat(i) * b->value.flat(i);
    }
    return make_op(std::move(out), {a, b}, [a, b](Node& node) {
        const std::int64_t m = node.value.size();
        if (a->requires_grad) {
            Tensor& ga = a->grad_buffer();
            for (std::int64_t i = 0; i < m; ++i) {
                ga.flat(i) += node.grad.flat(i) * b->value.flat(i);
            }
        }
        if (b->requires_grad) {
            Tensor& gb = b->grad_buffer();
            for (std::int64_t i = 0; i < m; ++i) {
                gb.flat(i) += node.grad.flat(i) * a->value.flat(i);
            }
        }
    });
}

Var divv(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "div");
    Tensor out(a->value.shape());
    const std::int64_t n = out.size();
    for (std::int64_t i = 0; i < n; ++i) {
        out.flat(i) = a->value.flat(i) / b->value.flat(i);
    }
    return make_op(std::move(out), {a, b}, [a, b](Node& node) {
        const std::int64_t m = node.value.size();
        if (a->requires_grad) {
            Tensor& ga = a->grad_buffer();
            for (std::int64_t i = 0; i < m; ++i) {
                ga.flat(i) += node.grad.flat(i) / b->value.flat(i);
            }
        }
        if (b->requires_grad) {
            Tensor& gb = b->grad_buffer();
            for (std::int64_t i = 0; i < m; ++i) {
                const double bv = b->value.flat(i);
                gb.flat(i) -= node.grad.flat(i) * a->value.flat(i) / (bv * bv);
            }
        }
    });
}

Var neg(const Var& a) {
    return mul_scalar(a, -1.0);
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.size(); ++i) {
        out.flat(i) += s;
    }
    return make_op(std::move(out), {a}, [a](Node& node) { accum(*a, node.grad); });
}

Var mul_scalar(const Var& a, double s) {
    Tensor out = a->value;
    out.scale_inplace(s);
    return make_op(std::move(out), {a}, [a, s](Node& node) {
        if (a->requires_grad) {
            a->grad_buffer().add_scaled_inplace(node.grad, s);
        }
    });
}

Var vabs(const Var& a) {
    return unary_map(
        a, [](double v) { return std::fabs(v); },
        [](double in, double) { return in > 0.0 ? 1.0 : (in < 0.0 ? -1.0 : 0.0); });
}

Var vsqrt(const Var& a) {
    return unary_map(
        a, [](double v) { return std::sqrt(v); },
        [](double, double out) { return 0.5 / out; });
}

Var relu(const Var& a) {
    return unary_map(
        a, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
    Tensor out(a->value.shape());
    const std::int64_t n = out.size();
    for (std::int64_t i = 0; i < n; ++i) {
        const double v = a->value.flat(i);
        out.flat(i) = v > 0.0 ? v : slope * v;
    }
    return make_op(std::move(out), {a}, [a, slope](Node& node) {
        if (!a->requires_grad) {
            return;
        }
        Tensor& ga = a->grad_buffer();
        for (std::int64_t i = 0; i < node.value.size(); ++i) {
            ga.flat(i) += node.grad.flat(i) * (a->value.flat(i) > 0.0 ? 1.0 : slope);
        }
    });
}

Var sigmoid(const Var& a) {
    return unary_map(
        a, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double out) { return out * (1.0 - out); });
}

Var sum_all(const Var& a) {
    Tensor out = Tensor::full({1}, a->value.sum());
    return make_op(std::move(out), {a}, [a](Node& node) {
        if (!a->requires_grad) {
            return;
        }
        Tensor& ga = a->grad_buffer();
        const double g = node.grad.flat(0);
        for (std::int64_t i = 0; i < ga.size(); ++i) {
            ga.flat(i) += g;
        }
    });
}

Var mean_all(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a->value.size());
    Tensor out = Tensor::full({1}, a->value.sum() * inv);
    return make_op(std::move(out), {a}, [a, inv](Node& node) {
        if (!a->requires_grad) {
            return;
        }
        Tensor& ga = a->grad_buffer();
        const double g = node.grad.flat(0) * inv;
        for (std::int64_t i = 0; i < ga.size(); ++i) {
            ga.flat(i) += g;
        }
    });
}

Var reshape(const Var& a, std::vector<int> shape) {
    std::vector<double> values(a->value.data(), a->value.data() + a->value.size());
    Tensor out = Tensor::from(std::move(shape), std::move(values));
    if (out.size() != a->value.size()) {
        throw ShapeError("reshape: element count mismatch " + a->value.shape_str() + " -> " +
                         out.shape_str());
    }
    return make_op(std::move(out), {a}, [a](Node& node) {
        if (!a->requires_grad) {
            return;
        }
        Tensor& ga = a->grad_buffer();
        for (std::int64_t i = 0; i < ga.size(); ++i) {
            ga.flat(i) += node.grad.flat(i);
        }
    });
}

Var narrow0(const Var& a, int start, int len) {
    const Tensor& v = a->value;
    if (v.rank() < 1 || start < 0 || len <= 0 || start + len > v.dim(0)) {
        throw ShapeError("narrow0: slice [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of range for " + v.shape_str());
    }
    std::vector<int> shape = v.shape();
    shape[0] = len;
    const std::int64_t stride0 = v.size() / v.dim(0);
    std::vector<double> values(v.data() + start * stride0, v.data() + (start + len) * stride0);
    Tensor out = Tensor::from(std::move(shape), std::move(values));
    return make_op(std::move(out), {a}, [a, start, stride0](Node& node) {
        if (!a->requires_grad) {
            return;
        }
        Tensor& ga = a->grad_buffer();
        const std::int64_t offset = start * stride0;
        for (std::int64_t i = 0; i < node.grad.size(); ++i) {
            ga.flat(offset + i) += node.grad.flat(i);
        }
    });
}

Var narrow_channels(const Var& a, int start, int len) {
    const Tensor& v = a->value;
    if (v.rank() != 4) {
        throw ShapeError("narrow_channels: expected N x C x H x W, got " + v.shape_str());
    }
    if (start < 0 || len <= 0 || start + len > v.dim(1)) {
        throw ShapeError("narrow_channels: slice [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of range for " + v.shape_str());
    }
    const int n = v.dim(0);
    const int c = v.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(v.dim(2)) * v.dim(3);
    Tensor out({n, len, v.dim(2), v.dim(3)});
    for (int b = 0; b < n; ++b) {
        std::copy(v.data() + (static_cast<std::int64_t>(b) * c + start) * plane,
                  v.data() + (static_cast<std::int64_t>(b) * c + start + len) * plane,
                  out.data() + static_cast<std::int64_t>(b) * len * plane);
    }
    return make_op(std::move(out), {a}, [a, start, len, n, c, plane](Node& node) {
        if (!a->requires_grad) {
            return;
        }
        Tensor& ga = a->grad_buffer();
        for (int b = 0; b < n; ++b) {
            const double* src = node.grad.data() + static_cast<std::int64_t>(b) * len * plane;
            double* dst = ga.data() + (static_cast<std::int64_t>(b) * c + start) * plane;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(len) * plane; ++i) {
                dst[i] += src[i];
            }
        }
    });
}

Var concat_channels(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_channels: no inputs");
    }
    const Tensor& first = parts.front()->value;
    if (first.rank() != 4) {
        throw ShapeError("concat_channels: expected N x C x H x W, got " + first.shape_str());
    }
    int channels = 0;
    for (const Var& p : parts) {
        const Tensor& t = p->value;
        if (t.rank() != 4 || t.dim(0) != first.dim(0) || t.dim(2) != first.dim(2) ||
            t.dim(3) != first.dim(3)) {
            throw ShapeError("concat_channels: incompatible input " + t.shape_str() + " vs " +
                             first.shape_str());
        }
        channels += t.dim(1);
    }
    const int n = first.dim(0);
    const std::int64_t plane = static_cast<std::int64_t>(first.dim(2)) * first.dim(3);
    Tensor out({n, channels, first.dim(2), first.dim(3)});
    std::int64_t c_off = 0;
    for (const Var& p : parts) {
        const Tensor& t = p->value;
        const std::int64_t part_c = t.dim(1);
        for (int b = 0; b < n; ++b) {
            std::copy(t.data() + b * part_c * plane, t.data() + (b + 1) * part_c * plane,
                      out.data() + (b * channels + c_off) * plane);
        }
        c_off += part_c;
    }
    std::vector<Var> parents = parts;
    return make_op(std::move(out), std::move(parents), [parts, n, channels, plane](Node& node) {
        std::int64_t c_off = 0;
        for (const Var& p : parts) {
            const std::int64_t part_c = p->value.dim(1);
            if (p->requires_grad) {
                Tensor& gp = p->grad_buffer();
                for (int b = 0; b < n; ++b) {
                    const double* src = node.grad.data() + (b * channels + c_off) * plane;
                    double* dst = gp.data() + b * part_c * plane;
                    for (std::int64_t i = 0; i < part_c * plane; ++i) {
                        dst[i] += src[i];
                    }
                }
            }
            c_off += part_c;
        }
    });
}

namespace {

struct BcastPlan {
    std::vector<int> out_shape;
    std::vector<std::int64_t> a_strides;
    std::vector<std::int64_t> b_strides;
    std::vector<std::int64_t> out_strides;
    std::int64_t out_size = 1;
};

BcastPlan plan_broadcast(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank()) {
        throw ShapeError("mul_bcast: rank mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    BcastPlan plan;
    const int r = a.rank();
    plan.out_shape.resize(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        const int da = a.dim(i);
        const int db = b.dim(i);
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("mul_bcast: incompatible shapes " + a.shape_str() + " vs " +
                             b.shape_str());
        }
        plan.out_shape[static_cast<std::size_t>(i)] = std::max(da, db);
        plan.out_size *= std::max(da, db);
    }
    auto strides_of = [r](const Tensor& t) {
        std::vector<std::int64_t> s(static_cast<std::size_t>(r));
        std::int64_t acc = 1;
        for (int i = r - 1; i >= 0; --i) {
            s[static_cast<std::size_t>(i)] = acc;
            acc *= t.dim(i);
        }
        return s;
    };
    plan.a_strides = strides_of(a);
    plan.b_strides = strides_of(b);
    // Broadcast dims contribute stride zero.
    for (int i = 0; i < r; ++i) {
        if (a.dim(i) == 1 && plan.out_shape[static_cast<std::size_t>(i)] != 1) {
            plan.a_strides[static_cast<std::size_t>(i)] = 0;
        }
        if (b.dim(i) == 1 && plan.out_shape[static_cast<std::size_t>(i)] != 1) {
            plan.b_strides[static_cast<std::size_t>(i)] = 0;
        }
    }
    plan.out_strides.resize(static_cast<std::size_t>(r));
    std::int64_t acc = 1;
    for (int i = r - 1; i >= 0; --i) {
        plan.out_strides[static_cast<std::size_t>(i)] = acc;
        acc *= plan.out_shape[static_cast<std::size_t>(i)];
    }
    return plan;
}

template <typename Fn>
void for_each_bcast(const BcastPlan& plan, Fn&& fn) {
    const int r = static_cast<int>(plan.out_shape.size());
    for (std::int64_t flat = 0; flat < plan.out_size; ++flat) {
        std::int64_t rem = flat;
        std::int64_t ia = 0;
        std::int64_t ib = 0;
        for (int d = 0; d < r; ++d) {
            const std::int64_t coord = rem / plan.out_strides[static_cast<std::size_t>(d)];
            rem -= coord * plan.out_strides[static_cast<std::size_t>(d)];
            ia += coord * plan.a_strides[static_cast<std::size_t>(d)];
            ib += coord * plan.b_strides[static_cast<std::size_t>(d)];
        }
        fn(flat, ia, ib);
    }
}

} // namespace

Var mul_bcast(const Var& a, const Var& b) {
    if (a->value.same_shape(b->value)) {
        return mul(a, b);
    }
    BcastPlan plan = plan_broadcast(a->value, b->value);
    Tensor out(plan.out_shape);
    for_each_bcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
        out.flat(o) = a->value.flat(ia) * b->value.flat(ib);
    });
    return make_op(std::move(out), {a, b}, [a, b, plan](Node& node) {
        if (a->requires_grad) {
            Tensor& ga = a->grad_buffer();
            for_each_bcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                ga.flat(ia) += node.grad.flat(o) * b->value.flat(ib);
            });
        }
        if (b->requires_grad) {
            Tensor& gb = b->grad_buffer();
            for_each_bcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                gb.flat(ib) += node.grad.flat(o) * a->value.flat(ia);
            });
        }
    });
}

} // namespace s3net::ag
