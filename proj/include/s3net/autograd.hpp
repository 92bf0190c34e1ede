#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "s3net/tensor.hpp"

namespace s3net::ag {

// Reverse-mode automatic differentiation over Tensor. The graph is built
// dynamically: each operation returns a new node holding its value, the
// parent handles, and a closure that scatters the node's gradient back into
// the parents. Nodes whose inputs do not require gradients drop both the
// parents and the closure, so inference builds no tape.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;                 // empty until backward touches this node
    bool requires_grad = false;
    std::string name;            // set for parameters; aids diagnostics
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    // Returns the gradient buffer, allocating zeros on first use.
    Tensor& grad_buffer();
};

Var leaf(Tensor value, bool requires_grad = false, std::string name = "");
Var constant(Tensor value);
Var scalar(double value);        // shape {1} constant

// Runs reverse accumulation from a scalar root (size-1 value).
void backward(const Var& root);

// Drops accumulated gradients on the given leaves.
void zero_grads(const std::vector<Var>& vars);

// Shared constructor for operation nodes.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var divv(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var vabs(const Var& a);
Var vsqrt(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.1);
Var sigmoid(const Var& a);

// ---- reductions ----
Var sum_all(const Var& a);       // -> {1}
Var mean_all(const Var& a);      // -> {1}

// ---- shape ----
Var reshape(const Var& a, std::vector<int> shape);
Var narrow0(const Var& a, int start, int len);           // slice along dim 0
Var narrow_channels(const Var& a, int start, int len);   // NCHW slice on dim 1
Var concat_channels(const std::vector<Var>& parts);      // NCHW concat on dim 1
// Elementwise product with numpy-style broadcasting over equal-rank shapes
// (each dim matches or is 1 on one side).
Var mul_bcast(const Var& a, const Var& b);

// ---- structured / image ops, all on N x C x H x W ----
// weight (Cout, Cin, kh, kw); bias (Cout) or null.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
// weight (Cin, Cout, kh, kw); output is (in-1)*stride + k - 2*pad per axis.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
Var avg_pool2d(const Var& x, int factor);                // non-overlapping
Var global_avg_pool(const Var& x);                       // -> N,C,1,1
Var upsample_nearest(const Var& x, int factor);
// out[n][c][h*r+a][w*r+b] = in[n][c*r*r + a*r + b][h][w]
Var pixel_shuffle(const Var& x, int r);
// Depthwise valid correlation of every channel plane with a fixed 2-D kernel.
Var window_filter(const Var& x, const Tensor& kernel);

} // namespace s3net::ag
