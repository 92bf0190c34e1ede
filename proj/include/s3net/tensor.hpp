#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s3net/errors.hpp"

namespace s3net {

// Dense row-major tensor of float64 values with dynamic rank.
// Images are C x H x W, batched activations N x C x H x W. Every numeric
// path in the project funnels through this container.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor from(std::vector<int> shape, std::vector<double> values);

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& flat(std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double flat(std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Element access for the two ranks the pipeline actually uses.
    double& at3(int c, int y, int x);
    double at3(int c, int y, int x) const;
    double& at4(int n, int c, int y, int x);
    double at4(int n, int c, int y, int x) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;
    static std::string shape_str(const std::vector<int>& shape);

    bool all_finite() const;
    double min_value() const;
    double max_value() const;
    double sum() const;
    double mean() const;
    double squared_norm() const;

    void fill(double value);
    void add_inplace(const Tensor& other);            // this += other
    void add_scaled_inplace(const Tensor& other, double scale); // this += scale * other
    void scale_inplace(double factor);

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

// Throws ShapeError naming `context` when the two shapes differ.
void check_same_shape(const Tensor& a, const Tensor& b, const std::string& context);

// Stacks C x H x W tensors into one N x C x H x W batch.
Tensor stack_batch(const std::vector<Tensor>& images);

// Inserts a leading dimension of size one.
Tensor unsqueeze0(const Tensor& t);

} // namespace s3net
