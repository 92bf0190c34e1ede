#include "s3net/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace s3net {

namespace {

std::int64_t element_count(const std::vector<int>& shape) {
    if (shape.empty()) {
        return 0;
    }
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) {
            throw DimensionError("tensor dimension must be positive, got " +
                                 Tensor::shape_str(shape));
        }
        n *= d;
    }
    return n;
}

} // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(element_count(shape_)), 0.0);
}

Tensor Tensor::zeros(std::vector<int> shape) {
    return Tensor(std::move(shape));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
    Tensor t;
    const std::int64_t n = element_count(shape);
    if (n != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not fill shape " + shape_str(shape));
    }
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
}

double& Tensor::at3(int c, int y, int x) {
    return data_[static_cast<std::size_t>((static_cast<std::int64_t>(c) * shape_[1] + y) * shape_[2] + x)];
}

double Tensor::at3(int c, int y, int x) const {
    return data_[static_cast<std::size_t>((static_cast<std::int64_t>(c) * shape_[1] + y) * shape_[2] + x)];
}

double& Tensor::at4(int n, int c, int y, int x) {
    return data_[static_cast<std::size_t>(
        ((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
}

double Tensor::at4(int n, int c, int y, int x) const {
    return data_[static_cast<std::size_t>(
        ((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
}

std::string Tensor::shape_str() const {
    return shape_str(shape_);
}

std::string Tensor::shape_str(const std::vector<int>& shape) {
    std::ostringstream oss;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) {
            oss << "x";
        }
        oss << shape[i];
    }
    return shape.empty() ? std::string("scalar/empty") : oss.str();
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

double Tensor::min_value() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : data_) {
        m = std::min(m, v);
    }
    return m;
}

double Tensor::max_value() const {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : data_) {
        m = std::max(m, v);
    }
    return m;
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) {
        s += v;
    }
    return s;
}

double Tensor::mean() const {
    return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size());
}

double Tensor::squared_norm() const {
    double s = 0.0;
    for (double v : data_) {
        s += v * v;
    }
    return s;
}

void Tensor::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
}

void Tensor::add_inplace(const Tensor& other) {
    check_same_shape(*this, other, "add_inplace");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += other.data_[i];
    }
}

void Tensor::add_scaled_inplace(const Tensor& other, double scale) {
    check_same_shape(*this, other, "add_scaled_inplace");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += scale * other.data_[i];
    }
}

void Tensor::scale_inplace(double factor) {
    for (double& v : data_) {
        v *= factor;
    }
}

void check_same_shape(const Tensor& a, const Tensor& b, const std::string& context) {
    if (!a.same_shape(b)) {
        throw ShapeError(context + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

Tensor stack_batch(const std::vector<Tensor>& images) {
    if (images.empty()) {
        throw ShapeError("stack_batch: empty batch");
    }
    const Tensor& first = images.front();
    if (first.rank() != 3) {
        throw ShapeError("stack_batch: expected C x H x W inputs, got " + first.shape_str());
    }
    for (const Tensor& img : images) {
        check_same_shape(first, img, "stack_batch");
    }
    Tensor out({static_cast<int>(images.size()), first.dim(0), first.dim(1), first.dim(2)});
    const std::int64_t per = first.size();
    for (std::size_t n = 0; n < images.size(); ++n) {
        std::copy(images[n].data(), images[n].data() + per,
                  out.data() + static_cast<std::int64_t>(n) * per);
    }
    return out;
}

Tensor unsqueeze0(const Tensor& t) {
    std::vector<int> shape;
    shape.reserve(t.shape().size() + 1);
    shape.push_back(1);
    shape.insert(shape.end(), t.shape().begin(), t.shape().end());
    std::vector<double> values(t.data(), t.data() + t.size());
    return Tensor::from(std::move(shape), std::move(values));
}

} // namespace s3net
