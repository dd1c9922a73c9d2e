#include "dsu/tensor.hpp"

#include <cmath>
#include <sstream>

namespace dsu {

const char* dtype_name(Dtype dt) {
    return dt == Dtype::Float32 ? "float32" : "float64";
}

std::size_t dtype_size(Dtype dt) {
    return dt == Dtype::Float32 ? sizeof(float) : sizeof(double);
}

Dtype dtype_from_name(const std::string& name) {
    if (name == "float32") return Dtype::Float32;
    if (name == "float64") return Dtype::Float64;
    throw ConfigError("unknown dtype '" + name + "'");
}

double division_floor(Dtype dt) {
    return dt == Dtype::Float32 ? 1e-7 : 1e-12;
}

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void validate_shape(const std::vector<int>& shape) {
    if (shape.empty() || shape.size() > 4)
        throw ShapeError("tensor rank must be 1..4, got " + shape_str(shape));
    for (int d : shape)
        if (d <= 0) throw ShapeError("non-positive dimension in " + shape_str(shape));
}

} // namespace

Tensor Tensor::zeros(std::vector<int> shape, Dtype dt) {
    return full(std::move(shape), 0.0, dt);
}

Tensor Tensor::full(std::vector<int> shape, double value, Dtype dt) {
    validate_shape(shape);
    Tensor t;
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    t.shape_ = std::move(shape);
    t.dtype_ = dt;
    if (dt == Dtype::Float32)
        t.data_ = std::vector<float>(n, static_cast<float>(value));
    else
        t.data_ = std::vector<double>(n, value);
    return t;
}

Tensor Tensor::from_f32(std::vector<int> shape, std::vector<float> data) {
    validate_shape(shape);
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = Dtype::Float32;
    t.data_ = std::move(data);
    return t;
}

Tensor Tensor::from_f64(std::vector<int> shape, std::vector<double> data) {
    validate_shape(shape);
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = Dtype::Float64;
    t.data_ = std::move(data);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::initializer_list<double> values, Dtype dt) {
    if (dt == Dtype::Float64) return from_f64(std::move(shape), std::vector<double>(values));
    std::vector<float> v;
    v.reserve(values.size());
    for (double x : values) v.push_back(static_cast<float>(x));
    return from_f32(std::move(shape), std::move(v));
}

double Tensor::at(std::int64_t i) const {
    if (dtype_ == Dtype::Float32) return std::get<std::vector<float>>(data_)[static_cast<std::size_t>(i)];
    return std::get<std::vector<double>>(data_)[static_cast<std::size_t>(i)];
}

void Tensor::set(std::int64_t i, double v) {
    if (dtype_ == Dtype::Float32)
        std::get<std::vector<float>>(data_)[static_cast<std::size_t>(i)] = static_cast<float>(v);
    else
        std::get<std::vector<double>>(data_)[static_cast<std::size_t>(i)] = v;
}

std::span<float> Tensor::f32() {
    if (dtype_ != Dtype::Float32) throw ShapeError("tensor is not float32");
    return std::get<std::vector<float>>(data_);
}

std::span<const float> Tensor::f32() const {
    if (dtype_ != Dtype::Float32) throw ShapeError("tensor is not float32");
    return std::get<std::vector<float>>(data_);
}

std::span<double> Tensor::f64() {
    if (dtype_ != Dtype::Float64) throw ShapeError("tensor is not float64");
    return std::get<std::vector<double>>(data_);
}

std::span<const double> Tensor::f64() const {
    if (dtype_ != Dtype::Float64) throw ShapeError("tensor is not float64");
    return std::get<std::vector<double>>(data_);
}

Tensor Tensor::to(Dtype dt) const {
    if (dt == dtype_) return *this;
    Tensor t = Tensor::zeros(shape_, dt);
    const std::int64_t n = numel();
    for (std::int64_t i = 0; i < n; ++i) t.set(i, at(i));
    return t;
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
    validate_shape(new_shape);
    if (shape_numel(new_shape) != numel())
        throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                         " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(new_shape);
    return t;
}

bool Tensor::all_finite() const {
    if (dtype_ == Dtype::Float32) {
        for (float v : std::get<std::vector<float>>(data_))
            if (!std::isfinite(v)) return false;
    } else {
        for (double v : std::get<std::vector<double>>(data_))
            if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::check_finite(const char* context) const {
    if (!all_finite())
        throw NumericalError(std::string(context) + ": non-finite value in result");
}

bool same_shape(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape();
}

} // namespace dsu
