#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dsu/errors.hpp"

namespace dsu {

enum class Dtype { Float32, Float64 };

const char* dtype_name(Dtype dt);
std::size_t dtype_size(Dtype dt);
Dtype dtype_from_name(const std::string& name);

/// Safeguard floor for division denominators. Values with smaller
/// magnitude raise NumericalError instead of being clamped.
double division_floor(Dtype dt);

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

/// Dense row-major array of up to 4 dimensions. Treated as an immutable
/// value by all public operations: ops return fresh tensors. The dtype is
/// fixed at construction and never converted implicitly; use to() for an
/// explicit cast.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, Dtype dt = Dtype::Float32);
    static Tensor full(std::vector<int> shape, double value, Dtype dt = Dtype::Float32);
    static Tensor from_f32(std::vector<int> shape, std::vector<float> data);
    static Tensor from_f64(std::vector<int> shape, std::vector<double> data);
    /// Convenience for literals in tests and small constants: values are
    /// stored at the requested dtype.
    static Tensor from(std::vector<int> shape, std::initializer_list<double> values,
                       Dtype dt = Dtype::Float64);

    bool defined() const { return !shape_.empty(); }
    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::int64_t numel() const { return shape_numel(shape_); }
    Dtype dtype() const { return dtype_; }

    /// Generic element access by flat index (value widened to double).
    double at(std::int64_t i) const;
    void set(std::int64_t i, double v);

    std::span<float> f32();
    std::span<const float> f32() const;
    std::span<double> f64();
    std::span<const double> f64() const;

    /// Explicit dtype conversion; returns *this copied when dt matches.
    Tensor to(Dtype dt) const;
    /// Same buffer, new shape; element count must match.
    Tensor reshaped(std::vector<int> new_shape) const;

    bool all_finite() const;
    /// Throws NumericalError when a non-finite value is present.
    void check_finite(const char* context) const;

private:
    std::vector<int> shape_;
    Dtype dtype_ = Dtype::Float32;
    std::variant<std::vector<float>, std::vector<double>> data_;
};

bool same_shape(const Tensor& a, const Tensor& b);

} // namespace dsu
