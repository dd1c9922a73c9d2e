#pragma once

#include <string>

#include "dsu/tensor.hpp"

namespace dsu {

/// Writes `path` as a flat little-endian binary of the tensor's dtype and
/// `path + ".json"` as a sidecar {shape, dtype, byte_order}.
void save_tensor(const Tensor& t, const std::string& path);

/// Reads a tensor written by save_tensor; validates the sidecar against
/// the binary length.
Tensor load_tensor(const std::string& path);

} // namespace dsu
