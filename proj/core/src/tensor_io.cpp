#include "dsu/tensor_io.hpp"

#include <bit>
#include <fstream>

#include "json.hpp"

namespace dsu {

static_assert(std::endian::native == std::endian::little,
              "tensor binaries are written little-endian; this build targets LE hosts");

void save_tensor(const Tensor& t, const std::string& path) {
    std::ofstream bin(path, std::ios::binary | std::ios::trunc);
    if (!bin) throw IoError("cannot open '" + path + "' for writing");
    if (t.dtype() == Dtype::Float32) {
        const auto s = t.f32();
        bin.write(reinterpret_cast<const char*>(s.data()),
                  static_cast<std::streamsize>(s.size() * sizeof(float)));
    } else {
        const auto s = t.f64();
        bin.write(reinterpret_cast<const char*>(s.data()),
                  static_cast<std::streamsize>(s.size() * sizeof(double)));
    }
    if (!bin) throw IoError("short write to '" + path + "'");

    nlohmann::json sidecar{
        {"shape", t.shape()}, {"dtype", dtype_name(t.dtype())}, {"byte_order", "little"}};
    std::ofstream js(path + ".json", std::ios::trunc);
    if (!js) throw IoError("cannot open '" + path + ".json' for writing");
    js << sidecar.dump(2) << '\n';
}

Tensor load_tensor(const std::string& path) {
    std::ifstream js(path + ".json");
    if (!js) throw IoError("missing sidecar '" + path + ".json'");
    nlohmann::json sidecar;
    try {
        js >> sidecar;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed sidecar '" + path + ".json': " + e.what());
    }
    for (const char* key : {"shape", "dtype", "byte_order"})
        if (!sidecar.contains(key))
            throw IoError("sidecar '" + path + ".json' missing key '" + std::string(key) + "'");
    if (sidecar["byte_order"] != "little")
        throw IoError("unsupported byte order '" + sidecar["byte_order"].get<std::string>() + "'");

    const auto shape = sidecar["shape"].get<std::vector<int>>();
    const Dtype dt = dtype_from_name(sidecar["dtype"].get<std::string>());
    const std::int64_t n = shape_numel(shape);

    std::ifstream bin(path, std::ios::binary | std::ios::ate);
    if (!bin) throw IoError("cannot open '" + path + "'");
    const auto bytes = static_cast<std::int64_t>(bin.tellg());
    if (bytes != n * static_cast<std::int64_t>(dtype_size(dt)))
        throw IoError("binary '" + path + "' has " + std::to_string(bytes) +
                      " bytes, sidecar expects " +
                      std::to_string(n * static_cast<std::int64_t>(dtype_size(dt))));
    bin.seekg(0);
    if (dt == Dtype::Float32) {
        std::vector<float> data(static_cast<std::size_t>(n));
        bin.read(reinterpret_cast<char*>(data.data()), bytes);
        if (!bin) throw IoError("short read from '" + path + "'");
        return Tensor::from_f32(shape, std::move(data));
    }
    std::vector<double> data(static_cast<std::size_t>(n));
    bin.read(reinterpret_cast<char*>(data.data()), bytes);
    if (!bin) throw IoError("short read from '" + path + "'");
    return Tensor::from_f64(shape, std::move(data));
}

} // namespace dsu
