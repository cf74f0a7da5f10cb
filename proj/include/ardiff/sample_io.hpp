#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ardiff/checkpoint.hpp"
#include "ardiff/errors.hpp"
#include "ardiff/mat.hpp"

namespace ardiff {

// Sample dump (.ardx): little-endian.
//   magic "ARDX" | u32 version | u32 grid_h | u32 grid_w | u32 channels |
//   u32 count | count * (grid_h*grid_w*channels) f32, raster token order.
inline void save_samples(const std::string& path, int grid_h, int grid_w, int channels,
                         const std::vector<Mat>& grids) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open for write: " + path);
    f.write("ARDX", 4);
    detail::write_pod(f, static_cast<uint32_t>(1));
    detail::write_pod(f, static_cast<uint32_t>(grid_h));
    detail::write_pod(f, static_cast<uint32_t>(grid_w));
    detail::write_pod(f, static_cast<uint32_t>(channels));
    detail::write_pod(f, static_cast<uint32_t>(grids.size()));
    for (const Mat& g : grids) {
        require_shape(g, grid_h * grid_w, channels, "sample grid");
        for (double x : g.v) detail::write_pod(f, static_cast<float>(x));
    }
    if (!f) throw Error("write failed: " + path);
}

inline std::vector<Mat> load_samples(const std::string& path, int* grid_h = nullptr,
                                     int* grid_w = nullptr, int* channels = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open: " + path);
    char magic[4];
    detail::read_bytes(f, magic, 4);
    if (std::memcmp(magic, "ARDX", 4) != 0) throw Error("bad magic in " + path);
    if (detail::read_pod<uint32_t>(f) != 1) throw Error("unsupported sample dump version");
    const int H = static_cast<int>(detail::read_pod<uint32_t>(f));
    const int W = static_cast<int>(detail::read_pod<uint32_t>(f));
    const int C = static_cast<int>(detail::read_pod<uint32_t>(f));
    const auto count = detail::read_pod<uint32_t>(f);
    if (grid_h) *grid_h = H;
    if (grid_w) *grid_w = W;
    if (channels) *channels = C;
    std::vector<Mat> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Mat g(H * W, C);
        for (double& x : g.v) x = detail::read_pod<float>(f);
        out.push_back(std::move(g));
    }
    return out;
}

// Channel 0 rendered as 8-bit grayscale, min-max normalized per image.
inline void write_pgm(const std::string& path, const Mat& grid, int grid_h, int grid_w) {
    require_shape(grid, grid_h * grid_w, grid.cols, "pgm grid");
    double lo = grid(0, 0), hi = grid(0, 0);
    for (int r = 0; r < grid.rows; ++r) {
        lo = std::min(lo, grid(r, 0));
        hi = std::max(hi, grid(r, 0));
    }
    const double span = hi > lo ? hi - lo : 1.0;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open for write: " + path);
    f << "P5\n" << grid_w << " " << grid_h << "\n255\n";
    for (int r = 0; r < grid.rows; ++r) {
        const double v = (grid(r, 0) - lo) / span;
        const auto byte = static_cast<unsigned char>(std::clamp(v * 255.0, 0.0, 255.0));
        f.write(reinterpret_cast<const char*>(&byte), 1);
    }
    if (!f) throw Error("write failed: " + path);
}

}  // namespace ardiff
