#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "roomtwin/geom.hpp"

namespace twin {

// Timestamped world-from-body poses, strictly increasing timestamps.
struct Trajectory {
    std::vector<std::pair<double, Pose>> entries;
    size_t size() const { return entries.size(); }
};

// Single-channel float raster (depth in meters or disparity in pixels).
// 0 is the invalid-sample sentinel.
struct RasterF32 {
    int width = 0, height = 0;
    std::vector<float> data;  // row-major, top-to-bottom

    RasterF32() = default;
    RasterF32(int w, int h, float fill = 0.f)
        : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}
    float& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    float at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
};

// 8-bit image: channels == 1 (mask/gray) or 3 (rgb).
struct Image8 {
    int width = 0, height = 0, channels = 1;
    std::vector<uint8_t> data;

    Image8() = default;
    Image8(int w, int h, int c, uint8_t fill = 0)
        : width(w), height(h), channels(c),
          data(static_cast<size_t>(w) * h * c, fill) {}
    uint8_t& at(int x, int y, int c = 0) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    uint8_t at(int x, int y, int c = 0) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
};

// ASCII PLY: vertex element with x y z, optional nx ny nz, optional
// red green blue (uint8). Coordinates written at 17 significant digits.
void write_ply(const std::string& path, const PointCloud& cloud);
PointCloud read_ply(const std::string& path);

// Grayscale PFM ("Pf"), little-endian (negative scale), bottom-to-top rows.
void write_pfm(const std::string& path, const RasterF32& raster);
RasterF32 read_pfm(const std::string& path);

// Binary NetPBM: P5 for 1-channel, P6 for 3-channel, maxval 255.
void write_pnm(const std::string& path, const Image8& image);
Image8 read_pnm(const std::string& path);

// TUM trajectory lines: "timestamp tx ty tz qx qy qz qw", '#' comments.
// Values written at 9 decimal places; reading normalizes quaternions and
// rejects non-monotonic timestamps.
void write_tum(const std::string& path, const Trajectory& traj);
Trajectory read_tum(const std::string& path);

// Text helpers shared by the format readers.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

// 17-significant-digit shortest-faithful decimal used by all text formats.
std::string format_double(double v);

}  // namespace twin
