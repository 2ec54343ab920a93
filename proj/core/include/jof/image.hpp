#pragma once

#include <jof/common.hpp>

#include <string>
#include <vector>

namespace jof {

// Row-major raster, origin at the top-left, values in [0,1] for 8-bit I/O.
struct ImageRGB {
    int width = 0, height = 0;
    std::vector<double> data; // 3 * width * height, rgb interleaved

    static ImageRGB zeros(int w, int h);
    double& at(int x, int y, int c);
    double at(int x, int y, int c) const;
};

struct ImageGray {
    int width = 0, height = 0;
    std::vector<double> data;

    static ImageGray zeros(int w, int h);
    double& at(int x, int y);
    double at(int x, int y) const;
};

// binary PPM (P6), 8-bit, values clamped to [0,1]
void write_ppm(const std::string& path, const ImageRGB& img);
ImageRGB read_ppm(const std::string& path);

// binary PGM (P5), 8-bit
void write_pgm(const std::string& path, const ImageGray& img);
ImageGray read_pgm(const std::string& path);

// PFM, single-channel 32-bit float, little-endian (scale -1), bottom-up rows
void write_pfm(const std::string& path, const ImageGray& img);
ImageGray read_pfm(const std::string& path);

double mean_abs_difference(const ImageRGB& a, const ImageRGB& b);

} // namespace jof
