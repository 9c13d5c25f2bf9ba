#pragma once

#include "georefine/common.hpp"

#include <filesystem>
#include <vector>

namespace georefine {

/// RGB image with values nominally in [0, 1]; row-major, channel-fastest.
struct Image
{
    int width = 0;
    int height = 0;
    std::vector<double> rgb;

    Image() = default;
    Image(int w, int h, double fill = 0.0) : width(w), height(h), rgb(static_cast<std::size_t>(3) * w * h, fill) {}

    double& at(int x, int y, int c) { return rgb[3 * (static_cast<std::size_t>(y) * width + x) + c]; }
    double at(int x, int y, int c) const { return rgb[3 * (static_cast<std::size_t>(y) * width + x) + c]; }
};

/// 8-bit RGB PNG. Encoder settings are pinned (zlib level 6, no filters, no
/// ancillary chunks) so identical images produce identical files.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

double mse(const Image& a, const Image& b);
/// 10 log10(1 / MSE); +infinity for identical images.
double psnr(const Image& a, const Image& b);
/// Mean SSIM over channels, 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, evaluated over fully covered windows.
double ssim(const Image& a, const Image& b);
double l1(const Image& a, const Image& b);

struct ImageMetrics
{
    double l1 = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
};

ImageMetrics compare_images(const Image& rendered, const Image& target);

} // namespace georefine
