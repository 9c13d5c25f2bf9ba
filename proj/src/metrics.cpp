#include "georefine/image.hpp"

#include <array>
#include <cmath>

namespace georefine {

namespace {

void check_same_size(const Image& a, const Image& b)
{
    if (a.width != b.width || a.height != b.height || a.rgb.size() != b.rgb.size())
        throw Error("image dimensions differ (" + std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                    std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
    if (a.rgb.empty())
        throw Error("empty image");
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::array<double, kWindow> gaussian_window()
{
    std::array<double, kWindow> g{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        double x = i - kWindow / 2;
        g[i] = std::exp(-x * x / (2.0 * kSigma * kSigma));
        sum += g[i];
    }
    for (double& v : g)
        v /= sum;
    return g;
}

} // namespace

double mse(const Image& a, const Image& b)
{
    check_same_size(a, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        double d = a.rgb[i] - b.rgb[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.rgb.size());
}

double psnr(const Image& a, const Image& b)
{
    double m = mse(a, b);
    if (m == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

double l1(const Image& a, const Image& b)
{
    check_same_size(a, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i)
        acc += std::abs(a.rgb[i] - b.rgb[i]);
    return acc / static_cast<double>(a.rgb.size());
}

double ssim(const Image& a, const Image& b)
{
    check_same_size(a, b);
    if (a.width < kWindow || a.height < kWindow)
        throw Error("SSIM needs images of at least 11x11 pixels");
    const auto g = gaussian_window();
    const double c1 = 0.01 * 0.01;
    const double c2 = 0.03 * 0.03;
    const int ow = a.width - kWindow + 1;
    const int oh = a.height - kWindow + 1;

    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        double channel = 0.0;
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int v = 0; v < kWindow; ++v)
                    for (int u = 0; u < kWindow; ++u) {
                        double w = g[u] * g[v];
                        double px = a.at(x + u, y + v, c);
                        double py = b.at(x + u, y + v, c);
                        mx += w * px;
                        my += w * py;
                        sxx += w * px * px;
                        syy += w * py * py;
                        sxy += w * px * py;
                    }
                double vx = sxx - mx * mx;
                double vy = syy - my * my;
                double cxy = sxy - mx * my;
                channel += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        total += channel / (static_cast<double>(ow) * oh);
    }
    return total / 3.0;
}

ImageMetrics compare_images(const Image& rendered, const Image& target)
{
    return {l1(rendered, target), psnr(rendered, target), ssim(rendered, target)};
}

} // namespace georefine
