#include <cmath>
#include <limits>

#include "roomtwin/metrics.hpp"

namespace twin {

namespace {

constexpr int kWin = 11;

// 11x11 Gaussian window, sigma 1.5, normalized to sum 1.
const std::array<double, kWin * kWin>& gaussian_window() {
    static const auto window = [] {
        std::array<double, kWin * kWin> w{};
        double sum = 0;
        for (int y = 0; y < kWin; ++y)
            for (int x = 0; x < kWin; ++x) {
                double dx = x - kWin / 2, dy = y - kWin / 2;
                w[y * kWin + x] = std::exp(-(dx * dx + dy * dy) / (2 * 1.5 * 1.5));
                sum += w[y * kWin + x];
            }
        for (double& v : w) v /= sum;
        return w;
    }();
    return window;
}

double ssim_channel(const Image8& a, const Image8& b, int channel) {
    const double c1 = (0.01 * 255) * (0.01 * 255);
    const double c2 = (0.03 * 255) * (0.03 * 255);
    const auto& win = gaussian_window();
    double total = 0;
    long windows = 0;
    for (int y = 0; y + kWin <= a.height; ++y)
        for (int x = 0; x + kWin <= a.width; ++x) {
            double ma = 0, mb = 0;
            for (int wy = 0; wy < kWin; ++wy)
                for (int wx = 0; wx < kWin; ++wx) {
                    double w = win[wy * kWin + wx];
                    ma += w * a.at(x + wx, y + wy, channel);
                    mb += w * b.at(x + wx, y + wy, channel);
                }
            double va = 0, vb = 0, cov = 0;
            for (int wy = 0; wy < kWin; ++wy)
                for (int wx = 0; wx < kWin; ++wx) {
                    double w = win[wy * kWin + wx];
                    double da = a.at(x + wx, y + wy, channel) - ma;
                    double db = b.at(x + wx, y + wy, channel) - mb;
                    va += w * da * da;
                    vb += w * db * db;
                    cov += w * da * db;
                }
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++windows;
        }
    return windows > 0 ? total / windows : 0.0;
}

}  // namespace

ImageQuality image_quality(const Image8& a, const Image8& b) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw DimensionMismatch("images");
    if (a.width < kWin || a.height < kWin)
        throw DimensionMismatch("image smaller than the 11x11 SSIM window");

    double se = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - b.data[i];
        se += d * d;
    }
    double mse = se / a.data.size();
    ImageQuality q;
    q.psnr_db = mse == 0 ? std::numeric_limits<double>::infinity()
                         : 20.0 * std::log10(255.0 / std::sqrt(mse));
    double ssim = 0;
    for (int c = 0; c < a.channels; ++c) ssim += ssim_channel(a, b, c);
    q.ssim = ssim / a.channels;
    return q;
}

}  // namespace twin
