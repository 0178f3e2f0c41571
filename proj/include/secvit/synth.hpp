#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "secvit/data.hpp"
#include "secvit/random.hpp"

namespace secvit {

// Procedural 32x32 single-channel corpus, 10 classes:
//   0..4  bars at 5 angles (36 degrees apart)
//   5     filled square
//   6     hollow square
//   7     disc
//   8     cross
//   9     checkerboard
// Class of sample i is i % 10, so counts stay balanced to within one. Every
// shape gets seeded position/scale jitter plus additive noise (sigma 0.05),
// clamped back to [0, 1].
inline Dataset synth_shapes(std::size_t n, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("synth_shapes: need at least one sample");
    constexpr std::size_t S = 32;
    Dataset ds;
    ds.count = n;
    ds.channels = 1;
    ds.height = S;
    ds.width = S;
    ds.num_classes = 10;
    ds.pixels.assign(n * S * S, 0.0f);
    ds.labels.resize(n);

    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        int cls = int(i % 10);
        ds.labels[i] = cls;
        float* img = ds.pixels.data() + i * S * S;

        double cx = 15.5 + rng.uniform(-4.0, 4.0);
        double cy = 15.5 + rng.uniform(-4.0, 4.0);
        double scale = rng.uniform(0.8, 1.2);
        double phase = rng.uniform(0.0, 4.0);  // checker offset

        auto lit = [&](double x, double y) -> bool {
            double dx = x - cx, dy = y - cy;
            switch (cls) {
                case 0:
                case 1:
                case 2:
                case 3:
                case 4: {
                    double theta = double(cls) * 36.0 * std::numbers::pi / 180.0;
                    double ux = std::cos(theta), uy = std::sin(theta);
                    double along = dx * ux + dy * uy;
                    double across = -dx * uy + dy * ux;
                    return std::abs(across) <= 1.6 * scale && std::abs(along) <= 13.0 * scale;
                }
                case 5: {
                    double h = 6.5 * scale;
                    return std::abs(dx) <= h && std::abs(dy) <= h;
                }
                case 6: {
                    double h = 6.5 * scale, inner = h - 2.5;
                    bool outer = std::abs(dx) <= h && std::abs(dy) <= h;
                    bool hole = std::abs(dx) <= inner && std::abs(dy) <= inner;
                    return outer && !hole;
                }
                case 7: {
                    double r = 6.5 * scale;
                    return dx * dx + dy * dy <= r * r;
                }
                case 8: {
                    double t = 1.8 * scale, ext = 9.0 * scale;
                    return (std::abs(dx) <= t && std::abs(dy) <= ext) ||
                           (std::abs(dy) <= t && std::abs(dx) <= ext);
                }
                default: {
                    double cell = 4.0 * scale;
                    long qx = long(std::floor((x + phase) / cell));
                    long qy = long(std::floor((y + phase) / cell));
                    return ((qx + qy) & 1) == 0;
                }
            }
        };

        for (std::size_t r = 0; r < S; ++r)
            for (std::size_t c = 0; c < S; ++c) {
                double v = lit(double(c), double(r)) ? 1.0 : 0.0;
                v += 0.05 * rng.normal();
                img[r * S + c] = float(std::clamp(v, 0.0, 1.0));
            }
    }
    ds.validate();
    return ds;
}

}  // namespace secvit
