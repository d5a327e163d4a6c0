#include "proxdm/datasets.hpp"

#include <cmath>
#include <numbers>

#include "proxdm/errors.hpp"
#include "proxdm/rng.hpp"

namespace proxdm {

namespace {

Matrix shapes2d() {
    constexpr double pi = std::numbers::pi;
    Matrix pts(1000, 2);
    CounterRng rng(0x5348415045ull);
    Eigen::Index r = 0;
    // Circle of radius 1.6.
    for (int i = 0; i < 400; ++i, ++r) {
        const double a = 2.0 * pi * (static_cast<double>(i) + 0.5 * rng.uniform()) / 400.0;
        pts(r, 0) = 1.6 * std::cos(a);
        pts(r, 1) = 1.6 * std::sin(a);
    }
    // Sine wave across the middle.
    for (int i = 0; i < 350; ++i, ++r) {
        const double x = -1.2 + 2.4 * (static_cast<double>(i) + rng.uniform()) / 350.0;
        pts(r, 0) = x;
        pts(r, 1) = 0.35 * std::sin(2.5 * pi * x / 1.2) - 0.3;
    }
    // Two blobs above the wave.
    for (int i = 0; i < 250; ++i, ++r) {
        const double cx = (i % 2 == 0) ? -0.55 : 0.55;
        pts(r, 0) = cx + 0.08 * rng.normal();
        pts(r, 1) = 0.7 + 0.08 * rng.normal();
    }
    // Circle radius 1.6 maps to 1: the cloud fits in [-1, 1]^2.
    return 0.625 * pts;
}

}  // namespace

const std::vector<std::string>& builtin_dataset_names() {
    static const std::vector<std::string> names{"shapes2d"};
    return names;
}

Matrix builtin_point_cloud(const std::string& name) {
    if (name == "shapes2d") return shapes2d();
    throw ConfigError("unknown built-in dataset '" + name + "' (expected shapes2d)");
}

}  // namespace proxdm
