#pragma once

#include <string>
#include <vector>

#include "proxdm/gaussian_mixture.hpp"

namespace proxdm {

/// Names accepted by builtin_point_cloud.
const std::vector<std::string>& builtin_dataset_names();

/// Deterministic 2D point sets, n x 2. "shapes2d" has 1000 points spread over
/// a circle, a sine wave and two small blobs, scaled to fit [-1, 1]^2.
/// Throws ConfigError for an unknown name.
Matrix builtin_point_cloud(const std::string& name);

}  // namespace proxdm
