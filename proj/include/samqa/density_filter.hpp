#pragma once

#include "samqa/geometry.hpp"
#include "samqa/morphology.hpp"

#include <span>
#include <stdexcept>
#include <vector>

namespace samqa {

class DensityError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct DensityParams {
    double percentile = 20.0;
    int dilation_kernel = 3;
    int dilation_iterations = 3;
    int min_points = 3;
    double bandwidth_floor = 1.0;

    void validate() const;
};

struct Bandwidth {
    double x = 1.0;
    double y = 1.0;
};

/// Scott's rule per axis: n^(-1/6) times the sample standard deviation. Falls back
/// to params.bandwidth_floor on both axes for tiny or degenerate (zero-spread) inputs.
Bandwidth scott_bandwidth(std::span<const Point> points, const DensityParams& params);

/// Gaussian kernel density evaluated at each input point, using the point set
/// itself as the sample. The kernel sum runs as a separable convolution over the
/// points' bounding box, truncated at nine bandwidths.
std::vector<double> kde_density(std::span<const Point> points, const DensityParams& params);

/// Linear-interpolation percentile (the usual "linear" method), p in [0, 100].
double percentile_linear(std::vector<double> values, double p);

/// Keeps pixels whose density exceeds the configured percentile, dilates the
/// survivors and clips the result back to the input support.
BinaryMask remove_outliers(const BinaryMask& mask, const DensityParams& params = {});

}  // namespace samqa
