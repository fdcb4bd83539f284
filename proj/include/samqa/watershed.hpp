#pragma once

#include "samqa/geometry.hpp"

#include <filesystem>
#include <stdexcept>
#include <vector>

namespace samqa {

class WatershedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-pixel logits, row-major.
struct Heatmap {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    Heatmap() = default;
    Heatmap(int w, int h, double fill = 0.0)
        : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

    double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
    double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Binary layout: "SQHM", uint32 width, uint32 height, then width*height float32,
/// all little-endian. load_heatmap also accepts a PNG, read as probability
/// p = (v + 0.5) / 256 and converted to the logit ln(p / (1 - p)).
Heatmap load_heatmap(const std::filesystem::path& file);
void save_heatmap(const std::filesystem::path& file, const Heatmap& heatmap);

enum class Clustering { None, KMeans, Gmm };

Clustering clustering_from_string(std::string_view name);
std::string_view to_string(Clustering c);

struct PeakParams {
    int expected_count = 2;
    double exclusion_radius = 8.0;
    double overlap_removal_distance = -1.0;  // negative means exclusion_radius
    double binarize_threshold = 0.0;
    int morphology_kernel = 3;
    double small_region_fraction = 0.2;
    Clustering clustering = Clustering::None;
    int em_max_iters = 100;
    double em_tol = 1e-4;

    void validate() const;
    [[nodiscard]] double overlap_distance() const {
        return overlap_removal_distance < 0 ? exclusion_radius : overlap_removal_distance;
    }
};

struct Seed {
    int x = 0;
    int y = 0;
    double value = 0.0;

    friend bool operator==(const Seed&, const Seed&) = default;
};

/// -1 marks background; other values index seeds or clusters.
struct LabelMap {
    int width = 0;
    int height = 0;
    std::vector<int> labels;

    [[nodiscard]] int at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    [[nodiscard]] BinaryMask mask(int label) const;
    [[nodiscard]] BinaryMask foreground() const;
    [[nodiscard]] long long area(int label) const;
};

/// Greedy selection among non-strict 8-neighbour local maxima at or above the
/// binarize threshold, highest first, ties in scan order. Each pick suppresses
/// candidates within exclusion_radius; afterwards a peak closer than the overlap
/// distance to a stronger one is dropped.
std::vector<Seed> extract_peaks(const Heatmap& h, const PeakParams& params);

/// Threshold, close, open, then drop components smaller than
/// small_region_fraction of the largest one.
BinaryMask clean_foreground(const Heatmap& h, const PeakParams& params);

/// Adds the argmax of each seedless foreground component, largest first, until
/// there are expected_count seeds.
std::vector<Seed> recover_missed_seeds(const BinaryMask& foreground, std::vector<Seed> seeds,
                                       const Heatmap& h, const PeakParams& params);

/// Priority flood on -h from the seeds, restricted to the 8-connected
/// foreground. Seed i gets label i. Foreground pixels no seed can reach go to
/// the nearest seed in Euclidean distance.
LabelMap watershed(const Heatmap& h, const std::vector<Seed>& seeds, const BinaryMask& foreground);

struct ClusterResult {
    LabelMap labels;
    std::vector<double> trace;  // k-means inertia or GMM mean log-likelihood, per iteration
    int iterations = 0;
    bool converged = false;
};

/// Lloyd iterations on the foreground pixel coordinates, starting from the
/// label centroids and filling up with farthest points.
ClusterResult refine_kmeans(const LabelMap& labels, int n, int max_iters = 100);

/// EM with full covariances, initialized from refine_kmeans. Stops when the
/// mean log-likelihood gains less than tol.
ClusterResult refine_gmm(const LabelMap& labels, int n, int max_iters = 100, double tol = 1e-4);

struct WatershedResult {
    BinaryMask foreground;
    std::vector<Seed> seeds;
    LabelMap labels;
    std::vector<InstanceMask> instances;
    std::vector<double> trace;
};

WatershedResult heatmap_to_instances(const Heatmap& h, const PeakParams& params, int frame_index = 0);

}  // namespace samqa
