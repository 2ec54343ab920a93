#pragma once

#include <jof/field.hpp>

#include <string>
#include <vector>

namespace jof {

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<int> labels; // empty, or one per point

    void validate() const;
};

// Isosurface points of the shape decoder: grid cells straddling tau seed
// Newton-style refinement along the occupancy gradient; every returned point
// satisfies |o(x) - tau| < 0.02. Labels carry the branch argmax.
PointCloud extract_surface_points(const JofParams& params, const LatentCodes& codes, int n,
                                  int grid_res);

// Exact nearest-neighbor squared distances. The accelerated path prunes with
// a uniform grid and returns bit-identical values to the brute-force scan.
std::vector<double> nn_squared(const std::vector<Vec3>& queries, const std::vector<Vec3>& targets,
                               bool accelerated = true);

// CD = (mean_a min_b |a-b| + mean_b min_a |a-b|) / 2. "L1" names the
// mean-of-Euclidean-distances aggregation, not the point metric.
double chamfer_l1(const PointCloud& a, const PointCloud& b, bool accelerated = true);

struct FScore {
    double precision = 0.0, recall = 0.0, f = 0.0; // percentages
};

// tau compares against squared distances when squared_threshold is set,
// plain distances otherwise
FScore f_score(const PointCloud& pred, const PointCloud& gt, double tau, bool squared_threshold,
               bool accelerated = true);

// Branch labels against ground-truth part labels over identical points. Each
// branch maps to its best-IoU part (ties to the lowest part), branches
// claiming one part pool their points, and the mean runs over parts present
// in the ground truth.
double segmentation_iou(const std::vector<int>& pred, const std::vector<int>& gt);

double azimuth_error_degrees(const PoseParams& pred, const PoseParams& gt);

// text form: "x y z" or "x y z label" per line
void save_point_cloud(const std::string& path, const PointCloud& cloud);
PointCloud load_point_cloud(const std::string& path);

struct MetricRow {
    std::string name;
    double value = 0.0;
};

std::string format_metrics_csv(const std::vector<MetricRow>& rows);
std::string format_metrics_table(const std::vector<MetricRow>& rows);

} // namespace jof
