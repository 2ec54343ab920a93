#pragma once

#include <jof/camera.hpp>
#include <jof/image.hpp>

#include <functional>
#include <optional>
#include <vector>

namespace jof {

// Surface point selected on one camera ray. The search itself is not
// differentiable: downstream gradients treat x as a constant.
struct SurfacePoint {
    Vec3 x = {0.0, 0.0, 0.0};
    double t = 0.0;
    bool hit = false;
    double o_at_x = 0.0;
    int evals_used = 0;
};

struct SearchBudget {
    double epsilon = 2.4 / 64.0;
    double t_min = 0.0;
    double t_max = 2.4;
    int binary_iters = 10;

    void validate() const;
    // linear samples + bisection refinements
    int max_evals() const;
};

using FieldFn = std::function<double(const Vec3&)>;
using BatchFieldFn = std::function<std::vector<double>(const std::vector<Vec3>&)>;

// One exterior/interior bracket state per bisection step, for invariant
// checking.
struct BracketStep {
    double t_lo, t_hi; // o(t_lo) <= tau < o(t_hi)
    double o_lo, o_hi;
};

// Steps t_min, t_min+eps, ... and returns the first sample with o > tau;
// otherwise flags a miss at the sample with maximal occupancy (first such
// sample on ties).
SurfacePoint linear_search(const FieldFn& field, const Ray& ray, const SearchBudget& budget,
                           double tau);

// Linear scan to the first interior sample, then bisection keeping an
// exterior/interior bracket; returns the interior endpoint of the final
// bracket, so the hit invariant o > tau holds and binary_iters = 0 matches
// linear_search exactly. |t - t_true| <= epsilon * 2^-binary_iters for a
// single crossing inside the bracket.
SurfacePoint linear_binary_search(const FieldFn& field, const Ray& ray, const SearchBudget& budget,
                                  double tau, std::vector<BracketStep>* trace = nullptr);

struct SearchConfig {
    double epsilon = 2.4 / 64.0;
    int binary_iters = 10;
    double tau = 0.5;
    double bound_radius = 1.2; // shapes live in the unit sphere
    bool use_binary = true;
};

// Clips the ray against the bounding sphere; nullopt when the ray misses the
// bound entirely (zero field evaluations).
std::optional<SearchBudget> budget_for_ray(const Ray& ray, const SearchConfig& cfg);

// Bound clip + search. Rays missing the bound return a miss at the ray's
// closest approach to the origin with o_at_x = 0 and zero evals.
SurfacePoint search_ray(const FieldFn& field, const Ray& ray, const SearchConfig& cfg);

struct SurfaceMap {
    int width = 0, height = 0;
    std::vector<SurfacePoint> points; // row-major

    SurfacePoint& at(int x, int y) { return points[static_cast<std::size_t>(y) * width + x]; }
    const SurfacePoint& at(int x, int y) const {
        return points[static_cast<std::size_t>(y) * width + x];
    }
    std::size_t hit_count() const;
};

// Pixel rays go through pixel centers (i + 0.5, j + 0.5).
Ray ray_for_pixel(const Projection& proj, int i, int j);

SurfaceMap surface_map(const FieldFn& field, const Projection& proj, int width, int height,
                       const SearchConfig& cfg);

// Lockstep variant: all active rays advance together and the field is
// evaluated in batches. Bit-identical results to surface_map when the batch
// evaluator matches the scalar evaluator per sample.
SurfaceMap surface_map_batch(const BatchFieldFn& field, const Projection& proj, int width,
                             int height, const SearchConfig& cfg);

ImageGray depth_image(const SurfaceMap& map);    // miss pixels get 0
ImageGray hit_mask_image(const SurfaceMap& map); // 1 hit / 0 miss

} // namespace jof
