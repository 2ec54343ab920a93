#pragma once

#include <jof/camera.hpp>
#include <jof/image.hpp>
#include <jof/shading.hpp>

#include <optional>
#include <string>
#include <vector>

namespace jof {

// Procedural ground truth: unions of analytic primitives with per-part albedo,
// plus exact membership / distance / ray-intersection oracles.

enum class PrimitiveKind { Sphere, Box, Cylinder, Torus };

struct PrimitiveHit {
    double t = 0.0;
    Vec3 n = {0.0, 0.0, 0.0}; // outward unit normal at the hit
};

struct Primitive {
    PrimitiveKind kind = PrimitiveKind::Sphere;
    Vec3 center = {0.0, 0.0, 0.0};
    // sphere: per-axis radii (ellipsoid when unequal); box: half extents;
    // cylinder (y axis): {radius, half_height, unused};
    // torus (y axis): {major_radius, minor_radius, unused}
    Vec3 param = {0.5, 0.5, 0.5};

    void validate() const;
    bool contains(const Vec3& x) const;
    // signed distance; exact except the ellipsoid case, which uses a tight
    // bound adequate for sampling offsets
    double sdf(const Vec3& x) const;
    // nearest boundary crossing with t > 0 along a forward ray
    std::optional<PrimitiveHit> raycast(const Ray& ray) const;
    double volume() const;
};

struct ShapePart {
    Primitive primitive;
    Vec3 albedo = {0.5, 0.5, 0.5};
    int part_label = 0;
};

struct ProceduralShape {
    std::vector<ShapePart> parts; // overlaps resolve to the first listed part
    int category = 0;

    void validate() const; // parts nonempty, inside the unit sphere
    double sdf(const Vec3& x) const;
};

// membership oracles; albedo/label are defined only on interior points
double occupancy_oracle(const ProceduralShape& shape, const Vec3& x);
Vec3 albedo_oracle(const ProceduralShape& shape, const Vec3& x);
int label_oracle(const ProceduralShape& shape, const Vec3& x);

struct PointSample {
    Vec3 x;
    double o = 0.0;           // 0 or 1
    Vec3 albedo = {0, 0, 0};  // valid iff o == 1
    int label = -1;           // valid iff o == 1
};

// Mixture of uniform box samples and Gaussian (sigma = 0.05) offsets around
// surface points found by membership bisection; deterministic per seed.
std::vector<PointSample> sample_point_values(const ProceduralShape& shape, int count,
                                             double near_surface_fraction, std::uint64_t seed);

// exact surface point between an interior and an exterior point
Vec3 surface_bisect(const ProceduralShape& shape, Vec3 inside, Vec3 outside);

struct VoxelGrid {
    int res = 0;
    std::vector<double> data; // res^3 cells * 4 (occupancy, r, g, b), x-major

    static VoxelGrid zeros(int res);
    double& at(int ix, int iy, int iz, int c);
    double at(int ix, int iy, int iz, int c) const;
    static double cell_center(int res, int i); // grid spans [-1, 1]
    std::size_t occupied_count() const;
};

VoxelGrid voxelize(const ProceduralShape& shape, int res);
void save_voxel(const std::string& path, const VoxelGrid& grid);
VoxelGrid load_voxel(const std::string& path);

struct AnalyticFrame {
    ImageRGB image;
    ImageGray mask;
    ImageGray depth; // ray parameter at hit, 0 at misses
};

// Reference renderer: exact primitive intersections (closest crossing across
// parts = the union surface), exact outward normals, and the same SH shading
// and clamping as the field renderer.
AnalyticFrame analytic_render(const ProceduralShape& shape, const Projection& proj,
                              const Lighting& L, int width, int height);

struct DatasetConfig {
    int n_shapes = 6;
    int views = 4;
    int width = 64, height = 64;
    double focal = 64.0;
    int voxel_res = 16;
    int point_samples = 2048;
    double near_surface_fraction = 0.5;
    double dist_min = 2.2, dist_max = 2.8;
    double elevation_min = -0.7, elevation_max = 0.7;
    double light_dc_min = 0.7, light_dc_max = 1.1;
    double light_band = 0.12;
    int categories = 3;

    void validate() const;
};

struct SceneView {
    PoseParams pose;
    Lighting light;
    ImageRGB image;
    ImageGray mask;
};

struct SceneInstance {
    ProceduralShape shape;
    VoxelGrid voxel;
    std::vector<PointSample> samples;
    std::vector<SceneView> views;
};

// three templates with randomized parameters: 0 sphere+box, 1 cylinder+box,
// 2 ellipsoid+box
constexpr int kCategoryCount = 3;
ProceduralShape make_category_shape(int category, Rng& rng);

std::vector<SceneInstance> make_dataset(const DatasetConfig& cfg, std::uint64_t seed);

// Disk layout: <dir>/shape_<i>/ holding shape.json, samples.bin, voxel.bin
// and per view image_<k>.ppm, mask_<k>.pgm, pose_<k>.txt, light_<k>.txt.
void save_dataset(const std::string& dir, const std::vector<SceneInstance>& instances);
std::vector<SceneInstance> load_dataset(const std::string& dir);

void save_shape_json(const std::string& path, const ProceduralShape& shape);
ProceduralShape load_shape_json(const std::string& path);
void save_samples(const std::string& path, const std::vector<PointSample>& samples);
std::vector<PointSample> load_samples(const std::string& path);

} // namespace jof
