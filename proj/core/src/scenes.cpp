#include <jof/scenes.hpp>

#include <jof/raysearch.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace jof {

namespace {

constexpr double kRayEps = 1e-9;

double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double len3(const Vec3& a) { return std::sqrt(dot3(a, a)); }
Vec3 sub3(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 at3(const Ray& r, double t) {
    return {r.origin[0] + t * r.dir[0], r.origin[1] + t * r.dir[1], r.origin[2] + t * r.dir[2]};
}

Vec3 normalized3(const Vec3& v) {
    const double n = len3(v);
    return {v[0] / n, v[1] / n, v[2] / n};
}

std::optional<PrimitiveHit> raycast_sphere(const Primitive& pr, const Ray& ray) {
    Vec3 q, dq;
    for (int i = 0; i < 3; ++i) {
        q[i] = (ray.origin[i] - pr.center[i]) / pr.param[i];
        dq[i] = ray.dir[i] / pr.param[i];
    }
    const double a = dot3(dq, dq);
    const double b = 2.0 * dot3(q, dq);
    const double c = dot3(q, q) - 1.0;
    const double disc = b * b - 4.0 * a * c;
    if (disc < 0.0) return std::nullopt;
    const double sq = std::sqrt(disc);
    double t = (-b - sq) / (2.0 * a);
    if (t <= kRayEps) t = (-b + sq) / (2.0 * a);
    if (t <= kRayEps) return std::nullopt;
    const Vec3 x = at3(ray, t);
    Vec3 g;
    for (int i = 0; i < 3; ++i) g[i] = (x[i] - pr.center[i]) / (pr.param[i] * pr.param[i]);
    return PrimitiveHit{t, normalized3(g)};
}

std::optional<PrimitiveHit> raycast_box(const Primitive& pr, const Ray& ray) {
    const Vec3 p = sub3(ray.origin, pr.center);
    double t_lo = -std::numeric_limits<double>::infinity();
    double t_hi = std::numeric_limits<double>::infinity();
    int enter_axis = -1, exit_axis = -1;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(ray.dir[a]) < 1e-300) {
            if (std::abs(p[a]) > pr.param[a]) return std::nullopt;
            continue;
        }
        double ta = (-pr.param[a] - p[a]) / ray.dir[a];
        double tb = (pr.param[a] - p[a]) / ray.dir[a];
        if (ta > tb) std::swap(ta, tb);
        if (ta > t_lo) {
            t_lo = ta;
            enter_axis = a;
        }
        if (tb < t_hi) {
            t_hi = tb;
            exit_axis = a;
        }
    }
    if (t_lo > t_hi || t_hi <= kRayEps) return std::nullopt;
    Vec3 n = {0.0, 0.0, 0.0};
    if (t_lo > kRayEps) {
        n[enter_axis] = ray.dir[enter_axis] > 0.0 ? -1.0 : 1.0;
        return PrimitiveHit{t_lo, n};
    }
    n[exit_axis] = ray.dir[exit_axis] > 0.0 ? 1.0 : -1.0;
    return PrimitiveHit{t_hi, n};
}

std::optional<PrimitiveHit> raycast_cylinder(const Primitive& pr, const Ray& ray) {
    const Vec3 p = sub3(ray.origin, pr.center);
    const double r = pr.param[0], hh = pr.param[1];
    std::optional<PrimitiveHit> best;
    auto consider = [&](double t, const Vec3& n) {
        if (t > kRayEps && (!best || t < best->t)) best = PrimitiveHit{t, n};
    };
    const double a = ray.dir[0] * ray.dir[0] + ray.dir[2] * ray.dir[2];
    if (a > 1e-300) {
        const double b = 2.0 * (p[0] * ray.dir[0] + p[2] * ray.dir[2]);
        const double c = p[0] * p[0] + p[2] * p[2] - r * r;
        const double disc = b * b - 4.0 * a * c;
        if (disc >= 0.0) {
            const double sq = std::sqrt(disc);
            for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
                if (std::abs(p[1] + t * ray.dir[1]) <= hh)
                    consider(t, {(p[0] + t * ray.dir[0]) / r, 0.0, (p[2] + t * ray.dir[2]) / r});
            }
        }
    }
    if (std::abs(ray.dir[1]) > 1e-300) {
        for (double s : {1.0, -1.0}) {
            const double t = (s * hh - p[1]) / ray.dir[1];
            const double x = p[0] + t * ray.dir[0], z = p[2] + t * ray.dir[2];
            if (x * x + z * z <= r * r) consider(t, {0.0, s, 0.0});
        }
    }
    return best;
}

double torus_implicit(const Primitive& pr, const Vec3& x) {
    const Vec3 p = sub3(x, pr.center);
    const double rho = std::sqrt(p[0] * p[0] + p[2] * p[2]);
    const double d = rho - pr.param[0];
    return d * d + p[1] * p[1] - pr.param[1] * pr.param[1];
}

Vec3 torus_gradient(const Primitive& pr, const Vec3& x) {
    const Vec3 p = sub3(x, pr.center);
    const double rho = std::sqrt(p[0] * p[0] + p[2] * p[2]);
    if (rho < 1e-12) return {0.0, p[1] >= 0.0 ? 1.0 : -1.0, 0.0};
    const double d = rho - pr.param[0];
    return normalized3({2.0 * d * p[0] / rho, 2.0 * p[1], 2.0 * d * p[2] / rho});
}

std::optional<PrimitiveHit> raycast_torus(const Primitive& pr, const Ray& ray) {
    // the quartic is avoided: bracket the first implicit sign change inside
    // the bounding sphere, then bisect to 1e-6
    const double bound = pr.param[0] + pr.param[1];
    const Vec3 p = sub3(ray.origin, pr.center);
    const double b = 2.0 * dot3(p, ray.dir);
    const double c = dot3(p, p) - bound * bound;
    const double a = dot3(ray.dir, ray.dir);
    const double disc = b * b - 4.0 * a * c;
    if (disc <= 0.0) return std::nullopt;
    const double sq = std::sqrt(disc);
    const double t0 = std::max((-b - sq) / (2.0 * a), kRayEps);
    const double t1 = (-b + sq) / (2.0 * a);
    if (t1 <= t0) return std::nullopt;

    const int steps = 512;
    const double dt = (t1 - t0) / steps;
    double prev_t = t0;
    double prev_f = torus_implicit(pr, at3(ray, t0));
    if (prev_f <= 0.0) return PrimitiveHit{t0, torus_gradient(pr, at3(ray, t0))};
    for (int i = 1; i <= steps; ++i) {
        const double t = t0 + i * dt;
        const double f = torus_implicit(pr, at3(ray, t));
        if (f <= 0.0) {
            double lo = prev_t, hi = t;
            while (hi - lo > 1e-9) {
                const double mid = 0.5 * (lo + hi);
                if (torus_implicit(pr, at3(ray, mid)) <= 0.0)
                    hi = mid;
                else
                    lo = mid;
            }
            return PrimitiveHit{hi, torus_gradient(pr, at3(ray, hi))};
        }
        prev_t = t;
        prev_f = f;
    }
    return std::nullopt;
}

} // namespace

void Primitive::validate() const {
    for (int i = 0; i < 3; ++i)
        if (!(std::isfinite(center[i]) && std::isfinite(param[i])))
            throw UsageError("primitive has non-finite parameters");
    switch (kind) {
    case PrimitiveKind::Sphere:
        if (param[0] <= 0 || param[1] <= 0 || param[2] <= 0)
            throw UsageError("sphere radii must be positive");
        break;
    case PrimitiveKind::Box:
        if (param[0] <= 0 || param[1] <= 0 || param[2] <= 0)
            throw UsageError("box half extents must be positive");
        break;
    case PrimitiveKind::Cylinder:
        if (param[0] <= 0 || param[1] <= 0)
            throw UsageError("cylinder radius and half height must be positive");
        break;
    case PrimitiveKind::Torus:
        if (param[0] <= 0 || param[1] <= 0 || param[1] >= param[0])
            throw UsageError("torus needs 0 < minor < major radius");
        break;
    }
}

bool Primitive::contains(const Vec3& x) const {
    const Vec3 p = sub3(x, center);
    switch (kind) {
    case PrimitiveKind::Sphere: {
        double s = 0.0;
        for (int i = 0; i < 3; ++i) {
            const double q = p[i] / param[i];
            s += q * q;
        }
        return s <= 1.0;
    }
    case PrimitiveKind::Box:
        return std::abs(p[0]) <= param[0] && std::abs(p[1]) <= param[1] &&
               std::abs(p[2]) <= param[2];
    case PrimitiveKind::Cylinder:
        return p[0] * p[0] + p[2] * p[2] <= param[0] * param[0] && std::abs(p[1]) <= param[1];
    case PrimitiveKind::Torus:
        return torus_implicit(*this, x) <= 0.0;
    }
    return false;
}

double Primitive::sdf(const Vec3& x) const {
    const Vec3 p = sub3(x, center);
    switch (kind) {
    case PrimitiveKind::Sphere: {
        if (param[0] == param[1] && param[1] == param[2]) return len3(p) - param[0];
        double k0 = 0.0, k1 = 0.0;
        for (int i = 0; i < 3; ++i) {
            const double q = p[i] / param[i];
            k0 += q * q;
            const double q2 = p[i] / (param[i] * param[i]);
            k1 += q2 * q2;
        }
        k0 = std::sqrt(k0);
        k1 = std::sqrt(k1);
        if (k1 < 1e-300) return -*std::min_element(param.begin(), param.end());
        return k0 * (k0 - 1.0) / k1;
    }
    case PrimitiveKind::Box: {
        Vec3 q;
        for (int i = 0; i < 3; ++i) q[i] = std::abs(p[i]) - param[i];
        const Vec3 qp = {std::max(q[0], 0.0), std::max(q[1], 0.0), std::max(q[2], 0.0)};
        return len3(qp) + std::min(std::max({q[0], q[1], q[2]}), 0.0);
    }
    case PrimitiveKind::Cylinder: {
        const double dr = std::sqrt(p[0] * p[0] + p[2] * p[2]) - param[0];
        const double dy = std::abs(p[1]) - param[1];
        const double ox = std::max(dr, 0.0), oy = std::max(dy, 0.0);
        return std::sqrt(ox * ox + oy * oy) + std::min(std::max(dr, dy), 0.0);
    }
    case PrimitiveKind::Torus: {
        const double rho = std::sqrt(p[0] * p[0] + p[2] * p[2]);
        const double d = rho - param[0];
        return std::sqrt(d * d + p[1] * p[1]) - param[1];
    }
    }
    return 0.0;
}

std::optional<PrimitiveHit> Primitive::raycast(const Ray& ray) const {
    switch (kind) {
    case PrimitiveKind::Sphere: return raycast_sphere(*this, ray);
    case PrimitiveKind::Box: return raycast_box(*this, ray);
    case PrimitiveKind::Cylinder: return raycast_cylinder(*this, ray);
    case PrimitiveKind::Torus: return raycast_torus(*this, ray);
    }
    return std::nullopt;
}

double Primitive::volume() const {
    switch (kind) {
    case PrimitiveKind::Sphere:
        return (4.0 / 3.0) * M_PI * param[0] * param[1] * param[2];
    case PrimitiveKind::Box: return 8.0 * param[0] * param[1] * param[2];
    case PrimitiveKind::Cylinder: return M_PI * param[0] * param[0] * 2.0 * param[1];
    case PrimitiveKind::Torus:
        return 2.0 * M_PI * M_PI * param[0] * param[1] * param[1];
    }
    return 0.0;
}

namespace {

double primitive_reach(const Primitive& pr) {
    switch (pr.kind) {
    case PrimitiveKind::Sphere: return *std::max_element(pr.param.begin(), pr.param.end());
    case PrimitiveKind::Box: return len3(pr.param);
    case PrimitiveKind::Cylinder:
        return std::sqrt(pr.param[0] * pr.param[0] + pr.param[1] * pr.param[1]);
    case PrimitiveKind::Torus: return pr.param[0] + pr.param[1];
    }
    return 0.0;
}

} // namespace

void ProceduralShape::validate() const {
    if (parts.empty()) throw UsageError("shape has no parts");
    for (const ShapePart& part : parts) {
        part.primitive.validate();
        if (len3(part.primitive.center) + primitive_reach(part.primitive) > 1.0 + 1e-9)
            throw UsageError("part leaves the unit sphere");
        for (double c : part.albedo)
            if (!(c >= 0.0 && c <= 1.0)) throw UsageError("albedo outside [0,1]");
    }
}

double ProceduralShape::sdf(const Vec3& x) const {
    double d = std::numeric_limits<double>::infinity();
    for (const ShapePart& part : parts) d = std::min(d, part.primitive.sdf(x));
    return d;
}

double occupancy_oracle(const ProceduralShape& shape, const Vec3& x) {
    for (const ShapePart& part : shape.parts)
        if (part.primitive.contains(x)) return 1.0;
    return 0.0;
}

Vec3 albedo_oracle(const ProceduralShape& shape, const Vec3& x) {
    for (const ShapePart& part : shape.parts)
        if (part.primitive.contains(x)) return part.albedo;
    throw UsageError("albedo query on an exterior point");
}

int label_oracle(const ProceduralShape& shape, const Vec3& x) {
    for (const ShapePart& part : shape.parts)
        if (part.primitive.contains(x)) return part.part_label;
    throw UsageError("label query on an exterior point");
}

Vec3 surface_bisect(const ProceduralShape& shape, Vec3 inside, Vec3 outside) {
    if (occupancy_oracle(shape, inside) != 1.0 || occupancy_oracle(shape, outside) != 0.0)
        throw UsageError("surface_bisect needs an interior and an exterior endpoint");
    for (int it = 0; it < 60; ++it) {
        const Vec3 mid = {0.5 * (inside[0] + outside[0]), 0.5 * (inside[1] + outside[1]),
                          0.5 * (inside[2] + outside[2])};
        if (occupancy_oracle(shape, mid) == 1.0)
            inside = mid;
        else
            outside = mid;
    }
    return {0.5 * (inside[0] + outside[0]), 0.5 * (inside[1] + outside[1]),
            0.5 * (inside[2] + outside[2])};
}

namespace {

Vec3 uniform_box_point(Rng& rng) {
    return {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
}

Vec3 find_point_with_occupancy(const ProceduralShape& shape, double want, Rng& rng) {
    for (int attempt = 0; attempt < 100000; ++attempt) {
        const Vec3 x = uniform_box_point(rng);
        if (occupancy_oracle(shape, x) == want) return x;
    }
    throw NumericError("rejection sampling failed to find a point with the requested occupancy");
}

PointSample classify(const ProceduralShape& shape, const Vec3& x) {
    PointSample s;
    s.x = x;
    s.o = occupancy_oracle(shape, x);
    if (s.o == 1.0) {
        s.albedo = albedo_oracle(shape, x);
        s.label = label_oracle(shape, x);
    }
    return s;
}

} // namespace

std::vector<PointSample> sample_point_values(const ProceduralShape& shape, int count,
                                             double near_surface_fraction, std::uint64_t seed) {
    if (count < 1) throw UsageError("need at least one sample");
    if (near_surface_fraction < 0.0 || near_surface_fraction > 1.0)
        throw UsageError("near_surface_fraction outside [0,1]");
    shape.validate();
    Rng rng(seed);
    const int near = static_cast<int>(std::lround(count * near_surface_fraction));
    std::vector<PointSample> out;
    out.reserve(count);
    for (int i = 0; i < count - near; ++i) out.push_back(classify(shape, uniform_box_point(rng)));
    for (int i = 0; i < near; ++i) {
        const Vec3 in = find_point_with_occupancy(shape, 1.0, rng);
        const Vec3 ex = find_point_with_occupancy(shape, 0.0, rng);
        const Vec3 s = surface_bisect(shape, in, ex);
        const Vec3 x = {s[0] + 0.05 * rng.normal(), s[1] + 0.05 * rng.normal(),
                        s[2] + 0.05 * rng.normal()};
        out.push_back(classify(shape, x));
    }
    return out;
}

VoxelGrid VoxelGrid::zeros(int res) {
    if (res < 1) throw UsageError("voxel resolution must be positive");
    VoxelGrid g;
    g.res = res;
    g.data.assign(static_cast<std::size_t>(res) * res * res * 4, 0.0);
    return g;
}

double& VoxelGrid::at(int ix, int iy, int iz, int c) {
    return data[((static_cast<std::size_t>(ix) * res + iy) * res + iz) * 4 + c];
}

double VoxelGrid::at(int ix, int iy, int iz, int c) const {
    return data[((static_cast<std::size_t>(ix) * res + iy) * res + iz) * 4 + c];
}

double VoxelGrid::cell_center(int res, int i) { return -1.0 + (i + 0.5) * 2.0 / res; }

std::size_t VoxelGrid::occupied_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < data.size(); i += 4) n += data[i] == 1.0 ? 1 : 0;
    return n;
}

VoxelGrid voxelize(const ProceduralShape& shape, int res) {
    VoxelGrid g = VoxelGrid::zeros(res);
    for (int ix = 0; ix < res; ++ix)
        for (int iy = 0; iy < res; ++iy)
            for (int iz = 0; iz < res; ++iz) {
                const Vec3 x = {VoxelGrid::cell_center(res, ix), VoxelGrid::cell_center(res, iy),
                                VoxelGrid::cell_center(res, iz)};
                if (occupancy_oracle(shape, x) == 1.0) {
                    g.at(ix, iy, iz, 0) = 1.0;
                    const Vec3 a = albedo_oracle(shape, x);
                    for (int c = 0; c < 3; ++c) g.at(ix, iy, iz, c + 1) = a[c];
                }
            }
    return g;
}

void save_voxel(const std::string& path, const VoxelGrid& grid) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    const std::uint32_t res = static_cast<std::uint32_t>(grid.res);
    out.write(reinterpret_cast<const char*>(&res), 4);
    for (double v : grid.data) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
    if (!out) throw IoError("write failed: " + path);
}

VoxelGrid load_voxel(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::uint32_t res = 0;
    in.read(reinterpret_cast<char*>(&res), 4);
    if (!in || res == 0 || res > 4096) throw IoError("malformed voxel file: " + path);
    VoxelGrid g = VoxelGrid::zeros(static_cast<int>(res));
    for (double& v : g.data) {
        float f = 0.0f;
        in.read(reinterpret_cast<char*>(&f), 4);
        if (!in) throw IoError("truncated voxel file: " + path);
        v = static_cast<double>(f);
    }
    return g;
}

AnalyticFrame analytic_render(const ProceduralShape& shape, const Projection& proj,
                              const Lighting& L, int width, int height) {
    shape.validate();
    L.validate();
    AnalyticFrame frame;
    frame.image = ImageRGB::zeros(width, height);
    frame.mask = ImageGray::zeros(width, height);
    frame.depth = ImageGray::zeros(width, height);
    for (int j = 0; j < height; ++j)
        for (int i = 0; i < width; ++i) {
            const Ray ray = ray_for_pixel(proj, i, j);
            std::optional<PrimitiveHit> best;
            const ShapePart* best_part = nullptr;
            for (const ShapePart& part : shape.parts) {
                const auto hit = part.primitive.raycast(ray);
                if (hit && (!best || hit->t < best->t)) {
                    best = hit;
                    best_part = &part;
                }
            }
            if (!best) continue;
            frame.mask.at(i, j) = 1.0;
            frame.depth.at(i, j) = best->t;
            const Vec3 s = shade(L, best->n);
            for (int c = 0; c < 3; ++c)
                frame.image.at(i, j, c) = std::clamp(best_part->albedo[c] * s[c], 0.0, 1.0);
        }
    return frame;
}

void DatasetConfig::validate() const {
    if (n_shapes < 1 || views < 1) throw UsageError("dataset needs shapes and views");
    if (width < 1 || height < 1) throw UsageError("bad image size");
    if (focal <= 0) throw UsageError("focal must be positive");
    if (voxel_res < 1) throw UsageError("bad voxel resolution");
    if (point_samples < 1) throw UsageError("need point samples");
    if (near_surface_fraction < 0.0 || near_surface_fraction > 1.0)
        throw UsageError("near_surface_fraction outside [0,1]");
    if (!(dist_min > 1.0) || !(dist_max >= dist_min))
        throw UsageError("camera distance range must stay outside the unit sphere");
    if (!(elevation_max >= elevation_min)) throw UsageError("bad elevation range");
    if (!(light_dc_min > 0.0) || !(light_dc_max >= light_dc_min))
        throw UsageError("bad lighting range");
    if (categories < 1 || categories > kCategoryCount) throw UsageError("bad category count");
}

namespace {

Vec3 random_albedo(Rng& rng) {
    return {rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9)};
}

} // namespace

ProceduralShape make_category_shape(int category, Rng& rng) {
    if (category < 0 || category >= kCategoryCount) throw UsageError("unknown category");
    ProceduralShape shape;
    shape.category = category;
    auto add = [&](PrimitiveKind kind, Vec3 center, Vec3 param) {
        ShapePart part;
        part.primitive.kind = kind;
        part.primitive.center = center;
        part.primitive.param = param;
        part.albedo = random_albedo(rng);
        part.part_label = static_cast<int>(shape.parts.size());
        shape.parts.push_back(part);
    };
    switch (category) {
    case 0: { // round-back seat: box slab plus a sphere resting behind it
        const double hw = rng.uniform(0.3, 0.42);
        add(PrimitiveKind::Box, {0.0, rng.uniform(-0.22, -0.12), 0.0},
            {hw, rng.uniform(0.08, 0.14), hw});
        const double r = rng.uniform(0.18, 0.28);
        add(PrimitiveKind::Sphere, {0.0, rng.uniform(0.18, 0.3), rng.uniform(-0.3, -0.2)},
            {r, r, r});
        break;
    }
    case 1: { // pedestal: box top on a cylinder leg
        const double hw = rng.uniform(0.34, 0.46);
        add(PrimitiveKind::Box, {0.0, rng.uniform(0.16, 0.26), 0.0},
            {hw, rng.uniform(0.05, 0.09), hw});
        add(PrimitiveKind::Cylinder, {0.0, rng.uniform(-0.28, -0.16), 0.0},
            {rng.uniform(0.09, 0.16), rng.uniform(0.24, 0.36), 0.0});
        break;
    }
    default: { // winged body: elongated ellipsoid with a thin box across it
        add(PrimitiveKind::Sphere, {0.0, 0.0, rng.uniform(-0.05, 0.05)},
            {rng.uniform(0.14, 0.2), rng.uniform(0.11, 0.16), rng.uniform(0.45, 0.6)});
        add(PrimitiveKind::Box, {0.0, 0.0, rng.uniform(-0.05, 0.1)},
            {rng.uniform(0.45, 0.6), rng.uniform(0.03, 0.05), rng.uniform(0.09, 0.14)});
        break;
    }
    }
    shape.validate();
    return shape;
}

namespace {

Lighting random_lighting(const DatasetConfig& cfg, Rng& rng) {
    Lighting L = Lighting::dc_white(rng.uniform(cfg.light_dc_min, cfg.light_dc_max));
    for (int b = 1; b < kShCoeffs; ++b) {
        const double v = rng.uniform(-cfg.light_band, cfg.light_band);
        for (int c = 0; c < 3; ++c) L.gamma(c, b) = v;
    }
    return L;
}

} // namespace

std::vector<SceneInstance> make_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::vector<SceneInstance> out(static_cast<std::size_t>(cfg.n_shapes));
    for (int s = 0; s < cfg.n_shapes; ++s) {
        Rng rng = Rng::for_step(seed, static_cast<std::uint64_t>(s));
        SceneInstance& inst = out[static_cast<std::size_t>(s)];
        inst.shape = make_category_shape(s % cfg.categories, rng);
        inst.voxel = voxelize(inst.shape, cfg.voxel_res);
        inst.samples = sample_point_values(inst.shape, cfg.point_samples,
                                           cfg.near_surface_fraction, rng.raw());
        inst.views.resize(static_cast<std::size_t>(cfg.views));
        for (SceneView& view : inst.views) {
            view.pose.azimuth = rng.uniform(0.0, 2.0 * M_PI);
            view.pose.elevation = rng.uniform(cfg.elevation_min, cfg.elevation_max);
            view.pose.distance = rng.uniform(cfg.dist_min, cfg.dist_max);
            view.pose.focal = cfg.focal;
            view.pose.principal = {cfg.width / 2.0, cfg.height / 2.0};
            view.light = random_lighting(cfg, rng);
            const Projection proj = compose_projection(view.pose, cfg.width, cfg.height);
            AnalyticFrame frame = analytic_render(inst.shape, proj, view.light, cfg.width,
                                                  cfg.height);
            view.image = std::move(frame.image);
            view.mask = std::move(frame.mask);
        }
    }
    return out;
}

namespace {

const char* kind_name(PrimitiveKind k) {
    switch (k) {
    case PrimitiveKind::Sphere: return "sphere";
    case PrimitiveKind::Box: return "box";
    case PrimitiveKind::Cylinder: return "cylinder";
    case PrimitiveKind::Torus: return "torus";
    }
    return "sphere";
}

PrimitiveKind kind_from_name(const std::string& name) {
    if (name == "sphere") return PrimitiveKind::Sphere;
    if (name == "box") return PrimitiveKind::Box;
    if (name == "cylinder") return PrimitiveKind::Cylinder;
    if (name == "torus") return PrimitiveKind::Torus;
    throw IoError("unknown primitive kind: " + name);
}

} // namespace

void save_shape_json(const std::string& path, const ProceduralShape& shape) {
    nlohmann::json j;
    j["category"] = shape.category;
    j["parts"] = nlohmann::json::array();
    for (const ShapePart& part : shape.parts) {
        nlohmann::json p;
        p["kind"] = kind_name(part.primitive.kind);
        p["center"] = part.primitive.center;
        p["param"] = part.primitive.param;
        p["albedo"] = part.albedo;
        p["label"] = part.part_label;
        j["parts"].push_back(p);
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

ProceduralShape load_shape_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed shape json " + path + ": " + e.what());
    }
    ProceduralShape shape;
    try {
        shape.category = j.at("category").get<int>();
        for (const auto& p : j.at("parts")) {
            ShapePart part;
            part.primitive.kind = kind_from_name(p.at("kind").get<std::string>());
            part.primitive.center = p.at("center").get<Vec3>();
            part.primitive.param = p.at("param").get<Vec3>();
            part.albedo = p.at("albedo").get<Vec3>();
            part.part_label = p.at("label").get<int>();
            shape.parts.push_back(part);
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed shape json " + path + ": " + e.what());
    }
    shape.validate();
    return shape;
}

void save_samples(const std::string& path, const std::vector<PointSample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    const std::uint32_t count = static_cast<std::uint32_t>(samples.size());
    out.write(reinterpret_cast<const char*>(&count), 4);
    // per record: f32 x[3], u8 occupancy, f32 rgb[3], u8 label (255 = exterior)
    for (const PointSample& s : samples) {
        for (double v : s.x) {
            const float f = static_cast<float>(v);
            out.write(reinterpret_cast<const char*>(&f), 4);
        }
        const std::uint8_t o = s.o == 1.0 ? 1 : 0;
        out.write(reinterpret_cast<const char*>(&o), 1);
        for (double v : s.albedo) {
            const float f = static_cast<float>(v);
            out.write(reinterpret_cast<const char*>(&f), 4);
        }
        const std::uint8_t label =
            s.label < 0 ? 255 : static_cast<std::uint8_t>(std::min(s.label, 254));
        out.write(reinterpret_cast<const char*>(&label), 1);
    }
    if (!out) throw IoError("write failed: " + path);
}

std::vector<PointSample> load_samples(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 4);
    if (!in) throw IoError("malformed samples file: " + path);
    std::vector<PointSample> out(count);
    for (PointSample& s : out) {
        float f[3];
        in.read(reinterpret_cast<char*>(f), 12);
        for (int i = 0; i < 3; ++i) s.x[i] = f[i];
        std::uint8_t o = 0;
        in.read(reinterpret_cast<char*>(&o), 1);
        s.o = o ? 1.0 : 0.0;
        in.read(reinterpret_cast<char*>(f), 12);
        for (int i = 0; i < 3; ++i) s.albedo[i] = f[i];
        std::uint8_t label = 0;
        in.read(reinterpret_cast<char*>(&label), 1);
        s.label = label == 255 ? -1 : label;
        if (!in) throw IoError("truncated samples file: " + path);
    }
    return out;
}

void save_dataset(const std::string& dir, const std::vector<SceneInstance>& instances) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (std::size_t s = 0; s < instances.size(); ++s) {
        const SceneInstance& inst = instances[s];
        const fs::path base = fs::path(dir) / ("shape_" + std::to_string(s));
        fs::create_directories(base);
        save_shape_json((base / "shape.json").string(), inst.shape);
        save_samples((base / "samples.bin").string(), inst.samples);
        save_voxel((base / "voxel.bin").string(), inst.voxel);
        for (std::size_t v = 0; v < inst.views.size(); ++v) {
            const SceneView& view = inst.views[v];
            const std::string k = std::to_string(v);
            write_ppm((base / ("image_" + k + ".ppm")).string(), view.image);
            write_pgm((base / ("mask_" + k + ".pgm")).string(), view.mask);
            save_poses((base / ("pose_" + k + ".txt")).string(), {view.pose});
            save_lighting((base / ("light_" + k + ".txt")).string(), view.light);
        }
    }
}

std::vector<SceneInstance> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<SceneInstance> out;
    for (std::size_t s = 0;; ++s) {
        const fs::path base = fs::path(dir) / ("shape_" + std::to_string(s));
        if (!fs::exists(base / "shape.json")) break;
        SceneInstance inst;
        inst.shape = load_shape_json((base / "shape.json").string());
        inst.samples = load_samples((base / "samples.bin").string());
        inst.voxel = load_voxel((base / "voxel.bin").string());
        for (std::size_t v = 0;; ++v) {
            const std::string k = std::to_string(v);
            if (!fs::exists(base / ("image_" + k + ".ppm"))) break;
            SceneView view;
            view.image = read_ppm((base / ("image_" + k + ".ppm")).string());
            view.mask = read_pgm((base / ("mask_" + k + ".pgm")).string());
            const auto poses = load_poses((base / ("pose_" + k + ".txt")).string());
            if (poses.size() != 1) throw IoError("expected one pose in pose_" + k + ".txt");
            view.pose = poses[0];
            view.light = load_lighting((base / ("light_" + k + ".txt")).string());
            inst.views.push_back(std::move(view));
        }
        out.push_back(std::move(inst));
    }
    if (out.empty()) throw IoError("no shapes found under " + dir);
    return out;
}

} // namespace jof
