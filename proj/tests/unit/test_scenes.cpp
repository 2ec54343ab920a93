#include <doctest.h>

#include <jof/scenes.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

using namespace jof;

namespace {

ProceduralShape single(PrimitiveKind kind, Vec3 center, Vec3 param, Vec3 albedo = {0.5, 0.5, 0.5}) {
    ProceduralShape s;
    ShapePart part;
    part.primitive.kind = kind;
    part.primitive.center = center;
    part.primitive.param = param;
    part.albedo = albedo;
    part.part_label = 0;
    s.parts.push_back(part);
    return s;
}

ProceduralShape unit_sphere() {
    return single(PrimitiveKind::Sphere, {0, 0, 0}, {1, 1, 1});
}

double mc_interior_fraction(const ProceduralShape& s, int n, std::uint64_t seed) {
    Rng rng(seed);
    int inside = 0;
    for (int i = 0; i < n; ++i) {
        const Vec3 x = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        if (occupancy_oracle(s, x) == 1.0) ++inside;
    }
    return static_cast<double>(inside) / n;
}

} // namespace

TEST_CASE("unit sphere membership") {
    const ProceduralShape s = unit_sphere();
    CHECK(occupancy_oracle(s, {0, 0, 0}) == 1.0);
    CHECK(occupancy_oracle(s, {0, 0, 1.5}) == 0.0);
}

TEST_CASE("overlaps resolve to the first listed part") {
    ProceduralShape s;
    ShapePart red;
    red.primitive.kind = PrimitiveKind::Sphere;
    red.primitive.center = {-0.4, 0, 0};
    red.primitive.param = {0.4, 0.4, 0.4};
    red.albedo = {1, 0, 0};
    red.part_label = 0;
    ShapePart blue;
    blue.primitive.kind = PrimitiveKind::Box;
    blue.primitive.center = {0, 0, 0};
    blue.primitive.param = {0.5, 0.3, 0.3};
    blue.albedo = {0, 0, 1};
    blue.part_label = 1;
    s.parts = {red, blue};

    const Vec3 x = {-0.4, 0.05, 0.0}; // inside both
    CHECK(red.primitive.contains(x));
    CHECK(blue.primitive.contains(x));
    CHECK(albedo_oracle(s, x)[0] == 1.0);
    CHECK(albedo_oracle(s, x)[2] == 0.0);
    CHECK(label_oracle(s, x) == 0);

    const Vec3 y = {0.45, 0.0, 0.0}; // box only
    CHECK(albedo_oracle(s, y)[2] == 1.0);
    CHECK(label_oracle(s, y) == 1);

    CHECK_THROWS_AS(albedo_oracle(s, {0, 0, 2}), UsageError);
    CHECK_THROWS_AS(label_oracle(s, {0, 0, 2}), UsageError);
}

TEST_CASE("Monte-Carlo interior fraction matches closed-form volumes") {
    struct Case {
        ProceduralShape shape;
        const char* name;
    };
    const Case cases[] = {
        {single(PrimitiveKind::Sphere, {0, 0, 0}, {0.7, 0.7, 0.7}), "sphere"},
        {single(PrimitiveKind::Sphere, {0, 0, 0}, {0.5, 0.7, 0.9}), "ellipsoid"},
        {single(PrimitiveKind::Box, {0.1, 0, 0}, {0.5, 0.4, 0.6}), "box"},
        {single(PrimitiveKind::Cylinder, {0, 0.1, 0}, {0.45, 0.55, 0}), "cylinder"},
        {single(PrimitiveKind::Torus, {0, 0, 0}, {0.55, 0.25, 0}), "torus"},
    };
    int ci = 0;
    for (const Case& c : cases) {
        CAPTURE(c.name);
        const double expected = c.shape.parts[0].primitive.volume() / 8.0;
        const double got = mc_interior_fraction(c.shape, 100000, 1700 + ci++);
        CHECK(std::abs(got - expected) / expected < 0.02);
    }
}

TEST_CASE("signed distance sign agrees with membership everywhere") {
    const ProceduralShape shapes[] = {
        single(PrimitiveKind::Sphere, {0.1, 0, 0}, {0.4, 0.5, 0.6}),
        single(PrimitiveKind::Box, {0, 0.1, 0}, {0.5, 0.3, 0.4}),
        single(PrimitiveKind::Cylinder, {0, 0, 0.1}, {0.4, 0.5, 0}),
        single(PrimitiveKind::Torus, {0, 0, 0}, {0.5, 0.2, 0}),
    };
    Rng rng(7);
    for (const ProceduralShape& s : shapes)
        for (int i = 0; i < 10000; ++i) {
            const Vec3 x = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                            rng.uniform(-1.0, 1.0)};
            const bool inside = occupancy_oracle(s, x) == 1.0;
            CHECK(inside == (s.sdf(x) <= 0.0));
        }
}

TEST_CASE("exact-sdf primitives vanish at bisected surface points") {
    const ProceduralShape shapes[] = {
        single(PrimitiveKind::Sphere, {0, 0, 0}, {0.6, 0.6, 0.6}),
        single(PrimitiveKind::Box, {0, 0, 0}, {0.5, 0.3, 0.4}),
        single(PrimitiveKind::Cylinder, {0, 0, 0}, {0.4, 0.5, 0}),
        single(PrimitiveKind::Torus, {0, 0, 0}, {0.5, 0.2, 0}),
    };
    Rng rng(13);
    for (const ProceduralShape& s : shapes)
        for (int i = 0; i < 20; ++i) {
            Vec3 in, ex;
            do {
                in = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
            } while (occupancy_oracle(s, in) != 1.0);
            do {
                ex = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
            } while (occupancy_oracle(s, ex) != 0.0);
            const Vec3 p = surface_bisect(s, in, ex);
            CHECK(std::abs(s.sdf(p)) < 1e-9);
        }
}

TEST_CASE("surface_bisect rejects bad endpoints") {
    const ProceduralShape s = unit_sphere();
    CHECK_THROWS_AS(surface_bisect(s, {0, 0, 2}, {0, 0, 3}), UsageError);
    CHECK_THROWS_AS(surface_bisect(s, {0, 0, 0}, {0.1, 0, 0}), UsageError);
}

TEST_CASE("point samples agree with the occupancy oracle") {
    const ProceduralShape s = single(PrimitiveKind::Box, {0, 0, 0}, {0.5, 0.4, 0.3}, {0.2, 0.7, 0.4});
    const auto samples = sample_point_values(s, 500, 0.5, 11);
    REQUIRE(samples.size() == 500);
    for (const PointSample& p : samples) {
        CHECK((p.o == 0.0 || p.o == 1.0));
        CHECK(p.o == occupancy_oracle(s, p.x));
        if (p.o == 1.0) {
            CHECK(p.label == 0);
            CHECK(p.albedo[1] == 0.7);
        } else {
            CHECK(p.label == -1);
        }
    }
}

TEST_CASE("zero near-surface fraction reduces to uniform interior statistics") {
    const ProceduralShape s = single(PrimitiveKind::Sphere, {0, 0, 0}, {0.7, 0.7, 0.7});
    const auto samples = sample_point_values(s, 20000, 0.0, 21);
    double inside = 0;
    for (const PointSample& p : samples) inside += p.o;
    const double expected = s.parts[0].primitive.volume() / 8.0;
    CHECK(std::abs(inside / 20000 - expected) < 0.02);
    // deterministic per seed
    const auto again = sample_point_values(s, 20000, 0.0, 21);
    for (std::size_t i = 0; i < samples.size(); ++i) CHECK(samples[i].x == again[i].x);
}

TEST_CASE("half near-surface sampling concentrates mass near the boundary") {
    const ProceduralShape s = single(PrimitiveKind::Cylinder, {0, 0, 0}, {0.45, 0.4, 0});
    const auto samples = sample_point_values(s, 2000, 0.5, 31);
    int close = 0;
    for (const PointSample& p : samples)
        if (std::abs(s.sdf(p.x)) <= 0.15) ++close;
    CHECK(close >= 800); // >= 40%
}

TEST_CASE("voxelized unit sphere occupies the expected cell fraction") {
    const VoxelGrid g = voxelize(unit_sphere(), 32);
    const double expected = (M_PI / 6.0) * 32.0 * 32.0 * 32.0;
    CHECK(std::abs(static_cast<double>(g.occupied_count()) - expected) / expected < 0.05);
}

TEST_CASE("empty shapes voxelize to zeros") {
    ProceduralShape empty;
    const VoxelGrid g = voxelize(empty, 8);
    for (double v : g.data) CHECK(v == 0.0);
}

TEST_CASE("voxel colors equal the albedo oracle at cell centers") {
    Rng rng(5);
    const ProceduralShape s = make_category_shape(0, rng);
    const VoxelGrid g = voxelize(s, 16);
    for (int ix = 0; ix < 16; ++ix)
        for (int iy = 0; iy < 16; ++iy)
            for (int iz = 0; iz < 16; ++iz) {
                const Vec3 x = {VoxelGrid::cell_center(16, ix), VoxelGrid::cell_center(16, iy),
                                VoxelGrid::cell_center(16, iz)};
                if (g.at(ix, iy, iz, 0) == 1.0) {
                    const Vec3 a = albedo_oracle(s, x);
                    for (int c = 0; c < 3; ++c) CHECK(g.at(ix, iy, iz, c + 1) == a[c]);
                } else {
                    CHECK(occupancy_oracle(s, x) == 0.0);
                    for (int c = 0; c < 3; ++c) CHECK(g.at(ix, iy, iz, c + 1) == 0.0);
                }
            }
}

TEST_CASE("on-axis sphere silhouette radius matches the projection formula") {
    const double r = 0.5, d = 2.5, f = 64.0;
    const ProceduralShape s = single(PrimitiveKind::Sphere, {0, 0, 0}, {r, r, r});
    PoseParams pose;
    pose.distance = d;
    pose.focal = f;
    pose.principal = {32.0, 32.0};
    const Projection proj = compose_projection(pose, 64, 64);
    const AnalyticFrame frame = analytic_render(s, proj, Lighting::dc_white(1.0), 64, 64);
    const double expected = f * r / std::sqrt(d * d - r * r);
    double max_dist = 0.0;
    for (int j = 0; j < 64; ++j)
        for (int i = 0; i < 64; ++i)
            if (frame.mask.at(i, j) == 1.0) {
                const double du = i + 0.5 - 32.0, dv = j + 0.5 - 32.0;
                max_dist = std::max(max_dist, std::sqrt(du * du + dv * dv));
            }
    CHECK(std::abs(max_dist - expected) <= 1.0);
}

TEST_CASE("zero lighting renders a black foreground") {
    const ProceduralShape s = single(PrimitiveKind::Box, {0, 0, 0}, {0.4, 0.4, 0.4});
    PoseParams pose;
    pose.azimuth = 0.7;
    pose.elevation = 0.4;
    pose.distance = 2.4;
    pose.focal = 32.0;
    pose.principal = {16.0, 16.0};
    const Projection proj = compose_projection(pose, 32, 32);
    const AnalyticFrame frame = analytic_render(s, proj, Lighting{}, 32, 32);
    CHECK(frame.mask.data != std::vector<double>(32 * 32, 0.0));
    for (double v : frame.image.data) CHECK(v == 0.0);
}

TEST_CASE("azimuth is 2-pi periodic pixel for pixel") {
    Rng rng(17);
    const ProceduralShape s = make_category_shape(1, rng);
    PoseParams a;
    a.azimuth = 0.0;
    a.elevation = 0.3;
    a.distance = 2.5;
    a.focal = 32.0;
    a.principal = {16.0, 16.0};
    PoseParams b = a;
    b.azimuth = 2.0 * M_PI;
    const Lighting L = Lighting::dc_white(0.9);
    const AnalyticFrame fa = analytic_render(s, compose_projection(a, 32, 32), L, 32, 32);
    const AnalyticFrame fb = analytic_render(s, compose_projection(b, 32, 32), L, 32, 32);
    CHECK(fa.mask.data == fb.mask.data);
    for (std::size_t i = 0; i < fa.image.data.size(); ++i)
        CHECK(std::abs(fa.image.data[i] - fb.image.data[i]) < 1e-9);
}

TEST_CASE("torus intersections are found to micro accuracy") {
    const Primitive torus{PrimitiveKind::Torus, {0, 0, 0}, {0.5, 0.2, 0}};

    const auto side = torus.raycast({{-2, 0, 0}, {1, 0, 0}});
    REQUIRE(side.has_value());
    CHECK(std::abs(side->t - 1.3) <= 1e-6);
    CHECK(side->n[0] == doctest::Approx(-1.0).epsilon(1e-5));

    const auto top = torus.raycast({{0.5, 2, 0}, {0, -1, 0}});
    REQUIRE(top.has_value());
    CHECK(std::abs(top->t - 1.8) <= 1e-6);
    CHECK(top->n[1] == doctest::Approx(1.0).epsilon(1e-5));

    // straight through the hole
    CHECK(!torus.raycast({{0, -2, 0}, {0, 1, 0}}).has_value());
}

TEST_CASE("primitive raycasts land on the implicit surface") {
    const Primitive prims[] = {
        {PrimitiveKind::Sphere, {0.1, 0, 0}, {0.3, 0.4, 0.5}},
        {PrimitiveKind::Box, {0, 0.1, 0}, {0.4, 0.3, 0.5}},
        {PrimitiveKind::Cylinder, {0, 0, 0}, {0.35, 0.45, 0}},
        {PrimitiveKind::Torus, {0, 0, 0}, {0.5, 0.18, 0}},
    };
    Rng rng(23);
    for (const Primitive& pr : prims) {
        int hits = 0;
        for (int i = 0; i < 200; ++i) {
            Vec3 origin = {rng.normal(), rng.normal(), rng.normal()};
            const double n =
                std::sqrt(origin[0] * origin[0] + origin[1] * origin[1] + origin[2] * origin[2]);
            for (double& v : origin) v *= 2.0 / n;
            Vec3 target = {rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                           rng.uniform(-0.2, 0.2)};
            Vec3 dir = {target[0] - origin[0], target[1] - origin[1], target[2] - origin[2]};
            const double dn = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
            for (double& v : dir) v /= dn;
            const auto hit = pr.raycast({origin, dir});
            if (!hit) continue;
            ++hits;
            const Vec3 x = {origin[0] + hit->t * dir[0], origin[1] + hit->t * dir[1],
                            origin[2] + hit->t * dir[2]};
            CHECK(std::abs(pr.sdf(x)) < 1e-5);
            const double nn =
                std::sqrt(hit->n[0] * hit->n[0] + hit->n[1] * hit->n[1] + hit->n[2] * hit->n[2]);
            CHECK(nn == doctest::Approx(1.0).epsilon(1e-9));
            // outward: stepping along the normal leaves the primitive
            const Vec3 out = {x[0] + 1e-4 * hit->n[0], x[1] + 1e-4 * hit->n[1],
                              x[2] + 1e-4 * hit->n[2]};
            CHECK(!pr.contains(out));
        }
        CHECK(hits > 100);
    }
}

TEST_CASE("categories produce valid two-part shapes") {
    Rng rng(41);
    for (int cat = 0; cat < kCategoryCount; ++cat) {
        for (int i = 0; i < 5; ++i) {
            const ProceduralShape s = make_category_shape(cat, rng);
            CHECK(s.category == cat);
            CHECK(s.parts.size() == 2);
            CHECK_NOTHROW(s.validate());
        }
    }
    CHECK_THROWS_AS(make_category_shape(kCategoryCount, rng), UsageError);
}

TEST_CASE("datasets are deterministic and self-consistent") {
    DatasetConfig cfg;
    cfg.n_shapes = 3;
    cfg.views = 2;
    cfg.width = 24;
    cfg.height = 24;
    cfg.focal = 24.0;
    cfg.voxel_res = 8;
    cfg.point_samples = 128;
    const auto a = make_dataset(cfg, 77);
    const auto b = make_dataset(cfg, 77);
    REQUIRE(a.size() == 3);

    bool seen[kCategoryCount] = {false, false, false};
    for (std::size_t s = 0; s < a.size(); ++s) {
        seen[a[s].shape.category] = true;
        CHECK(a[s].voxel.data == b[s].voxel.data);
        REQUIRE(a[s].samples.size() == b[s].samples.size());
        for (std::size_t i = 0; i < a[s].samples.size(); ++i) {
            CHECK(a[s].samples[i].x == b[s].samples[i].x);
            CHECK(a[s].samples[i].o == b[s].samples[i].o);
        }
        for (std::size_t v = 0; v < a[s].views.size(); ++v) {
            const SceneView& va = a[s].views[v];
            CHECK(va.image.data == b[s].views[v].image.data);
            CHECK(va.pose.azimuth == b[s].views[v].pose.azimuth);
            CHECK(va.pose.distance >= cfg.dist_min);
            CHECK(va.pose.distance <= cfg.dist_max);
            const Projection proj = compose_projection(va.pose, cfg.width, cfg.height);
            const AnalyticFrame re =
                analytic_render(a[s].shape, proj, va.light, cfg.width, cfg.height);
            CHECK(re.mask.data == va.mask.data);
            CHECK(re.image.data == va.image.data);
        }
    }
    for (bool cat_seen : seen) CHECK(cat_seen);
}

TEST_CASE("dataset disk round-trip preserves everything up to storage precision") {
    DatasetConfig cfg;
    cfg.n_shapes = 2;
    cfg.views = 2;
    cfg.width = 16;
    cfg.height = 16;
    cfg.focal = 16.0;
    cfg.voxel_res = 6;
    cfg.point_samples = 64;
    const auto made = make_dataset(cfg, 5);
    const std::string dir = "scene_roundtrip_tmp";
    save_dataset(dir, made);
    const auto loaded = load_dataset(dir);
    REQUIRE(loaded.size() == made.size());
    for (std::size_t s = 0; s < made.size(); ++s) {
        CHECK(loaded[s].shape.category == made[s].shape.category);
        REQUIRE(loaded[s].shape.parts.size() == made[s].shape.parts.size());
        for (std::size_t p = 0; p < made[s].shape.parts.size(); ++p) {
            CHECK(loaded[s].shape.parts[p].primitive.kind == made[s].shape.parts[p].primitive.kind);
            for (int i = 0; i < 3; ++i) {
                CHECK(loaded[s].shape.parts[p].primitive.param[i] ==
                      made[s].shape.parts[p].primitive.param[i]);
                CHECK(loaded[s].shape.parts[p].albedo[i] == made[s].shape.parts[p].albedo[i]);
            }
        }
        REQUIRE(loaded[s].samples.size() == made[s].samples.size());
        for (std::size_t i = 0; i < made[s].samples.size(); ++i) {
            CHECK(loaded[s].samples[i].o == made[s].samples[i].o);
            CHECK(loaded[s].samples[i].label == made[s].samples[i].label);
            for (int c = 0; c < 3; ++c)
                CHECK(loaded[s].samples[i].x[c] ==
                      static_cast<double>(static_cast<float>(made[s].samples[i].x[c])));
        }
        REQUIRE(loaded[s].voxel.data.size() == made[s].voxel.data.size());
        for (std::size_t i = 0; i < made[s].voxel.data.size(); ++i)
            CHECK(loaded[s].voxel.data[i] ==
                  static_cast<double>(static_cast<float>(made[s].voxel.data[i])));
        REQUIRE(loaded[s].views.size() == made[s].views.size());
        for (std::size_t v = 0; v < made[s].views.size(); ++v) {
            CHECK(loaded[s].views[v].pose.azimuth == made[s].views[v].pose.azimuth);
            CHECK(loaded[s].views[v].pose.distance == made[s].views[v].pose.distance);
            CHECK(loaded[s].views[v].light.gamma == made[s].views[v].light.gamma);
            CHECK(loaded[s].views[v].mask.data == made[s].views[v].mask.data);
            for (std::size_t i = 0; i < made[s].views[v].image.data.size(); ++i) {
                const double stored =
                    std::round(std::clamp(made[s].views[v].image.data[i], 0.0, 1.0) * 255.0) /
                    255.0;
                CHECK(std::abs(loaded[s].views[v].image.data[i] - stored) < 1e-12);
            }
        }
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("invalid configurations and shapes are rejected") {
    DatasetConfig cfg;
    cfg.dist_min = 0.5; // camera inside the unit sphere
    CHECK_THROWS_AS(cfg.validate(), UsageError);

    ProceduralShape outside = single(PrimitiveKind::Sphere, {0.8, 0, 0}, {0.5, 0.5, 0.5});
    CHECK_THROWS_AS(outside.validate(), UsageError);

    Primitive bad_torus{PrimitiveKind::Torus, {0, 0, 0}, {0.2, 0.5, 0}};
    CHECK_THROWS_AS(bad_torus.validate(), UsageError);
}
