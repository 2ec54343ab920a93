#include <doctest.h>

#include <jof/shading.hpp>

#include <models.hpp>

#include <cmath>

using namespace jof;
using testmodels::octahedron_model;
using testmodels::tiny_codes;

namespace {

Vec3 random_unit(Rng& rng) {
    while (true) {
        Vec3 v = {rng.normal(), rng.normal(), rng.normal()};
        const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if (n > 1e-3) return {v[0] / n, v[1] / n, v[2] / n};
    }
}

} // namespace

TEST_CASE("basis component 0 is the DC constant") {
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        const auto H = sh_basis(random_unit(rng));
        CHECK(H[0] == doctest::Approx(0.2820948).epsilon(1e-6));
    }
}

TEST_CASE("basis at the pole keeps only m=0 terms") {
    const auto H = sh_basis({0.0, 0.0, 1.0});
    CHECK(H[1] == 0.0);
    CHECK(H[3] == 0.0);
    CHECK(H[4] == 0.0);
    CHECK(H[5] == 0.0);
    CHECK(H[7] == 0.0);
    CHECK(H[8] == 0.0);
    CHECK(H[2] == doctest::Approx(0.4886025119).epsilon(1e-9));
    CHECK(H[6] == doctest::Approx(2.0 * 0.31539156525).epsilon(1e-9));
}

TEST_CASE("parity: odd bands negate under n -> -n") {
    Rng rng(8);
    for (int i = 0; i < 20; ++i) {
        const Vec3 n = random_unit(rng);
        const auto Hp = sh_basis(n);
        const auto Hm = sh_basis({-n[0], -n[1], -n[2]});
        CHECK(Hm[0] == doctest::Approx(Hp[0]).epsilon(1e-14));
        for (int b = 1; b <= 3; ++b) CHECK(Hm[b] == doctest::Approx(-Hp[b]).epsilon(1e-12));
        for (int b = 4; b <= 8; ++b) CHECK(Hm[b] == doctest::Approx(Hp[b]).epsilon(1e-12));
    }
}

TEST_CASE("DC-only lighting shades to one for a thousand random normals") {
    Lighting L = Lighting::dc_white(1.0);
    Rng rng(42);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 rgb = shade(L, random_unit(rng));
        for (int c = 0; c < 3; ++c) CHECK(std::abs(rgb[c] - 1.0) <= 1e-10);
    }
}

TEST_CASE("shading is zero for zero coefficients and linear in them") {
    Rng rng(11);
    Lighting zero;
    Lighting L1, L2;
    for (int c = 0; c < 3; ++c)
        for (int b = 0; b < kShCoeffs; ++b) {
            L1.gamma(c, b) = rng.uniform(-1.0, 1.0);
            L2.gamma(c, b) = rng.uniform(-1.0, 1.0);
        }
    Lighting sum;
    sum.gamma = L1.gamma + L2.gamma;
    for (int i = 0; i < 50; ++i) {
        const Vec3 n = random_unit(rng);
        const Vec3 z = shade(zero, n);
        CHECK(z[0] == 0.0);
        const Vec3 a = shade(L1, n);
        const Vec3 b = shade(L2, n);
        const Vec3 s = shade(sum, n);
        for (int c = 0; c < 3; ++c) CHECK(std::abs(s[c] - (a[c] + b[c])) <= 1e-12);
    }
}

TEST_CASE("non-unit normals are normalized with a warning count") {
    reset_sh_warnings();
    const auto Ha = sh_basis({0.0, 0.0, 2.0});
    const auto Hb = sh_basis({0.0, 0.0, 1.0});
    for (int b = 0; b < kShCoeffs; ++b) CHECK(Ha[b] == doctest::Approx(Hb[b]).epsilon(1e-14));
    CHECK(sh_warning_count() == 1);
    reset_sh_warnings();
    CHECK(sh_warning_count() == 0);
    CHECK_THROWS_AS(sh_basis({0.0, 0.0, 0.0}), NumericError);
}

TEST_CASE("basis gradient matches finite differences") {
    Rng rng(21);
    for (int i = 0; i < 10; ++i) {
        Vec3 n = random_unit(rng);
        // evaluate away from unit length to exercise the normalization chain
        n = {1.3 * n[0], 1.3 * n[1], 1.3 * n[2]};
        const auto J = sh_basis_gradient(n);
        const double h = 1e-6;
        for (int axis = 0; axis < 3; ++axis) {
            Vec3 np = n, nm = n;
            np[axis] += h;
            nm[axis] -= h;
            reset_sh_warnings();
            const auto Hp = sh_basis(np);
            const auto Hm = sh_basis(nm);
            for (int b = 0; b < kShCoeffs; ++b) {
                const double fd = (Hp[b] - Hm[b]) / (2.0 * h);
                CHECK(std::abs(J(b, axis) - fd) < 1e-6);
            }
        }
    }
    reset_sh_warnings();
}

TEST_CASE("rendering an octahedron under DC light reproduces the albedo") {
    JofParams model = octahedron_model(0.7, 40.0, {0.5, 0.25, 0.75});
    PoseParams pose;
    pose.distance = 2.5;
    pose.focal = 20.0;
    pose.principal = {16.0, 16.0};
    Projection proj = compose_projection(pose, 32, 32);
    Lighting L = Lighting::dc_white(1.0);

    RenderedFrame frame = render(model, tiny_codes(), proj, L, 32, 32, RenderConfig{});
    CHECK(frame.surface.hit_count() > 50);
    CHECK(frame.degenerate_normals == 0);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * 32 + x;
            if (frame.mask.at(x, y) == 1.0) {
                CHECK(frame.image.at(x, y, 0) == doctest::Approx(0.5).epsilon(1e-9));
                CHECK(frame.image.at(x, y, 1) == doctest::Approx(0.25).epsilon(1e-9));
                CHECK(frame.image.at(x, y, 2) == doctest::Approx(0.75).epsilon(1e-9));
                const Vec3& n = frame.normals[p];
                CHECK(std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]) ==
                      doctest::Approx(1.0).epsilon(1e-9));
                CHECK(frame.branch[p] == 0);
            } else {
                CHECK(frame.image.at(x, y, 0) == 0.0);
                CHECK(frame.branch[p] == -1);
            }
        }
}

TEST_CASE("octahedron face normals are the expected outward signs") {
    JofParams model = octahedron_model(0.7, 40.0, {0.5, 0.5, 0.5});
    PoseParams pose;
    pose.distance = 2.5;
    pose.focal = 30.0;
    pose.principal = {16.0, 16.0};
    Projection proj = compose_projection(pose, 32, 32);
    RenderedFrame frame =
        render(model, tiny_codes(), proj, Lighting::dc_white(1.0), 32, 32, RenderConfig{});
    const double inv = 1.0 / std::sqrt(3.0);
    int checked = 0;
    for (std::size_t p = 0; p < frame.surface.points.size(); ++p) {
        if (!frame.surface.points[p].hit) continue;
        const Vec3& x = frame.surface.points[p].x;
        if (std::abs(x[0]) < 0.05 || std::abs(x[1]) < 0.05 || std::abs(x[2]) < 0.05) continue;
        const Vec3& n = frame.normals[p];
        CHECK(n[0] == doctest::Approx(inv * (x[0] > 0 ? 1.0 : -1.0)).epsilon(1e-6));
        CHECK(n[1] == doctest::Approx(inv * (x[1] > 0 ? 1.0 : -1.0)).epsilon(1e-6));
        CHECK(n[2] == doctest::Approx(inv * (x[2] > 0 ? 1.0 : -1.0)).epsilon(1e-6));
        ++checked;
    }
    CHECK(checked > 10);
}

TEST_CASE("zero lighting blackens the foreground but keeps the mask") {
    JofParams model = octahedron_model(0.7, 40.0, {0.5, 0.5, 0.5});
    PoseParams pose;
    pose.distance = 2.5;
    pose.focal = 20.0;
    pose.principal = {12.0, 12.0};
    Projection proj = compose_projection(pose, 24, 24);
    RenderedFrame lit =
        render(model, tiny_codes(), proj, Lighting::dc_white(1.0), 24, 24, RenderConfig{});
    RenderedFrame dark = render(model, tiny_codes(), proj, Lighting{}, 24, 24, RenderConfig{});
    REQUIRE(lit.surface.hit_count() > 0);
    CHECK(lit.mask.data == dark.mask.data);
    for (std::size_t i = 0; i < dark.image.data.size(); ++i) CHECK(dark.image.data[i] == 0.0);
}

TEST_CASE("scaling the coefficients scales unclamped foreground values") {
    JofParams model = octahedron_model(0.7, 40.0, {0.6, 0.4, 0.5});
    PoseParams pose;
    pose.distance = 2.5;
    pose.focal = 20.0;
    pose.principal = {12.0, 12.0};
    Projection proj = compose_projection(pose, 24, 24);
    Lighting L = Lighting::dc_white(1.0);
    Lighting Ls;
    Ls.gamma = 0.6 * L.gamma;
    RenderedFrame a = render(model, tiny_codes(), proj, L, 24, 24, RenderConfig{});
    RenderedFrame b = render(model, tiny_codes(), proj, Ls, 24, 24, RenderConfig{});
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x)
            if (a.mask.at(x, y) == 1.0)
                for (int c = 0; c < 3; ++c)
                    CHECK(b.image.at(x, y, c) ==
                          doctest::Approx(0.6 * a.image.at(x, y, c)).epsilon(1e-9));
}

TEST_CASE("flat interior fields fall back to camera-facing normals") {
    // constant occupancy above tau: every bound-crossing ray hits immediately
    // with zero spatial gradient
    JofParams p = testmodels::flat_model(0.9);

    PoseParams pose;
    pose.distance = 2.5;
    pose.focal = 8.0;
    pose.principal = {8.0, 8.0};
    Projection proj = compose_projection(pose, 16, 16);
    RenderedFrame frame =
        render(p, tiny_codes(), proj, Lighting::dc_white(1.0), 16, 16, RenderConfig{});
    REQUIRE(frame.surface.hit_count() > 0);
    CHECK(frame.degenerate_normals == static_cast<int>(frame.surface.hit_count()));
    const Vec3 cam = proj.camera_center();
    for (std::size_t p2 = 0; p2 < frame.surface.points.size(); ++p2) {
        if (!frame.surface.points[p2].hit) continue;
        const Vec3& x = frame.surface.points[p2].x;
        Vec3 toward = {cam[0] - x[0], cam[1] - x[1], cam[2] - x[2]};
        const double n = std::sqrt(toward[0] * toward[0] + toward[1] * toward[1] +
                                   toward[2] * toward[2]);
        for (int c = 0; c < 3; ++c)
            CHECK(frame.normals[p2][c] == doctest::Approx(toward[c] / n).epsilon(1e-9));
    }
}

TEST_CASE("mean foreground intensity gradient in gamma matches finite differences") {
    JofParams model = octahedron_model(0.65, 35.0, {0.6, 0.5, 0.4});
    PoseParams pose;
    pose.azimuth = 0.5;
    pose.elevation = 0.3;
    pose.distance = 2.4;
    pose.focal = 10.0;
    pose.principal = {8.0, 8.0};
    Projection proj = compose_projection(pose, 16, 16);
    LatentCodes codes = tiny_codes();

    Lighting L = Lighting::dc_white(0.8);
    Rng rng(5);
    for (int b = 1; b < kShCoeffs; ++b)
        for (int c = 0; c < 3; ++c) L.gamma(c, b) = rng.uniform(-0.15, 0.15);

    auto mean_fg = [&](const Lighting& light) {
        RenderedFrame f = render(model, codes, proj, light, 16, 16, RenderConfig{});
        double sum = 0.0;
        std::size_t cnt = 0;
        for (std::size_t p = 0; p < f.surface.points.size(); ++p) {
            if (!f.surface.points[p].hit) continue;
            for (int c = 0; c < 3; ++c) sum += f.image.data[3 * p + c];
            cnt += 3;
        }
        REQUIRE(cnt > 0);
        return sum / static_cast<double>(cnt);
    };

    // analytic gradient from one rendered frame
    RenderedFrame f = render(model, codes, proj, L, 16, 16, RenderConfig{});
    Matrix grad = Matrix::Zero(3, kShCoeffs);
    std::size_t cnt = 0;
    for (std::size_t p = 0; p < f.surface.points.size(); ++p) {
        if (!f.surface.points[p].hit) continue;
        cnt += 3;
        const auto H = sh_basis(f.normals[p]);
        const Vec3 s = shade(L, f.normals[p]);
        for (int c = 0; c < 3; ++c) {
            const double raw = f.albedo[p][c] * s[c];
            if (raw <= 0.0 || raw >= 1.0) continue; // clamp cuts the gradient
            for (int b = 0; b < kShCoeffs; ++b) grad(c, b) += f.albedo[p][c] * H[b];
        }
    }
    grad /= static_cast<double>(cnt);

    const double h = 1e-5;
    for (int c = 0; c < 3; ++c)
        for (int b = 0; b < kShCoeffs; b += 2) {
            Lighting Lp = L, Lm = L;
            Lp.gamma(c, b) += h;
            Lm.gamma(c, b) -= h;
            const double fd = (mean_fg(Lp) - mean_fg(Lm)) / (2.0 * h);
            const double an = grad(c, b);
            if (std::abs(an) > 1e-6)
                CHECK(std::abs(an - fd) / std::max(std::abs(an), std::abs(fd)) < 1e-3);
        }
}
