#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <jof/losses.hpp>
#include <jof/metrics.hpp>

#include <Eigen/Eigenvalues>

#include <cmath>

#include "models.hpp"

using namespace jof;
using namespace jof::testmodels;

namespace {

ImageGray disc_mask(int w, int h, double radius) {
    ImageGray m = ImageGray::zeros(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dx = x + 0.5 - w / 2.0, dy = y + 0.5 - h / 2.0;
            m.at(x, y) = dx * dx + dy * dy <= radius * radius ? 1.0 : 0.0;
        }
    return m;
}

double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(std::abs(want), 1e-6);
}

// The silhouette objective with the per-pixel (u, v, depth) triples frozen:
// the differentiation convention of silhouette_loss, so central differences
// of this function are comparable with its analytic gradients. `skip` marks
// pixels inside the kink band at the base point, which carry no gradient.
double silhouette_at_fixed_depths(const JofParams& params, const LatentCodes& codes,
                                  const PoseParams& pose, const ImageGray& M,
                                  const std::vector<Vec3>& uvd,
                                  const std::vector<char>* skip = nullptr) {
    const Projection proj = compose_projection(pose, M.width, M.height);
    double sum = 0.0;
    for (int y = 0; y < M.height; ++y)
        for (int x = 0; x < M.width; ++x) {
            const std::size_t j = static_cast<std::size_t>(y) * M.width + x;
            if (skip && (*skip)[j]) continue;
            const Vec3 p = proj.backproject(uvd[j][0], uvd[j][1], uvd[j][2]);
            const double target = M.at(x, y) > 0.5 ? params.tau : 0.0;
            sum += std::abs(occupancy(params, codes, p) - target);
        }
    return sum / static_cast<double>(M.width * M.height);
}

std::vector<char> kink_band_pixels(const JofParams& params, const LatentCodes& codes,
                                   const PoseParams& pose, const ImageGray& M,
                                   const std::vector<Vec3>& uvd) {
    const Projection proj = compose_projection(pose, M.width, M.height);
    std::vector<char> skip(uvd.size(), 0);
    for (int y = 0; y < M.height; ++y)
        for (int x = 0; x < M.width; ++x) {
            const std::size_t j = static_cast<std::size_t>(y) * M.width + x;
            const Vec3 p = proj.backproject(uvd[j][0], uvd[j][1], uvd[j][2]);
            const double target = M.at(x, y) > 0.5 ? params.tau : 0.0;
            skip[j] = std::abs(occupancy(params, codes, p) - target) <= kSilhouetteKinkBand;
        }
    return skip;
}

struct FrozenPixels {
    std::vector<Vec3> uvd;
    std::vector<char> hit;
};

FrozenPixels pixel_uvd(const JofParams& params, const LatentCodes& codes, const PoseParams& pose,
                       int w, int h, const SearchConfig& search) {
    const Projection proj = compose_projection(pose, w, h);
    BatchFieldFn field = [&](const std::vector<Vec3>& xs) {
        ShapeBatchEval ev = shape_forward_batch(params, codes, xs);
        return ev.o;
    };
    const SurfaceMap map = surface_map_batch(field, proj, w, h, search);
    FrozenPixels out;
    out.uvd.reserve(map.points.size());
    for (const SurfacePoint& sp : map.points) {
        out.uvd.push_back(proj.project(sp.x));
        out.hit.push_back(sp.hit);
    }
    return out;
}

} // namespace

TEST_CASE("photometric loss basics") {
    ImageRGB I = ImageRGB::zeros(4, 4);
    ImageRGB I_hat = ImageRGB::zeros(4, 4);
    ImageGray M = ImageGray::zeros(4, 4);
    Rng rng(41);
    for (double& v : I.data) v = rng.uniform();
    I_hat.data = I.data;
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 2; ++x) M.at(x, y) = 1.0;

    CHECK(photometric_loss(I_hat, I, M) == 0.0);

    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) I_hat.at(x, y, c) = I.at(x, y, c) + 0.1;
    CHECK(photometric_loss(I_hat, I, M) == doctest::Approx(0.1).epsilon(1e-12));

    // half the foreground differs by 0.2, the rest matches
    I_hat.data = I.data;
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x)
            for (int c = 0; c < 3; ++c) I_hat.at(x, y, c) = I.at(x, y, c) + 0.2;
    CHECK(photometric_loss(I_hat, I, M) == doctest::Approx(0.1).epsilon(1e-12));

    reset_loss_warnings();
    ImageGray empty = ImageGray::zeros(4, 4);
    CHECK(photometric_loss(I_hat, I, empty) == 0.0);
    CHECK(loss_warning_count() == 1);
}

TEST_CASE("photometric gradient matches finite differences") {
    Rng rng(42);
    ImageRGB I = ImageRGB::zeros(3, 3);
    ImageRGB I_hat = ImageRGB::zeros(3, 3);
    ImageGray M = ImageGray::zeros(3, 3);
    for (double& v : I.data) v = rng.uniform();
    for (double& v : I_hat.data) v = rng.uniform();
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) M.at(x, y) = rng.uniform() < 0.6 ? 1.0 : 0.0;
    M.at(1, 1) = 1.0;

    const ImageRGB g = photometric_loss_grad(I_hat, I, M);
    const double h = 1e-6;
    for (std::size_t i = 0; i < I_hat.data.size(); i += 5) {
        ImageRGB plus = I_hat, minus = I_hat;
        plus.data[i] += h;
        minus.data[i] -= h;
        const double fd =
            (photometric_loss(plus, I, M) - photometric_loss(minus, I, M)) / (2.0 * h);
        CHECK(std::abs(g.data[i] - fd) < 1e-9);
    }
}

TEST_CASE("silhouette loss on a constant field is exact") {
    const JofParams params = flat_model(0.3);
    const LatentCodes codes = tiny_codes();
    PoseParams pose;
    pose.distance = 2.4;
    pose.principal = {4.0, 4.0};
    ImageGray M = disc_mask(8, 8, 2.2);
    std::size_t n_fg = 0;
    for (double v : M.data) n_fg += v > 0.5 ? 1 : 0;
    REQUIRE(n_fg > 0);

    SearchConfig search;
    const SilhouetteEval ev = silhouette_loss(params, codes, pose, M, search);
    // every pixel sees occupancy 0.3: foreground |0.3 - 0.5|, background |0.3|
    const double expect =
        (0.2 * static_cast<double>(n_fg) + 0.3 * static_cast<double>(64 - n_fg)) / 64.0;
    CHECK(ev.loss == doctest::Approx(expect).epsilon(1e-12));
    CHECK(ev.foreground_pixels == n_fg);
}

TEST_CASE("silhouette loss is near zero for an exact fit and grows with azimuth offset") {
    const JofParams params = octahedron_model(0.7, 200.0, {0.5, 0.5, 0.5});
    const LatentCodes codes = tiny_codes();
    PoseParams pose;
    pose.azimuth = 0.3;
    pose.elevation = 0.25;
    pose.distance = 2.4;
    pose.focal = 128.0;
    pose.principal = {64.0, 64.0};

    RenderConfig rc;
    const Projection proj = compose_projection(pose, 128, 128);
    const RenderedFrame frame =
        render(params, codes, proj, Lighting::dc_white(1.0), 128, 128, rc);
    REQUIRE(frame.surface.hit_count() > 200);

    SearchConfig search;
    std::vector<double> losses;
    for (int shift = -10; shift <= 10; ++shift) {
        PoseParams p = pose;
        p.azimuth += shift * M_PI / 180.0;
        losses.push_back(
            silhouette_loss(params, codes, p, frame.mask, search, false, false).loss);
    }
    CHECK(losses[10] < 0.01);
    for (int i = 0; i < 10; ++i) {
        CHECK(losses[i] > losses[i + 1]);         // approaching from -10 degrees
        CHECK(losses[20 - i] > losses[20 - i - 1]); // and from +10 degrees
    }

    PoseParams off = pose;
    off.azimuth += 10.0 * M_PI / 180.0;
    const SilhouetteEval ev = silhouette_loss(params, codes, off, frame.mask, search);
    CHECK(std::abs(ev.d_pose[0]) > 1e-6);
}

TEST_CASE("silhouette gradients match finite differences at fixed pixel depths") {
    Rng rng(2024);
    const JofParams params = JofParams::make(3, 2, 3, 3, 16, 2, rng);
    LatentCodes codes = LatentCodes::random(2, 3, 3, 0.6, rng);
    PoseParams pose;
    pose.azimuth = 0.4;
    pose.elevation = 0.3;
    pose.distance = 2.2;
    pose.focal = 8.0;
    pose.principal = {4.0, 4.0};
    ImageGray M = disc_mask(8, 8, 2.5);

    SearchConfig search;
    const SilhouetteEval ev = silhouette_loss(params, codes, pose, M, search);
    const FrozenPixels fp = pixel_uvd(params, codes, pose, 8, 8, search);
    CHECK(silhouette_at_fixed_depths(params, codes, pose, M, fp.uvd) ==
          doctest::Approx(ev.loss).epsilon(1e-9));
    const std::vector<char> skip = kink_band_pixels(params, codes, pose, M, fp.uvd);

    // the pose path additionally drops pixels where the silhouettes agree
    std::vector<char> pose_skip = skip;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            const std::size_t j = static_cast<std::size_t>(y) * 8 + x;
            if ((M.at(x, y) > 0.5) == static_cast<bool>(fp.hit[j])) pose_skip[j] = 1;
        }

    const double h = 1e-4;
    for (int k = 0; k < 3; ++k) {
        PoseParams plus = pose, minus = pose;
        (k == 0 ? plus.azimuth : k == 1 ? plus.elevation : plus.distance) += h;
        (k == 0 ? minus.azimuth : k == 1 ? minus.elevation : minus.distance) -= h;
        const double fd = (silhouette_at_fixed_depths(params, codes, plus, M, fp.uvd, &pose_skip) -
                           silhouette_at_fixed_depths(params, codes, minus, M, fp.uvd, &pose_skip)) /
                          (2.0 * h);
        if (std::abs(ev.d_pose[k]) > 1e-6) CHECK(rel_err(fd, ev.d_pose[k]) < 1e-3);
    }
    for (int k = 0; k < 3; ++k) {
        LatentCodes plus = codes, minus = codes;
        plus.f_S[k] += h;
        minus.f_S[k] -= h;
        const double fd = (silhouette_at_fixed_depths(params, plus, pose, M, fp.uvd, &skip) -
                           silhouette_at_fixed_depths(params, minus, pose, M, fp.uvd, &skip)) /
                          (2.0 * h);
        if (std::abs(ev.d_fS[k]) > 1e-6) CHECK(rel_err(fd, ev.d_fS[k]) < 1e-3);
    }
    for (int k = 0; k < 2; ++k) {
        LatentCodes plus = codes, minus = codes;
        plus.f_C[k] += h;
        minus.f_C[k] -= h;
        const double fd = (silhouette_at_fixed_depths(params, plus, pose, M, fp.uvd, &skip) -
                           silhouette_at_fixed_depths(params, minus, pose, M, fp.uvd, &skip)) /
                          (2.0 * h);
        if (std::abs(ev.d_fC[k]) > 1e-6) CHECK(rel_err(fd, ev.d_fC[k]) < 1e-3);
    }
}

TEST_CASE("boundary points straddle the branch split") {
    const JofParams params = split_model(0.7, 60.0, 20.0);
    const LatentCodes codes = tiny_codes();
    const std::vector<Vec3> pts = boundary_points(params, codes, 64, 0.02);
    CHECK(pts.size() >= 8);
    CHECK(pts.size() <= 64);
    for (const Vec3& p : pts) CHECK(std::abs(p[2]) <= 0.02 + 1e-12);
}

TEST_CASE("boundary points require two active branches") {
    const JofParams params = octahedron_model(0.7, 60.0, {0.5, 0.5, 0.5});
    CHECK_THROWS_AS(boundary_points(params, tiny_codes(), 64, 0.02), NumericError);
    CHECK_THROWS_AS(boundary_points(params, tiny_codes(), 0, 0.02), UsageError);
}

TEST_CASE("feature sampling identities") {
    FeatureMap constant = FeatureMap::zeros(4, 4, 2);
    for (double& v : constant.data) v = 3.0;
    FeatureMap fine = FeatureMap::zeros(8, 8, 1);
    Rng rng(7);
    for (double& v : fine.data) v = rng.uniform();

    Matrix U(3, 2);
    U << 8.0, 8.0, 0.0, 0.0, 63.9, 63.9; // center, corner, clamped far edge
    const Matrix F = sample_local_features({constant, fine}, U, 64, 64);
    REQUIRE(F.rows() == 3);
    REQUIRE(F.cols() == 3);
    for (Eigen::Index i = 0; i < 3; ++i) {
        CHECK(F(i, 0) == 3.0);
        CHECK(F(i, 1) == 3.0);
    }
    // image (8, 8) -> fine-map coord (1, 1), the corner shared by four cells
    CHECK(F(0, 2) == doctest::Approx(0.25 * (fine.at(0, 0, 0) + fine.at(0, 1, 0) +
                                             fine.at(1, 0, 0) + fine.at(1, 1, 0)))
                         .epsilon(1e-12));
    CHECK(F(1, 2) == fine.at(0, 0, 0)); // clamped corner
    CHECK(F(2, 2) == fine.at(7, 7, 0));

    // exact cell center: image coords (12, 20) -> map (1.5, 2.5) -> cell (1, 2)
    Matrix U2(1, 2);
    U2 << 12.0, 20.0;
    const Matrix F2 = sample_local_features({fine}, U2, 64, 64);
    CHECK(F2(0, 0) == doctest::Approx(fine.at(2, 1, 0)).epsilon(1e-15));

    // midpoint between two horizontal neighbors averages them
    FeatureMap two = FeatureMap::zeros(1, 2, 1);
    two.at(0, 0, 0) = 0.0;
    two.at(0, 1, 0) = 1.0;
    Matrix U3(1, 2);
    U3 << 1.0, 0.5;
    const Matrix F3 = sample_local_features({two}, U3, 2, 1);
    CHECK(F3(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("feature sampling backward scatters bilinear weights") {
    Rng rng(11);
    std::vector<FeatureMap> maps;
    maps.push_back(FeatureMap::zeros(3, 4, 2));
    maps.push_back(FeatureMap::zeros(5, 5, 1));
    for (FeatureMap& m : maps)
        for (double& v : m.data) v = rng.normal();

    Matrix U(4, 2);
    for (Eigen::Index i = 0; i < 4; ++i) {
        U(i, 0) = rng.uniform(0.0, 16.0);
        U(i, 1) = rng.uniform(0.0, 16.0);
    }
    FeatureSampleTape tape;
    const Matrix F = sample_local_features(maps, U, 16, 16, &tape);
    Matrix d_F(4, 3);
    for (Eigen::Index i = 0; i < d_F.size(); ++i) d_F.data()[i] = rng.normal();

    const std::vector<FeatureMap> d_maps = sample_local_features_backward(tape, d_F);
    REQUIRE(d_maps.size() == 2);

    // the map is linear in its values, so finite differences are exact
    const double h = 0.5;
    for (std::size_t mi = 0; mi < maps.size(); ++mi)
        for (std::size_t k = 0; k < maps[mi].data.size(); k += 3) {
            std::vector<FeatureMap> plus = maps, minus = maps;
            plus[mi].data[k] += h;
            minus[mi].data[k] -= h;
            const Matrix Fp = sample_local_features(plus, U, 16, 16);
            const Matrix Fm = sample_local_features(minus, U, 16, 16);
            const double fd = ((Fp - Fm).cwiseProduct(d_F)).sum() / (2.0 * h);
            CHECK(std::abs(d_maps[mi].data[k] - fd) < 1e-10);
        }
}

TEST_CASE("principal eigenvector of rank-one features is the axis") {
    Matrix F = Matrix::Zero(5, 4);
    F(0, 0) = 1.0;
    F(1, 0) = -2.0;
    F(2, 0) = 0.5;
    F(3, 0) = 3.0;
    F(4, 0) = -1.5;
    const Vector v = principal_eigenvector(F);
    CHECK(v[0] == doctest::Approx(1.0).epsilon(1e-12));
    for (int k = 1; k < 4; ++k) CHECK(v[k] == 0.0);
}

TEST_CASE("power iteration matches the dense eigensolver") {
    for (int seed = 0; seed < 50; ++seed) {
        Rng rng(900 + seed);
        Matrix R(30, 10);
        for (Eigen::Index i = 0; i < R.size(); ++i) R.data()[i] = rng.normal();
        // rows (+r_i, -r_i): centered Gram is exactly 2 R^T R
        Matrix F(60, 10);
        F.topRows(30) = R;
        F.bottomRows(30) = -R;

        const Vector v = principal_eigenvector(F);
        const Matrix M = R.transpose() * R;
        Eigen::SelfAdjointEigenSolver<Matrix> es(M);
        const Vector dense = es.eigenvectors().col(9);
        CHECK(std::abs(v.dot(dense)) > 1.0 - 1e-6);
    }
}

TEST_CASE("duplicated feature rows leave the eigenvector unchanged") {
    Rng rng(17);
    Matrix F(6, 5);
    for (Eigen::Index i = 0; i < F.size(); ++i) F.data()[i] = rng.normal();
    Matrix F2(12, 5);
    F2.topRows(6) = F;
    F2.bottomRows(6) = F;
    const Vector a = principal_eigenvector(F);
    const Vector b = principal_eigenvector(F2);
    for (Eigen::Index k = 0; k < 5; ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));
}

TEST_CASE("eigenvector canonical sign and degenerate covariance") {
    Matrix F = Matrix::Zero(4, 3);
    F(0, 1) = -5.0;
    F(1, 1) = 5.0;
    F(2, 1) = -1.0;
    F(3, 1) = 1.0;
    const Vector v = principal_eigenvector(F);
    CHECK(v[1] == doctest::Approx(1.0).epsilon(1e-12)); // canonical +, not -e1

    Matrix same(3, 4);
    same.setConstant(0.1);
    CHECK_THROWS_AS(principal_eigenvector(same), NumericError);
    CHECK_THROWS_AS(principal_eigenvector(Matrix::Zero(1, 4)), UsageError);
}

TEST_CASE("eigenvector backward matches finite differences") {
    Rng rng(23);
    Matrix F(6, 4);
    for (Eigen::Index i = 0; i < F.size(); ++i) F.data()[i] = rng.normal();
    Vector w(4);
    for (int k = 0; k < 4; ++k) w[k] = rng.normal();

    EigenEval ev = principal_eigenvector_eval(F);
    const Matrix g = principal_eigenvector_backward(ev, w);

    const double h = 1e-5;
    for (Eigen::Index i = 0; i < F.size(); ++i) {
        Matrix plus = F, minus = F;
        plus.data()[i] += h;
        minus.data()[i] -= h;
        const double fd =
            (w.dot(principal_eigenvector(plus)) - w.dot(principal_eigenvector(minus))) / (2.0 * h);
        if (std::abs(g.data()[i]) > 1e-6) CHECK(rel_err(fd, g.data()[i]) < 1e-3);
    }
}

TEST_CASE("feature consistency loss basics") {
    Vector e0 = Vector::Zero(2), e1 = Vector::Zero(2);
    e0[0] = 1.0;
    e1[1] = 1.0;
    CHECK(feature_consistency_loss({e0, e0, e0}) == 0.0);
    CHECK(feature_consistency_loss({e0, e1}) == doctest::Approx(2.0).epsilon(1e-15));

    reset_loss_warnings();
    CHECK(feature_consistency_loss({e0}) == 0.0);
    CHECK(loss_warning_count() == 1);

    // ordering invariance
    Rng rng(5);
    std::vector<Vector> vs;
    for (int i = 0; i < 4; ++i) {
        Vector v(3);
        for (int k = 0; k < 3; ++k) v[k] = rng.normal();
        vs.push_back(v);
    }
    const double base = feature_consistency_loss(vs);
    std::swap(vs[0], vs[3]);
    std::swap(vs[1], vs[2]);
    CHECK(feature_consistency_loss(vs) == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("feature consistency is exactly invariant to per-image feature sign flips") {
    Rng rng(31);
    Matrix F1(8, 5), F2(8, 5);
    for (Eigen::Index i = 0; i < F1.size(); ++i) F1.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < F2.size(); ++i) F2.data()[i] = rng.normal();

    const Vector v1 = principal_eigenvector(F1);
    const Vector v2 = principal_eigenvector(F2);
    const Vector v1f = principal_eigenvector(Matrix(-F1));
    const Vector v2f = principal_eigenvector(Matrix(-F2));
    CHECK(feature_consistency_loss({v1, v2}) == feature_consistency_loss({v1f, v2f}));
    for (Eigen::Index k = 0; k < 5; ++k) CHECK(v1[k] == v1f[k]);
}

TEST_CASE("feature consistency gradient matches finite differences") {
    Rng rng(37);
    std::vector<Vector> vs;
    for (int i = 0; i < 3; ++i) {
        Vector v(4);
        for (int k = 0; k < 4; ++k) v[k] = rng.normal();
        vs.push_back(v);
    }
    const std::vector<Vector> grads = feature_consistency_grad(vs);
    const double h = 1e-6;
    for (std::size_t i = 0; i < vs.size(); ++i)
        for (int k = 0; k < 4; ++k) {
            std::vector<Vector> plus = vs, minus = vs;
            plus[i][k] += h;
            minus[i][k] -= h;
            const double fd =
                (feature_consistency_loss(plus) - feature_consistency_loss(minus)) / (2.0 * h);
            CHECK(std::abs(grads[i][k] - fd) < 1e-8);
        }
}

TEST_CASE("albedo constancy loss values") {
    // 3x3 all-foreground mask: only the center has a full 4-neighborhood
    ImageGray M = ImageGray::zeros(3, 3);
    for (double& v : M.data) v = 1.0;
    ImageRGB I = ImageRGB::zeros(3, 3);
    for (double& v : I.data) v = 0.6;

    ImageRGB A = ImageRGB::zeros(3, 3);
    for (double& v : A.data) v = 0.25;
    CHECK(albedo_constancy_loss(A, I, M, 15.0, 0.8) ==
          doctest::Approx(std::pow(1e-12, 0.4)).epsilon(1e-9));

    // one neighbor differs: pair weight 1 (equal chromaticity), 4 pairs counted
    A.at(2, 1, 0) = 0.45;
    const double diff = std::pow(0.2 * 0.2 + 1e-12, 0.4);
    const double base = std::pow(1e-12, 0.4);
    CHECK(albedo_constancy_loss(A, I, M, 15.0, 0.8) ==
          doctest::Approx((diff + 3.0 * base) / 4.0).epsilon(1e-9));

    // chroma difference of norm 0.1 scales the weight to exp(-1.5)
    ImageRGB I2 = I;
    const double theta = 2.0 * std::asin(0.05);
    for (int c = 0; c < 3; ++c) {
        I2.at(1, 1, c) = c == 0 ? 1.0 : 0.0;
        I2.at(2, 1, c) = c == 0 ? std::cos(theta) : (c == 1 ? std::sin(theta) : 0.0);
    }
    // the three unchanged-albedo pairs contribute at most base * 1, negligible
    // against the 0.2-difference pair they accompany
    const double with_chroma = albedo_constancy_loss(A, I2, M, 15.0, 0.8);
    const double omega = with_chroma * 4.0 / diff;
    CHECK(omega == doctest::Approx(std::exp(-1.5)).epsilon(1e-3));
    CHECK(std::exp(-1.5) == doctest::Approx(0.22313).epsilon(1e-4));
}

TEST_CASE("albedo constancy gradient matches finite differences") {
    Rng rng(43);
    ImageRGB A = ImageRGB::zeros(4, 4), I = ImageRGB::zeros(4, 4);
    ImageGray M = ImageGray::zeros(4, 4);
    for (double& v : A.data) v = rng.uniform(0.1, 0.9);
    for (double& v : I.data) v = rng.uniform(0.1, 0.9);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) M.at(x, y) = (x < 3 || y < 2) ? 1.0 : 0.0;

    const ImageRGB g = albedo_constancy_grad(A, I, M, 15.0, 0.8);
    const double h = 1e-5;
    double checked = 0;
    for (std::size_t i = 0; i < A.data.size(); i += 2) {
        ImageRGB plus = A, minus = A;
        plus.data[i] += h;
        minus.data[i] -= h;
        const double fd = (albedo_constancy_loss(plus, I, M, 15.0, 0.8) -
                           albedo_constancy_loss(minus, I, M, 15.0, 0.8)) /
                          (2.0 * h);
        if (std::abs(g.data[i]) > 1e-6) {
            CHECK(rel_err(fd, g.data[i]) < 1e-3);
            ++checked;
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("white shading loss values and gradient") {
    std::vector<Vec3> ones(5, Vec3{1.0, 1.0, 1.0});
    CHECK(white_shading_loss(ones, 1.0) == 0.0);

    std::vector<Vec3> red = {{0.8, 1.0, 1.0}, {0.8, 1.0, 1.0}};
    CHECK(white_shading_loss(red, 1.0) == doctest::Approx(0.2).epsilon(1e-12));

    std::vector<Vec3> mixed = {{0.9, 1.2, 1.0}, {0.9, 1.0, 1.0}};
    CHECK(white_shading_loss(mixed, 1.0) == doctest::Approx(0.2).epsilon(1e-12));

    reset_loss_warnings();
    CHECK(white_shading_loss({}, 1.0) == 0.0);
    CHECK(loss_warning_count() == 1);

    const std::vector<Vec3> grads = white_shading_grad(mixed, 1.0);
    const double h = 1e-6;
    for (std::size_t i = 0; i < mixed.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            std::vector<Vec3> plus = mixed, minus = mixed;
            plus[i][c] += h;
            minus[i][c] -= h;
            const double fd =
                (white_shading_loss(plus, 1.0) - white_shading_loss(minus, 1.0)) / (2.0 * h);
            CHECK(std::abs(grads[i][c] - fd) < 1e-9);
        }
}

TEST_CASE("total loss weighting") {
    LossWeights w;
    SelfSupervisedTerms zero;
    CHECK(total_self_supervised_loss(zero, w).total == 0.0);

    SelfSupervisedTerms only_img;
    only_img.img = 0.37;
    CHECK(total_self_supervised_loss(only_img, w).total == 0.37);

    SelfSupervisedTerms t;
    t.img = 0.2;
    t.sil = 0.05;
    t.fea = 1.4;
    t.alb = 0.3;
    t.bws = 0.7;
    w.lambda1 = 0.5;
    w.lambda2 = 0.01;
    w.lambda3 = 2.0;
    const LossBreakdown b = total_self_supervised_loss(t, w);
    CHECK(b.total == doctest::Approx(0.2 + 0.5 * 0.05 + 0.01 * 1.4 + 2.0 * (0.3 + 0.7))
                         .epsilon(1e-12));
    CHECK(b.fea == 1.4);

    LossWeights bad;
    bad.lambda1 = -1.0;
    CHECK_THROWS_AS(total_self_supervised_loss(t, bad), UsageError);

    const std::string row = loss_csv_row(12, b);
    CHECK(row.substr(0, 3) == "12,");
    CHECK(loss_csv_header() == "step,total,img,sil,fea,alb,bws");
}

TEST_CASE("decoder pretraining loss matches hand-computed values") {
    const JofParams params = flat_model(0.6);
    const LatentCodes codes = tiny_codes();
    Classifier cls;
    cls.W = Matrix::Zero(3, 1);
    cls.b = Vector::Zero(3);

    // single interior point: occupancy error (0.6-1)^2, albedo exact, uniform class posterior
    const DecoderPretrainEval ev = decoder_pretrain_loss(
        params, codes, {{0.1, 0.2, -0.1}}, {1.0}, {{0.5, 0.5, 0.5}}, 1, cls, true);
    CHECK(ev.loss_S == doctest::Approx(0.16).epsilon(1e-9));
    CHECK(ev.loss_A == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(ev.loss_C == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(ev.loss == doctest::Approx(0.16 + std::log(3.0)).epsilon(1e-9));

    // exterior-only samples leave the albedo term empty
    reset_loss_warnings();
    const DecoderPretrainEval ext = decoder_pretrain_loss(
        params, codes, {{0.1, 0.2, -0.1}}, {0.0}, {{0.5, 0.5, 0.5}}, 0, cls, false);
    CHECK(ext.loss_A == 0.0);
    CHECK(loss_warning_count() == 1);
    CHECK(ext.loss_S == doctest::Approx(0.36).epsilon(1e-9));

    CHECK_THROWS_AS(decoder_pretrain_loss(params, codes, {}, {}, {}, 0, cls, false), UsageError);
    CHECK_THROWS_AS(decoder_pretrain_loss(params, codes, {{0, 0, 0}}, {1.0}, {{0, 0, 0}}, 7, cls,
                                          false),
                    UsageError);
}

TEST_CASE("decoder pretraining gradients match finite differences") {
    Rng rng(71);
    const JofParams params = JofParams::make(3, 2, 3, 3, 12, 2, rng);
    const LatentCodes codes = LatentCodes::random(2, 3, 3, 0.5, rng);
    Classifier cls = Classifier::make(3, 2, rng);

    std::vector<Vec3> x;
    std::vector<double> o;
    std::vector<Vec3> rgb;
    Rng prng(72);
    for (int i = 0; i < 6; ++i) {
        x.push_back({prng.uniform(-0.6, 0.6), prng.uniform(-0.6, 0.6), prng.uniform(-0.6, 0.6)});
        o.push_back(i % 2 == 0 ? 1.0 : 0.0);
        rgb.push_back({prng.uniform(), prng.uniform(), prng.uniform()});
    }

    auto loss_at = [&](const LatentCodes& c, const JofParams& p, const Classifier& cl) {
        return decoder_pretrain_loss(p, c, x, o, rgb, 1, cl, false).loss;
    };
    const DecoderPretrainEval ev = decoder_pretrain_loss(params, codes, x, o, rgb, 1, cls, true);

    const double h = 1e-4;
    auto check_entry = [&](double got, double fd) {
        if (std::abs(got) > 1e-6) CHECK(rel_err(fd, got) < 1e-3);
    };
    for (int k = 0; k < 2; ++k) {
        LatentCodes plus = codes, minus = codes;
        plus.f_C[k] += h;
        minus.f_C[k] -= h;
        check_entry(ev.d_fC[k], (loss_at(plus, params, cls) - loss_at(minus, params, cls)) / (2 * h));
    }
    for (int k = 0; k < 3; ++k) {
        LatentCodes plus = codes, minus = codes;
        plus.f_S[k] += h;
        minus.f_S[k] -= h;
        check_entry(ev.d_fS[k], (loss_at(plus, params, cls) - loss_at(minus, params, cls)) / (2 * h));
        LatentCodes pa = codes, ma = codes;
        pa.f_A[k] += h;
        ma.f_A[k] -= h;
        check_entry(ev.d_fA[k], (loss_at(pa, params, cls) - loss_at(ma, params, cls)) / (2 * h));
    }
    // one weight entry per network and the classifier
    {
        JofParams plus = params, minus = params;
        plus.shape_net.layers[0].weight(1, 2) += h;
        minus.shape_net.layers[0].weight(1, 2) -= h;
        check_entry(ev.d_shape.weight[0](1, 2),
                    (loss_at(codes, plus, cls) - loss_at(codes, minus, cls)) / (2 * h));
    }
    {
        JofParams plus = params, minus = params;
        plus.albedo_net.layers[0].weight(2, 3) += h;
        minus.albedo_net.layers[0].weight(2, 3) -= h;
        check_entry(ev.d_albedo.weight[0](2, 3),
                    (loss_at(codes, plus, cls) - loss_at(codes, minus, cls)) / (2 * h));
    }
    {
        Classifier plus = cls, minus = cls;
        plus.W(2, 1) += h;
        minus.W(2, 1) -= h;
        check_entry(ev.d_classifier.d_W(2, 1),
                    (loss_at(codes, params, plus) - loss_at(codes, params, minus)) / (2 * h));
        Classifier pb = cls, mb = cls;
        pb.b[0] += h;
        mb.b[0] -= h;
        check_entry(ev.d_classifier.d_b[0],
                    (loss_at(codes, params, pb) - loss_at(codes, params, mb)) / (2 * h));
    }
}

TEST_CASE("encoder pretraining loss values and gradients") {
    LatentCodes target = LatentCodes::zeros(2, 3, 3);
    LatentCodes pred = target;
    const Vec3 pose_t = {0.4, 0.2, 2.5};
    LossWeights w;

    const EncoderPretrainEval zero = encoder_pretrain_loss(pred, pose_t, target, pose_t, 0.0, w);
    CHECK(zero.loss == 0.0);

    pred.f_S[1] = 0.3;
    w.lambda_S = 2.0;
    const EncoderPretrainEval one = encoder_pretrain_loss(pred, pose_t, target, pose_t, 0.0, w);
    CHECK(one.loss == doctest::Approx(2.0 * 0.09).epsilon(1e-12));
    CHECK(one.d_fS[1] == doctest::Approx(2.0 * 2.0 * 0.3).epsilon(1e-12));

    // fixed micro-batch recomputed by hand
    Rng rng(91);
    LatentCodes p2 = LatentCodes::random(2, 3, 3, 0.7, rng);
    LatentCodes t2 = LatentCodes::random(2, 3, 3, 0.7, rng);
    const Vec3 pose_p = {0.1, -0.2, 2.0};
    LossWeights w2;
    w2.lambda_C = 0.5;
    w2.lambda_A = 3.0;
    w2.lambda_P = 1.5;
    const double img = 0.12345;
    const EncoderPretrainEval ev = encoder_pretrain_loss(p2, pose_p, t2, pose_t, img, w2);
    double hand = img;
    hand += 0.5 * (p2.f_C - t2.f_C).squaredNorm();
    hand += 1.0 * (p2.f_S - t2.f_S).squaredNorm();
    hand += 3.0 * (p2.f_A - t2.f_A).squaredNorm();
    for (int k = 0; k < 3; ++k) hand += 1.5 * (pose_p[k] - pose_t[k]) * (pose_p[k] - pose_t[k]);
    CHECK(ev.loss == doctest::Approx(hand).epsilon(1e-12));
    for (int k = 0; k < 3; ++k)
        CHECK(ev.d_pose[k] ==
              doctest::Approx(2.0 * 1.5 * (pose_p[k] - pose_t[k])).epsilon(1e-12));
}
