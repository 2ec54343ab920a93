#include <jof/shading.hpp>

#include <atomic>
#include <cmath>
#include <fstream>

namespace jof {

namespace {

std::atomic<std::uint64_t> g_sh_warnings{0};

constexpr double kY00 = 0.28209479177387814;  // 1/(2 sqrt(pi))
constexpr double kC1 = 0.4886025119029199;    // sqrt(3/(4 pi))
constexpr double kC2 = 1.0925484305920792;    // sqrt(15/(4 pi))
constexpr double kC20 = 0.31539156525252005;  // sqrt(5/(16 pi))
constexpr double kC22 = 0.5462742152960396;   // sqrt(15/(16 pi))

} // namespace

void Lighting::validate() const {
    if (gamma.rows() != 3 || gamma.cols() != kShCoeffs)
        throw UsageError("lighting must be 3 x 9 coefficients");
    if (!gamma.allFinite()) throw NumericError("lighting has non-finite coefficients");
}

Lighting Lighting::dc_white(double value) {
    Lighting L;
    for (int c = 0; c < 3; ++c) L.gamma(c, 0) = value * 2.0 * std::sqrt(M_PI);
    return L;
}

void Lighting::to_store(TensorStore& store, const std::string& prefix) const {
    store.put(Tensor::from_matrix(prefix + ".gamma", gamma));
}

Lighting Lighting::from_store(const TensorStore& store, const std::string& prefix) {
    Lighting L;
    L.gamma = store.get(prefix + ".gamma").as_matrix();
    L.validate();
    return L;
}

void save_lighting(const std::string& path, const Lighting& L) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.precision(17);
    for (int c = 0; c < 3; ++c) {
        for (int b = 0; b < kShCoeffs; ++b) out << L.gamma(c, b) << (b + 1 < kShCoeffs ? " " : "\n");
    }
    if (!out) throw IoError("write failed: " + path);
}

Lighting load_lighting(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    Lighting L;
    for (int c = 0; c < 3; ++c)
        for (int b = 0; b < kShCoeffs; ++b)
            if (!(in >> L.gamma(c, b))) throw IoError("malformed lighting file: " + path);
    L.validate();
    return L;
}

std::uint64_t sh_warning_count() { return g_sh_warnings.load(); }
void reset_sh_warnings() { g_sh_warnings.store(0); }

namespace {

Vec3 normalized_input(const Vec3& n) {
    const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    if (!(len > 0.0)) throw NumericError("zero-length normal in SH basis");
    if (std::abs(len - 1.0) > 1e-6) ++g_sh_warnings;
    return {n[0] / len, n[1] / len, n[2] / len};
}

} // namespace

std::array<double, kShCoeffs> sh_basis(const Vec3& n) {
    const Vec3 u = normalized_input(n);
    const double x = u[0], y = u[1], z = u[2];
    return {kY00,
            kC1 * y,
            kC1 * z,
            kC1 * x,
            kC2 * x * y,
            kC2 * y * z,
            kC20 * (3.0 * z * z - 1.0),
            kC2 * x * z,
            kC22 * (x * x - y * y)};
}

Eigen::Matrix<double, kShCoeffs, 3> sh_basis_gradient(const Vec3& n) {
    const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    if (!(len > 0.0)) throw NumericError("zero-length normal in SH basis");
    const Vec3 u = {n[0] / len, n[1] / len, n[2] / len};
    const double x = u[0], y = u[1], z = u[2];

    // gradient with respect to the unit vector
    Eigen::Matrix<double, kShCoeffs, 3> du;
    du.setZero();
    du.row(1) << 0.0, kC1, 0.0;
    du.row(2) << 0.0, 0.0, kC1;
    du.row(3) << kC1, 0.0, 0.0;
    du.row(4) << kC2 * y, kC2 * x, 0.0;
    du.row(5) << 0.0, kC2 * z, kC2 * y;
    du.row(6) << 0.0, 0.0, kC20 * 6.0 * z;
    du.row(7) << kC2 * z, 0.0, kC2 * x;
    du.row(8) << kC22 * 2.0 * x, -kC22 * 2.0 * y, 0.0;

    // chain through u = n / |n|
    Eigen::Matrix3d J;
    const Eigen::Vector3d uv(x, y, z);
    J = (Eigen::Matrix3d::Identity() - uv * uv.transpose()) / len;
    return du * J;
}

Vec3 shade(const Lighting& L, const Vec3& n) {
    const auto H = sh_basis(n);
    Vec3 rgb;
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int b = 0; b < kShCoeffs; ++b) acc += L.gamma(c, b) * H[b];
        rgb[c] = acc;
    }
    return rgb;
}

RenderedFrame render(const JofParams& params, const LatentCodes& codes, const Projection& proj,
                     const Lighting& L, int width, int height, const RenderConfig& cfg) {
    params.validate();
    codes.validate();
    L.validate();

    RenderedFrame frame;
    BatchFieldFn field = [&](const std::vector<Vec3>& xs) {
        ShapeBatchEval e = shape_forward_batch(params, codes, xs);
        return e.o;
    };
    frame.surface = surface_map_batch(field, proj, width, height, cfg.search);

    const std::size_t n_px = frame.surface.points.size();
    frame.image = ImageRGB::zeros(width, height);
    frame.mask = hit_mask_image(frame.surface);
    frame.normals.assign(n_px, {0.0, 0.0, 0.0});
    frame.albedo.assign(n_px, {0.0, 0.0, 0.0});
    frame.branch.assign(n_px, -1);
    for (std::size_t p = 0; p < n_px; ++p) {
        frame.image.data[3 * p + 0] = cfg.background[0];
        frame.image.data[3 * p + 1] = cfg.background[1];
        frame.image.data[3 * p + 2] = cfg.background[2];
    }

    std::vector<std::size_t> hit_px;
    std::vector<Vec3> xs;
    for (std::size_t p = 0; p < n_px; ++p) {
        if (frame.surface.points[p].hit) {
            hit_px.push_back(p);
            xs.push_back(frame.surface.points[p].x);
        }
    }
    if (hit_px.empty()) return frame;

    // one taped pass: branch values give the argmax, the backward pass gives
    // spatial gradients for the normals
    ShapeBatchEval eval = shape_forward_batch(params, codes, xs);
    ShapeBatchGrad grad =
        shape_backward_batch(params, eval, std::vector<double>(xs.size(), 1.0), false);

    // unit direction back toward the camera; stays defined even when the hit
    // collapses onto the camera center itself
    std::vector<Vec3> fallbacks(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const std::size_t p = hit_px[i];
        const Ray ray =
            proj.pixel_ray(static_cast<double>(p % static_cast<std::size_t>(width)) + 0.5,
                           static_cast<double>(p / static_cast<std::size_t>(width)) + 0.5);
        fallbacks[i] = {-ray.dir[0], -ray.dir[1], -ray.dir[2]};
    }

    std::vector<Vec3> albedos(xs.size());
    {
        RowMatrix in(static_cast<Eigen::Index>(xs.size()), params.l_C + params.l_S + params.l_A + 3);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            Vector row = albedo_input(params, codes, xs[i]);
            in.row(static_cast<Eigen::Index>(i)) = row.transpose();
        }
        RowMatrix rgb = params.albedo_net.eval(in);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const int b = eval.idx[i];
            albedos[i] = {rgb(static_cast<Eigen::Index>(i), 3 * b),
                          rgb(static_cast<Eigen::Index>(i), 3 * b + 1),
                          rgb(static_cast<Eigen::Index>(i), 3 * b + 2)};
        }
    }

    for (std::size_t i = 0; i < xs.size(); ++i) {
        const std::size_t p = hit_px[i];
        const Vec3& g = grad.d_x[i];
        const double glen = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
        Vec3 normal;
        if (glen < kNormalEps) {
            ++frame.degenerate_normals;
            const Vec3& f = fallbacks[i];
            const double fl = std::sqrt(f[0] * f[0] + f[1] * f[1] + f[2] * f[2]);
            normal = {f[0] / fl, f[1] / fl, f[2] / fl};
        } else {
            normal = {-g[0] / glen, -g[1] / glen, -g[2] / glen};
        }
        frame.normals[p] = normal;
        frame.branch[p] = eval.idx[i];
        frame.albedo[p] = albedos[i];

        const Vec3 s = shade(L, normal);
        for (int c = 0; c < 3; ++c)
            frame.image.data[3 * p + c] = std::clamp(albedos[i][c] * s[c], 0.0, 1.0);
    }
    return frame;
}

} // namespace jof
