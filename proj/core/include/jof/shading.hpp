#pragma once

#include <jof/field.hpp>
#include <jof/raysearch.hpp>

#include <Eigen/Core>

namespace jof {

// Real spherical harmonics, 3 bands, component order
// (0,0),(1,-1),(1,0),(1,1),(2,-2),(2,-1),(2,0),(2,1),(2,2).
constexpr int kShBands = 3;
constexpr int kShCoeffs = kShBands * kShBands;

// Per color channel SH lighting coefficients.
struct Lighting {
    Matrix gamma = Matrix::Zero(3, kShCoeffs); // 3 x 9

    void validate() const;
    // gamma[c][0] = value * 2 sqrt(pi): uniform white irradiance `value`
    static Lighting dc_white(double value);

    void to_store(TensorStore& store, const std::string& prefix) const;
    static Lighting from_store(const TensorStore& store, const std::string& prefix);
};

// text form: three lines of nine coefficients
void save_lighting(const std::string& path, const Lighting& L);
Lighting load_lighting(const std::string& path);

// Non-unit inputs are normalized and counted.
std::array<double, kShCoeffs> sh_basis(const Vec3& n);
// d H_b / d n, including the normalization chain; rows follow basis order
Eigen::Matrix<double, kShCoeffs, 3> sh_basis_gradient(const Vec3& n);

std::uint64_t sh_warning_count();
void reset_sh_warnings();

Vec3 shade(const Lighting& L, const Vec3& n);

struct RenderConfig {
    SearchConfig search;
    Vec3 background = {0.0, 0.0, 0.0};
};

struct RenderedFrame {
    ImageRGB image;             // clamped to [0,1]; background on miss
    ImageGray mask;             // 1 hit / 0 miss, equals the search hit map
    SurfaceMap surface;
    std::vector<Vec3> normals;  // unit where hit, zero where miss
    std::vector<Vec3> albedo;   // selected branch albedo where hit
    std::vector<int> branch;    // argmax branch where hit, -1 where miss
    int degenerate_normals = 0;
};

// Per pixel: ray search -> surface point; analytic normal; image value
// albedo * SH shading, clamped. The found surface points are constants for
// differentiation; albedo and shading remain differentiable at fixed x.
RenderedFrame render(const JofParams& params, const LatentCodes& codes, const Projection& proj,
                     const Lighting& L, int width, int height, const RenderConfig& cfg);

} // namespace jof
