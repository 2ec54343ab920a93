#pragma once

#include <jof/camera.hpp>
#include <jof/net.hpp>

namespace jof {

struct LatentCodes {
    Vector f_C, f_S, f_A;

    static LatentCodes zeros(int l_C, int l_S, int l_A);
    static LatentCodes random(int l_C, int l_S, int l_A, double scale, Rng& rng);
    void validate() const;
};

// Branched implicit decoders. The shape net maps [f_C; f_S; x] to k sigmoid
// branch occupancies; the albedo net maps [f_C; f_S; f_A; x] to k sigmoid RGB
// candidates. Occupancy is the max branch, the argmax branch selects the
// albedo candidate and the part label.
struct JofParams {
    int k = 8;
    double tau = 0.5;
    int l_C = 8, l_S = 32, l_A = 32;
    DenseNet shape_net;
    DenseNet albedo_net;

    void validate() const;
    static JofParams make(int k, int l_C, int l_S, int l_A, int trunk_width, int trunk_depth,
                          Rng& rng);

    void to_store(TensorStore& store, const std::string& prefix) const;
    static JofParams from_store(const TensorStore& store, const std::string& prefix);

    // content hash of the serialized shape decoder, for freeze checks
    std::uint64_t shape_hash() const;
};

struct FieldSample {
    Vec3 x;
    double o = 0.0;
    Vector branch_values;
    int idx = 0;
    Vec3 albedo = {0.0, 0.0, 0.0};
};

// argmax with ties broken toward the lowest index
int argmax_branch(const Vector& branch_values);

Vector shape_input(const JofParams& params, const LatentCodes& codes, const Vec3& x);
Vector albedo_input(const JofParams& params, const LatentCodes& codes, const Vec3& x);

// value-only paths
std::pair<double, Vector> shape_decode(const JofParams& params, const LatentCodes& codes,
                                       const Vec3& x);
double occupancy(const JofParams& params, const LatentCodes& codes, const Vec3& x);
int branch_index(const JofParams& params, const LatentCodes& codes, const Vec3& x);
Vec3 albedo_decode(const JofParams& params, const LatentCodes& codes, const Vec3& x);
FieldSample sample_field(const JofParams& params, const LatentCodes& codes, const Vec3& x);

// taped paths for gradients
struct ShapeEval {
    Vector branch_values;
    double o = 0.0;
    int idx = 0;
    Tape tape;
};

struct ShapeGrad {
    Vector d_fC, d_fS;
    Vec3 d_x = {0.0, 0.0, 0.0};
    NetGrads params;
};

ShapeEval shape_forward(const JofParams& params, const LatentCodes& codes, const Vec3& x);
// gradients of (d_o * o); flows through the winning branch only
ShapeGrad shape_backward(const JofParams& params, ShapeEval& eval, double d_o,
                         bool want_param_grads);

struct AlbedoEval {
    Vec3 rgb = {0.0, 0.0, 0.0};
    int idx = 0;
    Tape tape;
};

struct AlbedoGrad {
    Vector d_fC, d_fS, d_fA;
    Vec3 d_x = {0.0, 0.0, 0.0};
    NetGrads params;
};

// idx comes from the shape argmax at the same point; the selection itself is
// not differentiated
AlbedoEval albedo_forward(const JofParams& params, const LatentCodes& codes, const Vec3& x,
                          int idx);
AlbedoGrad albedo_backward(const JofParams& params, AlbedoEval& eval, const Vec3& d_rgb,
                           bool want_param_grads);

// batched variants (one row per point, codes shared); bit-identical to the
// single-point paths
struct ShapeBatchEval {
    RowMatrix branch_values; // n x k
    std::vector<double> o;
    std::vector<int> idx;
    Tape tape;
};

ShapeBatchEval shape_forward_batch(const JofParams& params, const LatentCodes& codes,
                                   const std::vector<Vec3>& xs);

struct ShapeBatchGrad {
    Vector d_fC, d_fS;          // accumulated over rows
    std::vector<Vec3> d_x;      // per row
    NetGrads params;
};

ShapeBatchGrad shape_backward_batch(const JofParams& params, ShapeBatchEval& eval,
                                    const std::vector<double>& d_o, bool want_param_grads);

struct AlbedoBatchEval {
    std::vector<Vec3> rgb;
    std::vector<int> idx;
    Tape tape;
};

AlbedoBatchEval albedo_forward_batch(const JofParams& params, const LatentCodes& codes,
                                     const std::vector<Vec3>& xs, const std::vector<int>& idx);

struct AlbedoBatchGrad {
    Vector d_fC, d_fS, d_fA;
    std::vector<Vec3> d_x;
    NetGrads params;
};

AlbedoBatchGrad albedo_backward_batch(const JofParams& params, AlbedoBatchEval& eval,
                                      const std::vector<Vec3>& d_rgb, bool want_param_grads);

// analytic surface normal, unit length, pointing along decreasing occupancy
// (outward for a trained interior-1 field)
constexpr double kNormalEps = 1e-8;

struct NormalResult {
    Vec3 n;
    bool degenerate = false;
};

NormalResult surface_normal(const JofParams& params, const LatentCodes& codes, const Vec3& x,
                            const Vec3& degenerate_fallback);
std::vector<NormalResult> surface_normal_batch(const JofParams& params, const LatentCodes& codes,
                                               const std::vector<Vec3>& xs,
                                               const std::vector<Vec3>& fallbacks);

} // namespace jof
