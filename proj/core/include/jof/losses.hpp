#pragma once

#include <jof/conv.hpp>
#include <jof/field.hpp>
#include <jof/shading.hpp>

namespace jof {

struct LossWeights {
    double lambda1 = 1.0;  // silhouette
    double lambda2 = 0.05; // feature consistency
    double lambda3 = 0.01; // regularizers: albedo constancy + white shading
    double lambda_C = 1.0, lambda_S = 1.0, lambda_A = 1.0, lambda_P = 1.0;
    double alpha = 15.0;        // albedo-constancy chromaticity falloff
    double p = 0.8;             // albedo-constancy exponent
    double shading_target = 1.0;

    void validate() const;
};

// Count of soft failures (empty masks, skipped loss terms, degenerate
// batches); process-wide like the SH warning counter.
std::uint64_t loss_warning_count();
void reset_loss_warnings();

// --- photometric -----------------------------------------------------------

// Mean absolute foreground difference; the mean runs over foreground pixels
// times 3 channels. Empty mask gives 0 with a warning.
double photometric_loss(const ImageRGB& I_hat, const ImageRGB& I, const ImageGray& M);
// dL/dI_hat; zero on background and where the difference is exactly zero
ImageRGB photometric_loss_grad(const ImageRGB& I_hat, const ImageRGB& I, const ImageGray& M);

// --- silhouette --------------------------------------------------------------

struct SilhouetteEval {
    double loss = 0.0;
    Vector d_fC, d_fS;
    Vec3 d_pose = {0.0, 0.0, 0.0}; // d(azimuth, elevation, distance)
    NetGrads d_shape;
    std::size_t foreground_pixels = 0;
};

// Pixels whose occupancy already sits within this band of their target carry
// a zero L1 subgradient: on matched foreground the ray search parks o(x_j)
// at tau up to bisection tolerance, so the sign of o - tau there is search
// noise, while the re-searched objective is locally flat. The loss value
// still counts the residual.
inline constexpr double kSilhouetteKinkBand = 0.05;

// Mean |o(x_j) - target_j| over all pixels; target is tau on mask foreground
// and 0 elsewhere. x_j is the ray-search point of pixel j (hit or miss),
// re-expressed as backprojection of its own (u, v, depth) so the pose
// gradient flows through the camera at fixed pixel coordinates. The search
// itself is not differentiated, and pixels inside the kink band contribute
// no gradient. The pose path is further restricted to uncovered-foreground
// pixels (mask foreground whose ray missed): their max-occupancy points give
// a smooth pull that registers the surface onto the mask and vanishes at
// alignment. Everywhere else the re-searched objective is locally flat in
// pose (matched pixels) or changes only when the silhouette edge crosses the
// pixel (hits over background), so the frozen-point occupancy drift there is
// noise around a step and would bias the direction; those pixels still drive
// the code and shape-parameter paths, which carve occupancy in place.
SilhouetteEval silhouette_loss(const JofParams& params, const LatentCodes& codes,
                               const PoseParams& pose, const ImageGray& M,
                               const SearchConfig& search, bool want_pose_grad = true,
                               bool want_param_grads = true);

// --- part-boundary features --------------------------------------------------

// Surface points whose branch assignment flips within +-probe_step along some
// axis. Deterministic for fixed inputs. Throws NumericError("insufficient
// part boundary") when fewer than max(8, n_target/10) qualify.
std::vector<Vec3> boundary_points(const JofParams& params, const LatentCodes& codes, int n_target,
                                  double probe_step);

// Bilinear samples of each map at image locations U_2D (q x 2, pixel units of
// a w_img x h_img image; cell centers at i + 0.5), channel-concatenated to a
// q x D row per point. Locations are clamped to the map interior.
struct FeatureSampleTape {
    struct Corner {
        int map, y, x;
        double weight;
    };
    std::vector<std::vector<Corner>> corners; // per point, 4 per map
    std::vector<int> map_channels;
    std::vector<int> map_h, map_w;
};

Matrix sample_local_features(const std::vector<FeatureMap>& maps, const Matrix& U_2D, int w_img,
                             int h_img, FeatureSampleTape* tape = nullptr);
// Scatters dL/dF back onto gradient planes shaped like the sampled maps.
std::vector<FeatureMap> sample_local_features_backward(const FeatureSampleTape& tape,
                                                       const Matrix& d_F);

// --- principal eigenvector ---------------------------------------------------

constexpr int kPowerIterations = 200;

struct EigenEval {
    Vector v;                    // unit norm, canonical sign
    Matrix centered;             // F - column means, q x D
    Matrix gram;                 // centered^T centered, D x D
    std::vector<Vector> iterates; // v_0 .. v_T before sign fix
    std::vector<double> norms;    // |C v_{t-1}| per step
    double sign = 1.0;
};

// Power iteration on the centered Gram matrix, fixed iteration count, unit
// basis-vector init (largest Gram diagonal), sign fixed so the
// largest-|entry| component is positive (ties toward the first index).
// Throws NumericError("degenerate covariance") when all rows are equal.
EigenEval principal_eigenvector_eval(const Matrix& F);
Vector principal_eigenvector(const Matrix& F);
// Unrolled-iteration VJP: dL/dF from dL/dv.
Matrix principal_eigenvector_backward(const EigenEval& eval, const Vector& d_v);

// --- feature consistency -----------------------------------------------------

// Mean L1 distance over unordered pairs; fewer than two entries gives 0 with
// a warning.
double feature_consistency_loss(const std::vector<Vector>& vs);
std::vector<Vector> feature_consistency_grad(const std::vector<Vector>& vs);

// --- albedo constancy --------------------------------------------------------

// Chroma-weighted albedo gradient sparsity over foreground 4-neighborhoods
// fully inside the mask: sum of w(j,t) * (|A_j - A_t|^2 + 1e-12)^(p/2) over
// ordered neighbor pairs, divided by the pair count. w(j,t) =
// exp(-alpha * |c_j - c_t|) with chromaticity c = I / max(|I|_2, 1e-6).
double albedo_constancy_loss(const ImageRGB& A, const ImageRGB& I, const ImageGray& M,
                             double alpha, double p);
ImageRGB albedo_constancy_grad(const ImageRGB& A, const ImageRGB& I, const ImageGray& M,
                               double alpha, double p);

// --- white shading -----------------------------------------------------------

// Per channel |mean shading - target|, summed over channels. Empty input
// gives 0 with a warning.
double white_shading_loss(const std::vector<Vec3>& shading, double target);
std::vector<Vec3> white_shading_grad(const std::vector<Vec3>& shading, double target);

// --- totals ------------------------------------------------------------------

struct SelfSupervisedTerms {
    double img = 0.0, sil = 0.0, fea = 0.0, alb = 0.0, bws = 0.0;
};

struct LossBreakdown {
    double total = 0.0;
    double img = 0.0, sil = 0.0, fea = 0.0, alb = 0.0, bws = 0.0;
};

// total = img + lambda1 * sil + lambda2 * fea + lambda3 * (alb + bws);
// the breakdown keeps the unweighted terms.
LossBreakdown total_self_supervised_loss(const SelfSupervisedTerms& terms, const LossWeights& w);

std::string loss_csv_header();
std::string loss_csv_row(std::uint64_t step, const LossBreakdown& b);

// --- decoder pretraining -----------------------------------------------------

// Linear class head over f_C.
struct Classifier {
    Matrix W; // classes x l_C
    Vector b;

    void validate() const;
    static Classifier make(int classes, int l_C, Rng& rng);
    void to_store(TensorStore& store, const std::string& prefix) const;
    static Classifier from_store(const TensorStore& store, const std::string& prefix);
};

struct ClassifierGrads {
    Matrix d_W;
    Vector d_b;
};

std::vector<ParamView> param_views(Classifier& c, const std::string& prefix);
std::vector<GradView> grad_views(const ClassifierGrads& grads);

struct DecoderPretrainEval {
    double loss = 0.0;
    double loss_S = 0.0, loss_A = 0.0, loss_C = 0.0;
    Vector d_fC, d_fS, d_fA;
    NetGrads d_shape, d_albedo;
    ClassifierGrads d_classifier;
};

// Summed squared occupancy error over all points, summed squared albedo
// error over interior points (selection branch frozen), and softmax
// cross-entropy of the class head on f_C. No interior points gives a zero
// albedo term with a warning.
DecoderPretrainEval decoder_pretrain_loss(const JofParams& params, const LatentCodes& codes,
                                          const std::vector<Vec3>& x, const std::vector<double>& o,
                                          const std::vector<Vec3>& rgb, int label,
                                          const Classifier& classifier, bool want_param_grads);

// --- encoder pretraining -----------------------------------------------------

struct EncoderPretrainEval {
    double loss = 0.0;
    double loss_img = 0.0, loss_code = 0.0, loss_pose = 0.0;
    Vector d_fC, d_fS, d_fA;
    Vec3 d_pose = {0.0, 0.0, 0.0};
};

// loss_img + sum_X lambda_X |code_X - target_X|^2 + lambda_P |pose - pose~|^2.
// The photometric term arrives precomputed; its gradient flows through the
// render chain, not through this function.
EncoderPretrainEval encoder_pretrain_loss(const LatentCodes& pred, const Vec3& pose_pred,
                                          const LatentCodes& target, const Vec3& pose_target,
                                          double img_loss, const LossWeights& w);

} // namespace jof
