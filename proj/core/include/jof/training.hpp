#pragma once

#include <jof/config.hpp>
#include <jof/encoders.hpp>

#include <functional>

namespace jof {

// Column-labeled per-step scalar log of one training stage.
struct Curve {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    void add_row(const std::vector<double>& row);
    std::vector<double> column(const std::string& name) const;
    std::string to_csv() const;
    void save_csv(const std::string& path) const;
};

// Stage checkpoints hold the stage models, optimizer state, progress.next_step
// and the numeric config. `save` fires every config.checkpoint_every steps and
// after the final step; `resume` continues a run from such a snapshot with a
// bit-identical remainder in single-threaded mode.
struct CheckpointHooks {
    const TensorStore* resume = nullptr;
    std::function<void(int next_step, const TensorStore&)> save;
};

// --- stage 1: decoders + voxel encoder ---------------------------------------

struct Step1Result {
    JofParams params;
    VoxelEncoder encoder;
    Curve curve; // step, loss, loss_S, loss_A, loss_C
    bool diverged = false;
    int steps_done = 0;
};

// Minibatch descent on the summed occupancy/albedo/class objective. The shape
// decoder is frozen after this stage. A non-finite batch loss aborts the stage
// and returns the last checkpointed state with `diverged` set.
Step1Result step1_pretrain_decoders(const std::vector<SceneInstance>& dataset,
                                    const TrainConfig& cfg, const CheckpointHooks& hooks = {});

// --- rendering chain ----------------------------------------------------------

// Photometric loss of one rendered view plus its gradients through the albedo
// decoder and the lighting coefficients at the searched surface points. Points
// and normals are constants of the chain, so the photometric term carries no
// pose gradient; pose moves through the silhouette term instead. The clamp to
// [0,1] passes gradient only on strictly interior values.
struct RenderChain {
    RenderedFrame frame;
    double img_loss = 0.0;
    Vector d_fC, d_fS, d_fA;
    Matrix d_gamma; // 3 x 9
    NetGrads d_albedo; // empty unless requested
};

RenderChain render_photometric(const JofParams& params, const LatentCodes& codes,
                               const PoseParams& pose, const Lighting& light,
                               const ImageRGB& target, const ImageGray& mask,
                               const SearchConfig& search, bool want_albedo_grads);

// All per-view self-supervised terms and the gradient of their weighted sum
// img + lambda1 * sil + lambda3 * (alb + bws). Feature consistency is a
// batch-level term assembled by the caller. `terms` stays unweighted.
struct ViewTermsEval {
    RenderedFrame frame;
    SelfSupervisedTerms terms; // fea left 0
    Vector d_fC, d_fS, d_fA;
    Vec3 d_pose = {0.0, 0.0, 0.0}; // silhouette path only
    Matrix d_gamma;                // 3 x 9
    NetGrads d_albedo; // empty unless requested
};

ViewTermsEval view_terms(const JofParams& params, const LatentCodes& codes,
                         const PoseParams& pose, const Lighting& light, const ImageRGB& image,
                         const ImageGray& mask, const LossWeights& w, const SearchConfig& search,
                         bool want_albedo_grads, bool want_pose_grad);

// predicted (azimuth, elevation, distance) + intrinsics of a reference pose
PoseParams pose_from_prediction(const Vec3& pred, const PoseParams& intrinsics);

// --- stage 2: image encoder ----------------------------------------------------

struct Step2Result {
    ImageEncoder encoder;
    Curve curve; // step, loss, img, code, pose
    bool diverged = false;
    int steps_done = 0;
};

// Supervised encoder regression: photometric term from renders under the
// predicted pose/light/codes, code targets from the frozen voxel encoder,
// pose targets from the dataset. Decoders stay fixed.
Step2Result step2_pretrain_encoder(const std::vector<SceneInstance>& dataset,
                                   const JofParams& params, const VoxelEncoder& voxel_encoder,
                                   const TrainConfig& cfg, const CheckpointHooks& hooks = {});

// --- stage 3: self-supervised fine-tuning ---------------------------------------

struct UnlabeledImage {
    ImageRGB image;
    ImageGray mask;
};

// the masks-only stream: every view of every instance, labels dropped
std::vector<UnlabeledImage> strip_to_masks(const std::vector<SceneInstance>& dataset);

struct Step3Result {
    ImageEncoder encoder;
    JofParams params; // albedo decoder trained; shape decoder asserted unchanged
    Curve curve;      // step, total, img, sil, fea, alb, bws
    bool diverged = false;
    int steps_done = 0;
};

// Self-supervised descent on images + masks alone. Batches group by the class
// predicted from f_C for the feature-consistency term; the shape decoder is
// frozen and its content hash is asserted unchanged at the end (CheckError).
// Views whose codes expose no part boundary simply drop out of the
// consistency term for that step.
Step3Result step3_finetune(const std::vector<UnlabeledImage>& stream, const ImageEncoder& encoder,
                           const JofParams& params, const Classifier& classifier,
                           const TrainConfig& cfg, const CheckpointHooks& hooks = {});

// --- direct fitting ---------------------------------------------------------------

struct FitInit {
    PoseParams pose; // focal and principal point stay fixed during the fit
    Lighting light;
    LatentCodes codes;
};

struct FitOptions {
    bool fit_pose = true;
    bool fit_light = true;
    bool fit_codes = true;
};

struct FitResult {
    PoseParams pose;
    Lighting light;
    LatentCodes codes;
    Curve curve; // step, total, img, sil, alb, bws
    double best_loss = 0.0;
    int best_step = 0;
};

// Adam on the weighted view terms w.r.t. pose / lighting / codes at fixed
// decoder weights; returns the best-loss iterate (the init competes, so a
// stationary start returns unchanged). All-background masks are rejected.
// Camera distance is floored at 0.1 after each update to keep the projection
// valid.
FitResult fit_by_optimization(const ImageRGB& image, const ImageGray& mask,
                              const JofParams& params, const FitInit& init, const TrainConfig& cfg,
                              const FitOptions& opts = {});

// --- evaluation helpers --------------------------------------------------------

// fraction of samples whose thresholded occupancy agrees with the stored label
double occupancy_accuracy(const JofParams& params, const LatentCodes& codes,
                          const std::vector<PointSample>& samples);

// interior samples only: each branch maps to its majority part, purity is the
// covered fraction
double branch_purity(const JofParams& params, const LatentCodes& codes,
                     const std::vector<PointSample>& samples);

// median over every view of the dataset
double median_azimuth_error(const ImageEncoder& enc, const std::vector<SceneInstance>& dataset);

} // namespace jof
