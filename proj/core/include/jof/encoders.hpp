#pragma once

#include <jof/conv.hpp>
#include <jof/losses.hpp>
#include <jof/scenes.hpp>
#include <jof/shading.hpp>

namespace jof {

// Voxel-to-code encoder: the flattened res^3 x 4 occupancy+color grid runs
// through a leaky-relu trunk to the concatenated codes (f_C, f_S, f_A); the
// class-logits head is a linear classifier over f_C.
struct VoxelEncoder {
    int voxel_res = 16;
    int l_C = 8, l_S = 32, l_A = 32;
    DenseNet net;
    Classifier classifier;

    void validate() const;
    static VoxelEncoder make(int voxel_res, int l_C, int l_S, int l_A, int hidden, int classes,
                             Rng& rng);
    void to_store(TensorStore& store, const std::string& prefix) const;
    static VoxelEncoder from_store(const TensorStore& store, const std::string& prefix);
};

struct VoxelEncoderEval {
    LatentCodes codes;
    Tape tape;
};

VoxelEncoderEval voxel_encode(const VoxelEncoder& enc, const VoxelGrid& grid);
NetGrads voxel_encode_backward(const VoxelEncoder& enc, VoxelEncoderEval& eval, const Vector& d_fC,
                               const Vector& d_fS, const Vector& d_fA);

std::vector<ParamView> param_views(VoxelEncoder& enc, const std::string& prefix);

// Image encoder: three stride-2 convolution stages (8, 16, 32 channels) whose
// post-activation maps are exposed for feature sampling (8 + 16 + 32 = 56
// sampled channels), then dense heads on the flattened last stage for pose
// (azimuth, elevation, distance), lighting, and the three codes.
struct ImageEncoder {
    int input_size = 64;
    int l_C = 8, l_S = 32, l_A = 32;
    ConvLayer conv1, conv2, conv3;
    DenseNet pose_head, light_head, code_C_head, code_S_head, code_A_head;

    void validate() const;
    static ImageEncoder make(int input_size, int l_C, int l_S, int l_A, int head_hidden, Rng& rng);
    int flat_dim() const;
    int sampled_feature_width() const; // channel total across the exposed maps

    void to_store(TensorStore& store, const std::string& prefix) const;
    static ImageEncoder from_store(const TensorStore& store, const std::string& prefix);
};

struct ImageEncoderEval {
    LatentCodes codes;
    Vec3 pose = {0.0, 0.0, 0.0}; // azimuth, elevation, distance
    Lighting light;
    std::vector<FeatureMap> maps; // the three post-activation stages

    ConvTape t1, t2, t3;
    Tape pose_tape, light_tape, cC_tape, cS_tape, cA_tape;
};

ImageEncoderEval image_encode(const ImageEncoder& enc, const ImageRGB& image);

struct ImageEncoderGrads {
    ConvGrads conv1, conv2, conv3;
    NetGrads pose_head, light_head, code_C_head, code_S_head, code_A_head;

    static ImageEncoderGrads zeros_like(const ImageEncoder& enc);
    void add_scaled(const ImageEncoderGrads& other, double s);
    void scale(double s);
    bool all_finite() const;
};

// Upstream gradients for one encoded image. Empty vectors/matrices mean zero;
// d_maps, when present, must match the exposed maps in shape.
struct ImageEncoderPullback {
    Vector d_fC, d_fS, d_fA;
    Vec3 d_pose = {0.0, 0.0, 0.0};
    Matrix d_gamma; // 3 x 9
    std::vector<FeatureMap> d_maps;
};

void image_encode_backward(const ImageEncoder& enc, ImageEncoderEval& eval,
                           const ImageEncoderPullback& pull, ImageEncoderGrads& grads);

std::vector<ParamView> param_views(ImageEncoder& enc, const std::string& prefix);
std::vector<GradView> grad_views(const ImageEncoderGrads& grads);

} // namespace jof
