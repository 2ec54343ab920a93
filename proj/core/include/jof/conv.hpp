#pragma once

#include <jof/image.hpp>
#include <jof/net.hpp>

namespace jof {

// Channel-interleaved feature plane: data[(y*w + x)*c + ch].
struct FeatureMap {
    int h = 0, w = 0, c = 0;
    std::vector<double> data;

    static FeatureMap zeros(int h, int w, int c);
    void validate() const;

    double& at(int y, int x, int ch) {
        return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
    double at(int y, int x, int ch) const {
        return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
};

FeatureMap feature_map_from_image(const ImageRGB& img);

// 3x3 convolution with zero padding 1 and configurable stride. Weight rows
// are output channels; columns pack (in_channel, ky, kx) with kx fastest.
struct ConvLayer {
    int in_c = 0, out_c = 0, stride = 1;
    Matrix weight; // out_c x in_c*9
    Vector bias;   // out_c
    Activation act = Activation::LeakyRelu;

    void validate() const;
    static ConvLayer make(int in_c, int out_c, int stride, Activation act, Rng& rng);

    void to_store(TensorStore& store, const std::string& prefix) const;
    static ConvLayer from_store(const TensorStore& store, const std::string& prefix);
};

// output extent for input extent n: floor((n - 1) / stride) + 1
int conv_out_extent(int n, int stride);

struct ConvTape {
    FeatureMap input, pre, post;
};

FeatureMap conv_forward(const ConvLayer& layer, const FeatureMap& in, ConvTape* tape = nullptr);

struct ConvGrads {
    Matrix d_weight;
    Vector d_bias;

    static ConvGrads zeros(const ConvLayer& layer);
    void add_scaled(const ConvGrads& other, double s);
    void scale(double s);
};

// Accumulates parameter gradients into `grads` and returns d_input.
FeatureMap conv_backward(const ConvLayer& layer, const ConvTape& tape, const FeatureMap& d_out,
                         ConvGrads& grads);

std::vector<ParamView> param_views(ConvLayer& layer, const std::string& prefix);
std::vector<GradView> grad_views(const ConvGrads& grads);

} // namespace jof
