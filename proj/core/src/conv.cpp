#include <jof/conv.hpp>

#include <cmath>

namespace jof {

FeatureMap FeatureMap::zeros(int h, int w, int c) {
    if (h <= 0 || w <= 0 || c <= 0) throw UsageError("feature map dims must be positive");
    FeatureMap m;
    m.h = h;
    m.w = w;
    m.c = c;
    m.data.assign(static_cast<std::size_t>(h) * w * c, 0.0);
    return m;
}

void FeatureMap::validate() const {
    if (h <= 0 || w <= 0 || c <= 0) throw UsageError("feature map dims must be positive");
    if (data.size() != static_cast<std::size_t>(h) * w * c)
        throw UsageError("feature map payload size mismatch");
}

FeatureMap feature_map_from_image(const ImageRGB& img) {
    FeatureMap m;
    m.h = img.height;
    m.w = img.width;
    m.c = 3;
    m.data = img.data;
    m.validate();
    return m;
}

void ConvLayer::validate() const {
    if (in_c <= 0 || out_c <= 0) throw UsageError("conv channel counts must be positive");
    if (stride <= 0) throw UsageError("conv stride must be positive");
    if (weight.rows() != out_c || weight.cols() != in_c * 9)
        throw UsageError("conv weight shape mismatch");
    if (bias.size() != out_c) throw UsageError("conv bias size mismatch");
}

ConvLayer ConvLayer::make(int in_c, int out_c, int stride, Activation act, Rng& rng) {
    ConvLayer l;
    l.in_c = in_c;
    l.out_c = out_c;
    l.stride = stride;
    l.act = act;
    if (in_c <= 0 || out_c <= 0) throw UsageError("conv channel counts must be positive");
    l.weight.resize(out_c, in_c * 9);
    const double bound = std::sqrt(6.0 / (in_c * 9 + out_c * 9));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = rng.uniform(-bound, bound);
    l.bias = Vector::Zero(out_c);
    l.validate();
    return l;
}

void ConvLayer::to_store(TensorStore& store, const std::string& prefix) const {
    Tensor meta;
    meta.name = prefix + ".shape";
    meta.dims = {4};
    meta.data = {static_cast<double>(in_c), static_cast<double>(out_c),
                 static_cast<double>(stride), static_cast<double>(static_cast<int>(act))};
    store.put(std::move(meta));
    store.put(Tensor::from_matrix(prefix + ".weight", weight));
    store.put(Tensor::from_vector(prefix + ".bias", bias));
}

ConvLayer ConvLayer::from_store(const TensorStore& store, const std::string& prefix) {
    const Tensor& meta = store.get(prefix + ".shape");
    if (meta.data.size() != 4) throw IoError("stored conv layer has bad metadata: " + prefix);
    ConvLayer l;
    l.in_c = static_cast<int>(meta.data[0]);
    l.out_c = static_cast<int>(meta.data[1]);
    l.stride = static_cast<int>(meta.data[2]);
    const int code = static_cast<int>(meta.data[3]);
    if (code < 0 || code > static_cast<int>(Activation::Tanh))
        throw IoError("stored conv layer has invalid activation code");
    l.act = static_cast<Activation>(code);
    l.weight = store.get(prefix + ".weight").as_matrix();
    l.bias = store.get(prefix + ".bias").as_vector();
    l.validate();
    return l;
}

int conv_out_extent(int n, int stride) {
    if (n <= 0 || stride <= 0) throw UsageError("conv extent and stride must be positive");
    return (n - 1) / stride + 1;
}

FeatureMap conv_forward(const ConvLayer& layer, const FeatureMap& in, ConvTape* tape) {
    layer.validate();
    in.validate();
    if (in.c != layer.in_c) throw UsageError("conv input channel mismatch");
    const int ho = conv_out_extent(in.h, layer.stride);
    const int wo = conv_out_extent(in.w, layer.stride);
    FeatureMap pre = FeatureMap::zeros(ho, wo, layer.out_c);
    FeatureMap post = FeatureMap::zeros(ho, wo, layer.out_c);
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            for (int oc = 0; oc < layer.out_c; ++oc) {
                double acc = layer.bias[oc];
                for (int ky = 0; ky < 3; ++ky) {
                    const int y = oy * layer.stride + ky - 1;
                    if (y < 0 || y >= in.h) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int x = ox * layer.stride + kx - 1;
                        if (x < 0 || x >= in.w) continue;
                        for (int ic = 0; ic < layer.in_c; ++ic)
                            acc += layer.weight(oc, ic * 9 + ky * 3 + kx) * in.at(y, x, ic);
                    }
                }
                pre.at(oy, ox, oc) = acc;
                post.at(oy, ox, oc) = activate(layer.act, acc);
            }
        }
    }
    if (tape) {
        tape->input = in;
        tape->pre = pre;
        tape->post = post;
    }
    return post;
}

ConvGrads ConvGrads::zeros(const ConvLayer& layer) {
    ConvGrads g;
    g.d_weight = Matrix::Zero(layer.out_c, layer.in_c * 9);
    g.d_bias = Vector::Zero(layer.out_c);
    return g;
}

void ConvGrads::add_scaled(const ConvGrads& other, double s) {
    d_weight += s * other.d_weight;
    d_bias += s * other.d_bias;
}

void ConvGrads::scale(double s) {
    d_weight *= s;
    d_bias *= s;
}

FeatureMap conv_backward(const ConvLayer& layer, const ConvTape& tape, const FeatureMap& d_out,
                         ConvGrads& grads) {
    layer.validate();
    const FeatureMap& in = tape.input;
    if (d_out.h != tape.pre.h || d_out.w != tape.pre.w || d_out.c != tape.pre.c)
        throw UsageError("conv output gradient shape mismatch");
    if (grads.d_weight.rows() != layer.out_c || grads.d_weight.cols() != layer.in_c * 9)
        throw UsageError("conv gradient accumulator shape mismatch");
    FeatureMap d_in = FeatureMap::zeros(in.h, in.w, in.c);
    for (int oy = 0; oy < d_out.h; ++oy) {
        for (int ox = 0; ox < d_out.w; ++ox) {
            for (int oc = 0; oc < layer.out_c; ++oc) {
                const double d_pre =
                    d_out.at(oy, ox, oc) *
                    activate_derivative(layer.act, tape.pre.at(oy, ox, oc), tape.post.at(oy, ox, oc));
                if (d_pre == 0.0) continue;
                grads.d_bias[oc] += d_pre;
                for (int ky = 0; ky < 3; ++ky) {
                    const int y = oy * layer.stride + ky - 1;
                    if (y < 0 || y >= in.h) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int x = ox * layer.stride + kx - 1;
                        if (x < 0 || x >= in.w) continue;
                        for (int ic = 0; ic < layer.in_c; ++ic) {
                            const int col = ic * 9 + ky * 3 + kx;
                            grads.d_weight(oc, col) += d_pre * in.at(y, x, ic);
                            d_in.at(y, x, ic) += d_pre * layer.weight(oc, col);
                        }
                    }
                }
            }
        }
    }
    return d_in;
}

std::vector<ParamView> param_views(ConvLayer& layer, const std::string& prefix) {
    return {{prefix + ".weight", layer.weight.data(), static_cast<std::size_t>(layer.weight.size())},
            {prefix + ".bias", layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}};
}

std::vector<GradView> grad_views(const ConvGrads& grads) {
    return {{grads.d_weight.data(), static_cast<std::size_t>(grads.d_weight.size())},
            {grads.d_bias.data(), static_cast<std::size_t>(grads.d_bias.size())}};
}

} // namespace jof
