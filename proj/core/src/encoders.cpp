#include <jof/encoders.hpp>

namespace jof {

namespace {

Vector concat_grad(const Vector& a, const Vector& b, const Vector& c, int la, int lb, int lc) {
    Vector out = Vector::Zero(la + lb + lc);
    if (a.size() != 0) {
        if (a.size() != la) throw UsageError("code gradient size mismatch");
        out.segment(0, la) = a;
    }
    if (b.size() != 0) {
        if (b.size() != lb) throw UsageError("code gradient size mismatch");
        out.segment(la, lb) = b;
    }
    if (c.size() != 0) {
        if (c.size() != lc) throw UsageError("code gradient size mismatch");
        out.segment(la + lb, lc) = c;
    }
    return out;
}

} // namespace

void VoxelEncoder::validate() const {
    if (voxel_res <= 0) throw UsageError("voxel resolution must be positive");
    if (l_C <= 0 || l_S <= 0 || l_A <= 0) throw UsageError("code dims must be positive");
    net.validate();
    const long in = static_cast<long>(voxel_res) * voxel_res * voxel_res * 4;
    if (net.layers.front().weight.cols() != in)
        throw UsageError("voxel encoder input dim mismatch");
    if (net.layers.back().weight.rows() != l_C + l_S + l_A)
        throw UsageError("voxel encoder output dim mismatch");
    classifier.validate();
    if (classifier.W.cols() != l_C) throw UsageError("voxel encoder class head dim mismatch");
}

VoxelEncoder VoxelEncoder::make(int voxel_res, int l_C, int l_S, int l_A, int hidden, int classes,
                                Rng& rng) {
    if (hidden <= 0) throw UsageError("hidden width must be positive");
    VoxelEncoder enc;
    enc.voxel_res = voxel_res;
    enc.l_C = l_C;
    enc.l_S = l_S;
    enc.l_A = l_A;
    const int in = voxel_res * voxel_res * voxel_res * 4;
    enc.net = DenseNet::make({in, hidden, l_C + l_S + l_A},
                             {Activation::LeakyRelu, Activation::Identity}, rng);
    enc.classifier = Classifier::make(classes, l_C, rng);
    enc.validate();
    return enc;
}

void VoxelEncoder::to_store(TensorStore& store, const std::string& prefix) const {
    Tensor meta;
    meta.name = prefix + ".dims";
    meta.dims = {4};
    meta.data = {static_cast<double>(voxel_res), static_cast<double>(l_C),
                 static_cast<double>(l_S), static_cast<double>(l_A)};
    store.put(std::move(meta));
    net.to_store(store, prefix + ".net");
    classifier.to_store(store, prefix + ".classifier");
}

VoxelEncoder VoxelEncoder::from_store(const TensorStore& store, const std::string& prefix) {
    const Tensor& meta = store.get(prefix + ".dims");
    if (meta.data.size() != 4) throw IoError("stored voxel encoder has bad metadata");
    VoxelEncoder enc;
    enc.voxel_res = static_cast<int>(meta.data[0]);
    enc.l_C = static_cast<int>(meta.data[1]);
    enc.l_S = static_cast<int>(meta.data[2]);
    enc.l_A = static_cast<int>(meta.data[3]);
    enc.net = DenseNet::from_store(store, prefix + ".net");
    enc.classifier = Classifier::from_store(store, prefix + ".classifier");
    enc.validate();
    return enc;
}

VoxelEncoderEval voxel_encode(const VoxelEncoder& enc, const VoxelGrid& grid) {
    enc.validate();
    if (grid.res != enc.voxel_res) throw UsageError("voxel grid resolution mismatch");
    Vector in(grid.data.size());
    for (std::size_t i = 0; i < grid.data.size(); ++i) in[i] = grid.data[i];
    auto [out, tape] = forward(enc.net, in);
    VoxelEncoderEval ev;
    ev.codes.f_C = out.segment(0, enc.l_C);
    ev.codes.f_S = out.segment(enc.l_C, enc.l_S);
    ev.codes.f_A = out.segment(enc.l_C + enc.l_S, enc.l_A);
    ev.tape = std::move(tape);
    return ev;
}

NetGrads voxel_encode_backward(const VoxelEncoder& enc, VoxelEncoderEval& eval, const Vector& d_fC,
                               const Vector& d_fS, const Vector& d_fA) {
    const Vector d_out = concat_grad(d_fC, d_fS, d_fA, enc.l_C, enc.l_S, enc.l_A);
    return backward(eval.tape, d_out, true).grads;
}

std::vector<ParamView> param_views(VoxelEncoder& enc, const std::string& prefix) {
    std::vector<ParamView> views = param_views(enc.net, prefix + ".net");
    const std::vector<ParamView> cls = param_views(enc.classifier, prefix + ".classifier");
    views.insert(views.end(), cls.begin(), cls.end());
    return views;
}

// --- image encoder -----------------------------------------------------------

void ImageEncoder::validate() const {
    if (input_size < 8) throw UsageError("image encoder input size too small");
    if (l_C <= 0 || l_S <= 0 || l_A <= 0) throw UsageError("code dims must be positive");
    conv1.validate();
    conv2.validate();
    conv3.validate();
    if (conv1.in_c != 3 || conv1.out_c != 8 || conv2.in_c != 8 || conv2.out_c != 16 ||
        conv3.in_c != 16 || conv3.out_c != 32)
        throw UsageError("image encoder stage channels must be 3->8->16->32");
    if (conv1.stride != 2 || conv2.stride != 2 || conv3.stride != 2)
        throw UsageError("image encoder stages must use stride 2");
    const int flat = flat_dim();
    const DenseNet* heads[] = {&pose_head, &light_head, &code_C_head, &code_S_head, &code_A_head};
    const int outs[] = {3, 3 * kShCoeffs, l_C, l_S, l_A};
    for (int i = 0; i < 5; ++i) {
        heads[i]->validate();
        if (heads[i]->layers.front().weight.cols() != flat)
            throw UsageError("image encoder head input dim mismatch");
        if (heads[i]->layers.back().weight.rows() != outs[i])
            throw UsageError("image encoder head output dim mismatch");
    }
}

int ImageEncoder::flat_dim() const {
    int e = input_size;
    for (int i = 0; i < 3; ++i) e = conv_out_extent(e, 2);
    return e * e * 32;
}

int ImageEncoder::sampled_feature_width() const {
    return conv1.out_c + conv2.out_c + conv3.out_c;
}

ImageEncoder ImageEncoder::make(int input_size, int l_C, int l_S, int l_A, int head_hidden,
                                Rng& rng) {
    if (head_hidden <= 0) throw UsageError("hidden width must be positive");
    ImageEncoder enc;
    enc.input_size = input_size;
    enc.l_C = l_C;
    enc.l_S = l_S;
    enc.l_A = l_A;
    enc.conv1 = ConvLayer::make(3, 8, 2, Activation::LeakyRelu, rng);
    enc.conv2 = ConvLayer::make(8, 16, 2, Activation::LeakyRelu, rng);
    enc.conv3 = ConvLayer::make(16, 32, 2, Activation::LeakyRelu, rng);
    const int flat = enc.flat_dim();
    const std::vector<Activation> acts = {Activation::LeakyRelu, Activation::Identity};
    enc.pose_head = DenseNet::make({flat, head_hidden, 3}, acts, rng);
    enc.light_head = DenseNet::make({flat, head_hidden, 3 * kShCoeffs}, acts, rng);
    enc.code_C_head = DenseNet::make({flat, head_hidden, l_C}, acts, rng);
    enc.code_S_head = DenseNet::make({flat, head_hidden, l_S}, acts, rng);
    enc.code_A_head = DenseNet::make({flat, head_hidden, l_A}, acts, rng);
    enc.validate();
    return enc;
}

void ImageEncoder::to_store(TensorStore& store, const std::string& prefix) const {
    Tensor meta;
    meta.name = prefix + ".dims";
    meta.dims = {4};
    meta.data = {static_cast<double>(input_size), static_cast<double>(l_C),
                 static_cast<double>(l_S), static_cast<double>(l_A)};
    store.put(std::move(meta));
    conv1.to_store(store, prefix + ".conv1");
    conv2.to_store(store, prefix + ".conv2");
    conv3.to_store(store, prefix + ".conv3");
    pose_head.to_store(store, prefix + ".pose");
    light_head.to_store(store, prefix + ".light");
    code_C_head.to_store(store, prefix + ".code_C");
    code_S_head.to_store(store, prefix + ".code_S");
    code_A_head.to_store(store, prefix + ".code_A");
}

ImageEncoder ImageEncoder::from_store(const TensorStore& store, const std::string& prefix) {
    const Tensor& meta = store.get(prefix + ".dims");
    if (meta.data.size() != 4) throw IoError("stored image encoder has bad metadata");
    ImageEncoder enc;
    enc.input_size = static_cast<int>(meta.data[0]);
    enc.l_C = static_cast<int>(meta.data[1]);
    enc.l_S = static_cast<int>(meta.data[2]);
    enc.l_A = static_cast<int>(meta.data[3]);
    enc.conv1 = ConvLayer::from_store(store, prefix + ".conv1");
    enc.conv2 = ConvLayer::from_store(store, prefix + ".conv2");
    enc.conv3 = ConvLayer::from_store(store, prefix + ".conv3");
    enc.pose_head = DenseNet::from_store(store, prefix + ".pose");
    enc.light_head = DenseNet::from_store(store, prefix + ".light");
    enc.code_C_head = DenseNet::from_store(store, prefix + ".code_C");
    enc.code_S_head = DenseNet::from_store(store, prefix + ".code_S");
    enc.code_A_head = DenseNet::from_store(store, prefix + ".code_A");
    enc.validate();
    return enc;
}

ImageEncoderEval image_encode(const ImageEncoder& enc, const ImageRGB& image) {
    enc.validate();
    if (image.width != enc.input_size || image.height != enc.input_size)
        throw UsageError("image size does not match the encoder input size");
    ImageEncoderEval ev;
    const FeatureMap in = feature_map_from_image(image);
    const FeatureMap f1 = conv_forward(enc.conv1, in, &ev.t1);
    const FeatureMap f2 = conv_forward(enc.conv2, f1, &ev.t2);
    const FeatureMap f3 = conv_forward(enc.conv3, f2, &ev.t3);
    ev.maps = {f1, f2, f3};

    Vector flat(f3.data.size());
    for (std::size_t i = 0; i < f3.data.size(); ++i) flat[i] = f3.data[i];

    auto run = [&](const DenseNet& head, Tape& tape) {
        auto [out, t] = forward(head, flat);
        tape = std::move(t);
        return out;
    };
    const Vector pose = run(enc.pose_head, ev.pose_tape);
    ev.pose = {pose[0], pose[1], pose[2]};
    const Vector light = run(enc.light_head, ev.light_tape);
    for (int c = 0; c < 3; ++c)
        for (int b = 0; b < kShCoeffs; ++b) ev.light.gamma(c, b) = light[c * kShCoeffs + b];
    ev.codes.f_C = run(enc.code_C_head, ev.cC_tape);
    ev.codes.f_S = run(enc.code_S_head, ev.cS_tape);
    ev.codes.f_A = run(enc.code_A_head, ev.cA_tape);
    return ev;
}

ImageEncoderGrads ImageEncoderGrads::zeros_like(const ImageEncoder& enc) {
    ImageEncoderGrads g;
    g.conv1 = ConvGrads::zeros(enc.conv1);
    g.conv2 = ConvGrads::zeros(enc.conv2);
    g.conv3 = ConvGrads::zeros(enc.conv3);
    g.pose_head = NetGrads::zeros_like(enc.pose_head);
    g.light_head = NetGrads::zeros_like(enc.light_head);
    g.code_C_head = NetGrads::zeros_like(enc.code_C_head);
    g.code_S_head = NetGrads::zeros_like(enc.code_S_head);
    g.code_A_head = NetGrads::zeros_like(enc.code_A_head);
    return g;
}

void ImageEncoderGrads::add_scaled(const ImageEncoderGrads& other, double s) {
    conv1.add_scaled(other.conv1, s);
    conv2.add_scaled(other.conv2, s);
    conv3.add_scaled(other.conv3, s);
    pose_head.add_scaled(other.pose_head, s);
    light_head.add_scaled(other.light_head, s);
    code_C_head.add_scaled(other.code_C_head, s);
    code_S_head.add_scaled(other.code_S_head, s);
    code_A_head.add_scaled(other.code_A_head, s);
}

void ImageEncoderGrads::scale(double s) {
    conv1.scale(s);
    conv2.scale(s);
    conv3.scale(s);
    pose_head.scale(s);
    light_head.scale(s);
    code_C_head.scale(s);
    code_S_head.scale(s);
    code_A_head.scale(s);
}

bool ImageEncoderGrads::all_finite() const {
    auto conv_ok = [](const ConvGrads& g) {
        return g.d_weight.allFinite() && g.d_bias.allFinite();
    };
    return conv_ok(conv1) && conv_ok(conv2) && conv_ok(conv3) && pose_head.all_finite() &&
           light_head.all_finite() && code_C_head.all_finite() && code_S_head.all_finite() &&
           code_A_head.all_finite();
}

void image_encode_backward(const ImageEncoder& enc, ImageEncoderEval& eval,
                           const ImageEncoderPullback& pull, ImageEncoderGrads& grads) {
    const int flat = enc.flat_dim();
    Vector d_flat = Vector::Zero(flat);

    auto head_back = [&](const DenseNet&, Tape& tape, const Vector& d_out, NetGrads& acc) {
        if (d_out.size() == 0) return;
        BackwardResult r = backward(tape, d_out, true);
        acc.add_scaled(r.grads, 1.0);
        d_flat += r.input_grad.row(0).transpose();
    };

    Vector d_pose_v;
    if (pull.d_pose[0] != 0.0 || pull.d_pose[1] != 0.0 || pull.d_pose[2] != 0.0) {
        d_pose_v.resize(3);
        d_pose_v << pull.d_pose[0], pull.d_pose[1], pull.d_pose[2];
    }
    Vector d_light_v;
    if (pull.d_gamma.size() != 0) {
        if (pull.d_gamma.rows() != 3 || pull.d_gamma.cols() != kShCoeffs)
            throw UsageError("lighting gradient must be 3 x 9");
        d_light_v = Vector::Zero(3 * kShCoeffs);
        for (int c = 0; c < 3; ++c)
            for (int b = 0; b < kShCoeffs; ++b) d_light_v[c * kShCoeffs + b] = pull.d_gamma(c, b);
    }
    head_back(enc.pose_head, eval.pose_tape, d_pose_v, grads.pose_head);
    head_back(enc.light_head, eval.light_tape, d_light_v, grads.light_head);
    head_back(enc.code_C_head, eval.cC_tape, pull.d_fC, grads.code_C_head);
    head_back(enc.code_S_head, eval.cS_tape, pull.d_fS, grads.code_S_head);
    head_back(enc.code_A_head, eval.cA_tape, pull.d_fA, grads.code_A_head);

    if (!pull.d_maps.empty() && pull.d_maps.size() != 3)
        throw UsageError("expected one gradient per exposed feature map");

    FeatureMap d_f3 = FeatureMap::zeros(eval.maps[2].h, eval.maps[2].w, eval.maps[2].c);
    for (std::size_t i = 0; i < d_f3.data.size(); ++i) d_f3.data[i] = d_flat[i];
    if (!pull.d_maps.empty())
        for (std::size_t i = 0; i < d_f3.data.size(); ++i) d_f3.data[i] += pull.d_maps[2].data[i];

    FeatureMap d_f2 = conv_backward(enc.conv3, eval.t3, d_f3, grads.conv3);
    if (!pull.d_maps.empty())
        for (std::size_t i = 0; i < d_f2.data.size(); ++i) d_f2.data[i] += pull.d_maps[1].data[i];
    FeatureMap d_f1 = conv_backward(enc.conv2, eval.t2, d_f2, grads.conv2);
    if (!pull.d_maps.empty())
        for (std::size_t i = 0; i < d_f1.data.size(); ++i) d_f1.data[i] += pull.d_maps[0].data[i];
    conv_backward(enc.conv1, eval.t1, d_f1, grads.conv1);
}

std::vector<ParamView> param_views(ImageEncoder& enc, const std::string& prefix) {
    std::vector<ParamView> views;
    auto append = [&](std::vector<ParamView> v) {
        views.insert(views.end(), v.begin(), v.end());
    };
    append(param_views(enc.conv1, prefix + ".conv1"));
    append(param_views(enc.conv2, prefix + ".conv2"));
    append(param_views(enc.conv3, prefix + ".conv3"));
    append(param_views(enc.pose_head, prefix + ".pose"));
    append(param_views(enc.light_head, prefix + ".light"));
    append(param_views(enc.code_C_head, prefix + ".code_C"));
    append(param_views(enc.code_S_head, prefix + ".code_S"));
    append(param_views(enc.code_A_head, prefix + ".code_A"));
    return views;
}

std::vector<GradView> grad_views(const ImageEncoderGrads& grads) {
    std::vector<GradView> views;
    auto append = [&](std::vector<GradView> v) {
        views.insert(views.end(), v.begin(), v.end());
    };
    append(grad_views(grads.conv1));
    append(grad_views(grads.conv2));
    append(grad_views(grads.conv3));
    append(grad_views(grads.pose_head));
    append(grad_views(grads.light_head));
    append(grad_views(grads.code_C_head));
    append(grad_views(grads.code_S_head));
    append(grad_views(grads.code_A_head));
    return views;
}

} // namespace jof
