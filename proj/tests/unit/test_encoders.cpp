#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <jof/encoders.hpp>

#include <cmath>

using namespace jof;

namespace {

double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(std::abs(want), 1e-6);
}

ImageRGB random_image(int size, Rng& rng) {
    ImageRGB img = ImageRGB::zeros(size, size);
    for (double& v : img.data) v = rng.uniform();
    return img;
}

} // namespace

TEST_CASE("voxel encoder maps a grid to codes deterministically") {
    Rng rng(501);
    VoxelEncoder enc = VoxelEncoder::make(8, 4, 6, 5, 32, 3, rng);
    VoxelGrid grid = VoxelGrid::zeros(8);
    Rng grng(502);
    for (double& v : grid.data) v = grng.uniform();

    VoxelEncoderEval a = voxel_encode(enc, grid);
    VoxelEncoderEval b = voxel_encode(enc, grid);
    CHECK(a.codes.f_C.size() == 4);
    CHECK(a.codes.f_S.size() == 6);
    CHECK(a.codes.f_A.size() == 5);
    CHECK((a.codes.f_C - b.codes.f_C).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.codes.f_S - b.codes.f_S).cwiseAbs().maxCoeff() == 0.0);

    VoxelGrid wrong = VoxelGrid::zeros(4);
    CHECK_THROWS_AS(voxel_encode(enc, wrong), UsageError);
}

TEST_CASE("voxel encoder backward matches finite differences") {
    Rng rng(503);
    VoxelEncoder enc = VoxelEncoder::make(4, 3, 4, 3, 16, 3, rng);
    VoxelGrid grid = VoxelGrid::zeros(4);
    Rng grng(504);
    for (double& v : grid.data) v = grng.uniform();

    Vector d_fC(3), d_fS(4), d_fA(3);
    for (int i = 0; i < 3; ++i) d_fC[i] = grng.normal();
    for (int i = 0; i < 4; ++i) d_fS[i] = grng.normal();
    for (int i = 0; i < 3; ++i) d_fA[i] = grng.normal();

    VoxelEncoderEval ev = voxel_encode(enc, grid);
    const NetGrads grads = voxel_encode_backward(enc, ev, d_fC, d_fS, d_fA);

    auto objective = [&](const VoxelEncoder& e) {
        const VoxelEncoderEval out = voxel_encode(e, grid);
        return d_fC.dot(out.codes.f_C) + d_fS.dot(out.codes.f_S) + d_fA.dot(out.codes.f_A);
    };
    const double h = 1e-5;
    for (std::size_t layer = 0; layer < enc.net.layers.size(); ++layer)
        for (Eigen::Index i = 0; i < enc.net.layers[layer].weight.size(); i += 97) {
            VoxelEncoder plus = enc, minus = enc;
            plus.net.layers[layer].weight.data()[i] += h;
            minus.net.layers[layer].weight.data()[i] -= h;
            const double fd = (objective(plus) - objective(minus)) / (2.0 * h);
            const double got = grads.weight[layer].data()[i];
            if (std::abs(got) > 1e-6) CHECK(rel_err(fd, got) < 1e-3);
        }
}

TEST_CASE("voxel encoder store round-trip is exact") {
    Rng rng(505);
    VoxelEncoder enc = VoxelEncoder::make(4, 3, 4, 3, 16, 5, rng);
    TensorStore store;
    enc.to_store(store, "venc");
    const VoxelEncoder back = VoxelEncoder::from_store(store, "venc");
    CHECK(back.voxel_res == 4);
    CHECK(back.classifier.W.rows() == 5);
    for (std::size_t l = 0; l < enc.net.layers.size(); ++l)
        CHECK((back.net.layers[l].weight - enc.net.layers[l].weight).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.classifier.W - enc.classifier.W).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("image encoder exposes three feature maps with 56 sampled channels") {
    Rng rng(506);
    ImageEncoder enc = ImageEncoder::make(64, 8, 32, 32, 32, rng);
    CHECK(enc.sampled_feature_width() == 56);
    CHECK(enc.flat_dim() == 8 * 8 * 32);

    ImageRGB img = random_image(64, rng);
    const ImageEncoderEval ev = image_encode(enc, img);
    REQUIRE(ev.maps.size() == 3);
    CHECK(ev.maps[0].h == 32);
    CHECK(ev.maps[0].c == 8);
    CHECK(ev.maps[1].h == 16);
    CHECK(ev.maps[1].c == 16);
    CHECK(ev.maps[2].h == 8);
    CHECK(ev.maps[2].c == 32);
    CHECK(ev.codes.f_C.size() == 8);
    CHECK(ev.codes.f_S.size() == 32);
    CHECK(ev.codes.f_A.size() == 32);
    CHECK(ev.light.gamma.rows() == 3);
    CHECK(std::isfinite(ev.pose[2]));

    ImageRGB small = random_image(32, rng);
    CHECK_THROWS_AS(image_encode(enc, small), UsageError);
}

TEST_CASE("image encoder works at reduced input sizes") {
    Rng rng(507);
    ImageEncoder enc = ImageEncoder::make(16, 4, 6, 5, 16, rng);
    CHECK(enc.flat_dim() == 2 * 2 * 32);
    ImageRGB img = random_image(16, rng);
    const ImageEncoderEval ev = image_encode(enc, img);
    CHECK(ev.maps[0].h == 8);
    CHECK(ev.maps[1].h == 4);
    CHECK(ev.maps[2].h == 2);
}

TEST_CASE("image encoder backward matches finite differences") {
    Rng rng(508);
    ImageEncoder enc = ImageEncoder::make(16, 3, 4, 3, 12, rng);
    ImageRGB img = random_image(16, rng);

    ImageEncoderPullback pull;
    Rng prng(509);
    pull.d_fC = Vector::Zero(3);
    pull.d_fS = Vector::Zero(4);
    pull.d_fA = Vector::Zero(3);
    for (int i = 0; i < 3; ++i) pull.d_fC[i] = prng.normal();
    for (int i = 0; i < 4; ++i) pull.d_fS[i] = prng.normal();
    for (int i = 0; i < 3; ++i) pull.d_fA[i] = prng.normal();
    pull.d_pose = {prng.normal(), prng.normal(), prng.normal()};
    pull.d_gamma = Matrix::Zero(3, kShCoeffs);
    for (Eigen::Index i = 0; i < pull.d_gamma.size(); ++i) pull.d_gamma.data()[i] = prng.normal();
    ImageEncoderEval probe = image_encode(enc, img);
    pull.d_maps.clear();
    for (const FeatureMap& m : probe.maps) {
        FeatureMap g = FeatureMap::zeros(m.h, m.w, m.c);
        for (double& v : g.data) v = prng.normal() * 0.1;
        pull.d_maps.push_back(g);
    }

    auto objective = [&](const ImageEncoder& e) {
        const ImageEncoderEval ev = image_encode(e, img);
        double s = pull.d_fC.dot(ev.codes.f_C) + pull.d_fS.dot(ev.codes.f_S) +
                   pull.d_fA.dot(ev.codes.f_A);
        for (int k = 0; k < 3; ++k) s += pull.d_pose[k] * ev.pose[k];
        s += (pull.d_gamma.cwiseProduct(ev.light.gamma)).sum();
        for (int m = 0; m < 3; ++m)
            for (std::size_t i = 0; i < ev.maps[m].data.size(); ++i)
                s += pull.d_maps[m].data[i] * ev.maps[m].data[i];
        return s;
    };

    ImageEncoderEval ev = image_encode(enc, img);
    ImageEncoderGrads grads = ImageEncoderGrads::zeros_like(enc);
    image_encode_backward(enc, ev, pull, grads);

    const double h = 1e-5;
    auto fd_weight = [&](auto mutate) {
        ImageEncoder plus = enc, minus = enc;
        mutate(plus, h);
        mutate(minus, -h);
        return (objective(plus) - objective(minus)) / (2.0 * h);
    };

    struct ConvProbe {
        int which;
        Eigen::Index idx;
    };
    for (const ConvProbe& p : {ConvProbe{1, 0}, ConvProbe{1, 13}, ConvProbe{2, 40},
                               ConvProbe{3, 7}, ConvProbe{3, 100}}) {
        auto pick = [&](ImageEncoder& e) -> ConvLayer& {
            return p.which == 1 ? e.conv1 : p.which == 2 ? e.conv2 : e.conv3;
        };
        const double fd = fd_weight([&](ImageEncoder& e, double d) {
            pick(e).weight.data()[p.idx] += d;
        });
        const ConvGrads& g = p.which == 1 ? grads.conv1 : p.which == 2 ? grads.conv2 : grads.conv3;
        const double got = g.d_weight.data()[p.idx];
        if (std::abs(got) > 1e-6) CHECK(rel_err(fd, got) < 1e-3);
    }

    struct HeadProbe {
        DenseNet ImageEncoder::*head;
        NetGrads ImageEncoderGrads::*grad;
    };
    const HeadProbe heads[] = {{&ImageEncoder::pose_head, &ImageEncoderGrads::pose_head},
                               {&ImageEncoder::light_head, &ImageEncoderGrads::light_head},
                               {&ImageEncoder::code_C_head, &ImageEncoderGrads::code_C_head},
                               {&ImageEncoder::code_S_head, &ImageEncoderGrads::code_S_head},
                               {&ImageEncoder::code_A_head, &ImageEncoderGrads::code_A_head}};
    for (const HeadProbe& hp : heads) {
        for (Eigen::Index idx : {Eigen::Index(0), Eigen::Index(51)}) {
            const double fd = fd_weight([&](ImageEncoder& e, double d) {
                (e.*(hp.head)).layers[0].weight.data()[idx] += d;
            });
            const double got = (grads.*(hp.grad)).weight[0].data()[idx];
            if (std::abs(got) > 1e-6) CHECK(rel_err(fd, got) < 1e-3);
        }
    }
}

TEST_CASE("image encoder head isolation") {
    Rng rng(510);
    ImageEncoder enc = ImageEncoder::make(16, 3, 4, 3, 12, rng);
    ImageRGB img = random_image(16, rng);
    ImageEncoderEval ev = image_encode(enc, img);

    // only a pose pullback: every head gradient except pose stays zero
    ImageEncoderPullback pull;
    pull.d_pose = {1.0, -0.5, 0.25};
    ImageEncoderGrads grads = ImageEncoderGrads::zeros_like(enc);
    image_encode_backward(enc, ev, pull, grads);

    auto zero_net = [](const NetGrads& g) {
        for (const Matrix& w : g.weight)
            if (w.cwiseAbs().maxCoeff() != 0.0) return false;
        return true;
    };
    CHECK(!zero_net(grads.pose_head));
    CHECK(zero_net(grads.light_head));
    CHECK(zero_net(grads.code_C_head));
    CHECK(zero_net(grads.code_S_head));
    CHECK(zero_net(grads.code_A_head));
    // the shared trunk still learns through the pose head
    CHECK(grads.conv1.d_weight.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("image encoder store round-trip is exact") {
    Rng rng(511);
    ImageEncoder enc = ImageEncoder::make(16, 3, 4, 3, 12, rng);
    TensorStore store;
    enc.to_store(store, "ienc");
    ImageEncoder back = ImageEncoder::from_store(store, "ienc");
    CHECK(back.input_size == 16);

    Rng irng(512);
    ImageRGB img = random_image(16, irng);
    const ImageEncoderEval a = image_encode(enc, img);
    const ImageEncoderEval b = image_encode(back, img);
    CHECK((a.codes.f_S - b.codes.f_S).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.light.gamma - b.light.gamma).cwiseAbs().maxCoeff() == 0.0);
    for (int k = 0; k < 3; ++k) CHECK(a.pose[k] == b.pose[k]);
}

TEST_CASE("encoder parameter and gradient views align") {
    Rng rng(513);
    ImageEncoder enc = ImageEncoder::make(16, 3, 4, 3, 12, rng);
    ImageEncoderGrads grads = ImageEncoderGrads::zeros_like(enc);
    const std::vector<ParamView> pv = param_views(enc, "enc");
    const std::vector<GradView> gv = grad_views(grads);
    REQUIRE(pv.size() == gv.size());
    for (std::size_t i = 0; i < pv.size(); ++i) CHECK(pv[i].size == gv[i].size);

    VoxelEncoder venc = VoxelEncoder::make(4, 3, 4, 3, 16, 3, rng);
    const std::vector<ParamView> vv = param_views(venc, "venc");
    CHECK(vv.size() == venc.net.layers.size() * 2 + 2);
}
