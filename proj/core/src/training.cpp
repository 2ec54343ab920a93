#include <jof/training.hpp>

#include <jof/metrics.hpp>
#include <jof/optim.hpp>

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace jof {

void Curve::add_row(const std::vector<double>& row) {
    if (row.size() != columns.size()) throw UsageError("curve row width mismatch");
    rows.push_back(row);
}

std::vector<double> Curve::column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw UsageError("no curve column named " + name);
    const std::size_t j = static_cast<std::size_t>(it - columns.begin());
    std::vector<double> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = rows[i][j];
    return out;
}

std::string Curve::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    for (std::size_t j = 0; j < columns.size(); ++j) out << (j ? "," : "") << columns[j];
    out << "\n";
    for (const auto& row : rows) {
        for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
        out << "\n";
    }
    return out.str();
}

void Curve::save_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << to_csv();
    if (!out) throw IoError("failed writing " + path);
}

namespace {

constexpr std::uint64_t kStep1Tag = 0x31707473ull;
constexpr std::uint64_t kStep2Tag = 0x32707473ull;
constexpr std::uint64_t kStep3Tag = 0x33707473ull;
constexpr double kMinCameraDistance = 0.1;

void append_views(std::vector<ParamView>& dst, std::vector<ParamView> more) {
    for (auto& v : more) dst.push_back(std::move(v));
}

void append_grads(std::vector<GradView>& dst, std::vector<GradView> more) {
    for (auto& g : more) dst.push_back(g);
}

int resume_next_step(const TensorStore& store) {
    return static_cast<int>(store.get("progress.next_step").as_scalar());
}

// per-hit-pixel pieces of the photometric chain shared by every render user
struct PhotoChain {
    double img_loss = 0.0;
    std::vector<std::size_t> hits; // pixel index per hit
    std::vector<Vec3> xs;
    std::vector<int> idx;
    std::vector<Vec3> shading;
    std::vector<std::array<double, kShCoeffs>> basis;
    std::vector<Vec3> d_rgb; // d img_loss / d albedo, clamp applied
    Matrix d_gamma = Matrix::Zero(3, kShCoeffs);
};

PhotoChain photometric_chain(const RenderedFrame& frame, const ImageRGB& target,
                             const ImageGray& mask, const Lighting& light) {
    PhotoChain pc;
    pc.img_loss = photometric_loss(frame.image, target, mask);
    const ImageRGB d_img = photometric_loss_grad(frame.image, target, mask);
    for (std::size_t p = 0; p < frame.surface.points.size(); ++p) {
        if (!frame.surface.points[p].hit) continue;
        const Vec3& n = frame.normals[p];
        const Vec3& a = frame.albedo[p];
        const Vec3 s = shade(light, n);
        const std::array<double, kShCoeffs> H = sh_basis(n);
        Vec3 drgb = {0.0, 0.0, 0.0};
        for (int c = 0; c < 3; ++c) {
            const double raw = a[c] * s[c];
            const double pass = (raw > 0.0 && raw < 1.0) ? d_img.data[3 * p + c] : 0.0;
            drgb[c] = pass * s[c];
            const double ds = pass * a[c];
            if (ds != 0.0)
                for (int b = 0; b < kShCoeffs; ++b) pc.d_gamma(c, b) += ds * H[b];
        }
        pc.hits.push_back(p);
        pc.xs.push_back(frame.surface.points[p].x);
        pc.idx.push_back(frame.branch[p]);
        pc.shading.push_back(s);
        pc.basis.push_back(H);
        pc.d_rgb.push_back(drgb);
    }
    return pc;
}

bool nonzero(const Vec3& v) { return v[0] != 0.0 || v[1] != 0.0 || v[2] != 0.0; }

// one albedo-decoder backward pass over the pixels that carry gradient
void albedo_pullback(const JofParams& params, const LatentCodes& codes,
                     const std::vector<Vec3>& xs_all, const std::vector<int>& idx_all,
                     const std::vector<Vec3>& d_rgb_all, bool want_param_grads, Vector& d_fC,
                     Vector& d_fS, Vector& d_fA, NetGrads& d_albedo) {
    d_fC = Vector::Zero(params.l_C);
    d_fS = Vector::Zero(params.l_S);
    d_fA = Vector::Zero(params.l_A);
    std::vector<Vec3> xs, d_rgb;
    std::vector<int> idx;
    for (std::size_t i = 0; i < xs_all.size(); ++i) {
        if (!nonzero(d_rgb_all[i])) continue;
        xs.push_back(xs_all[i]);
        idx.push_back(idx_all[i]);
        d_rgb.push_back(d_rgb_all[i]);
    }
    if (want_param_grads) d_albedo = NetGrads::zeros_like(params.albedo_net);
    if (xs.empty()) return;
    AlbedoBatchEval eval = albedo_forward_batch(params, codes, xs, idx);
    AlbedoBatchGrad grad = albedo_backward_batch(params, eval, d_rgb, want_param_grads);
    d_fC += grad.d_fC;
    d_fS += grad.d_fS;
    d_fA += grad.d_fA;
    if (want_param_grads) d_albedo = std::move(grad.params);
}

} // namespace

PoseParams pose_from_prediction(const Vec3& pred, const PoseParams& intrinsics) {
    PoseParams p = intrinsics;
    p.azimuth = pred[0];
    p.elevation = pred[1];
    p.distance = std::max(pred[2], kMinCameraDistance);
    return p;
}

RenderChain render_photometric(const JofParams& params, const LatentCodes& codes,
                               const PoseParams& pose, const Lighting& light,
                               const ImageRGB& target, const ImageGray& mask,
                               const SearchConfig& search, bool want_albedo_grads) {
    if (target.width != mask.width || target.height != mask.height)
        throw UsageError("image/mask size mismatch");
    const Projection proj = compose_projection(pose, target.width, target.height);
    RenderConfig rcfg;
    rcfg.search = search;
    RenderChain out;
    out.frame = render(params, codes, proj, light, target.width, target.height, rcfg);
    PhotoChain pc = photometric_chain(out.frame, target, mask, light);
    out.img_loss = pc.img_loss;
    out.d_gamma = std::move(pc.d_gamma);
    albedo_pullback(params, codes, pc.xs, pc.idx, pc.d_rgb, want_albedo_grads, out.d_fC, out.d_fS,
                    out.d_fA, out.d_albedo);
    return out;
}

ViewTermsEval view_terms(const JofParams& params, const LatentCodes& codes,
                         const PoseParams& pose, const Lighting& light, const ImageRGB& image,
                         const ImageGray& mask, const LossWeights& w, const SearchConfig& search,
                         bool want_albedo_grads, bool want_pose_grad) {
    if (image.width != mask.width || image.height != mask.height)
        throw UsageError("image/mask size mismatch");
    w.validate();
    const int width = image.width, height = image.height;
    const Projection proj = compose_projection(pose, width, height);
    RenderConfig rcfg;
    rcfg.search = search;
    ViewTermsEval out;
    out.frame = render(params, codes, proj, light, width, height, rcfg);
    PhotoChain pc = photometric_chain(out.frame, image, mask, light);
    out.terms.img = pc.img_loss;
    out.d_gamma = pc.d_gamma;

    out.terms.bws = white_shading_loss(pc.shading, w.shading_target);
    const std::vector<Vec3> d_ws = white_shading_grad(pc.shading, w.shading_target);
    for (std::size_t i = 0; i < pc.hits.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            const double ds = w.lambda3 * d_ws[i][c];
            if (ds == 0.0) continue;
            for (int b = 0; b < kShCoeffs; ++b) out.d_gamma(c, b) += ds * pc.basis[i][b];
        }

    // albedo constancy lives on pixels that are both observed and rendered
    ImageRGB A = ImageRGB::zeros(width, height);
    ImageGray Mc = ImageGray::zeros(width, height);
    for (std::size_t i = 0; i < pc.hits.size(); ++i) {
        const std::size_t p = pc.hits[i];
        if (mask.data[p] <= 0.5) continue;
        Mc.data[p] = 1.0;
        for (int c = 0; c < 3; ++c) A.data[3 * p + c] = out.frame.albedo[p][c];
    }
    out.terms.alb = albedo_constancy_loss(A, image, Mc, w.alpha, w.p);
    const ImageRGB d_A = albedo_constancy_grad(A, image, Mc, w.alpha, w.p);
    std::vector<Vec3> d_rgb = pc.d_rgb;
    for (std::size_t i = 0; i < pc.hits.size(); ++i) {
        const std::size_t p = pc.hits[i];
        for (int c = 0; c < 3; ++c) d_rgb[i][c] += w.lambda3 * d_A.data[3 * p + c];
    }
    albedo_pullback(params, codes, pc.xs, pc.idx, d_rgb, want_albedo_grads, out.d_fC, out.d_fS,
                    out.d_fA, out.d_albedo);

    SilhouetteEval se =
        silhouette_loss(params, codes, pose, mask, search, want_pose_grad, false);
    out.terms.sil = se.loss;
    out.d_fC += w.lambda1 * se.d_fC;
    out.d_fS += w.lambda1 * se.d_fS;
    if (want_pose_grad)
        for (int k = 0; k < 3; ++k) out.d_pose[k] = w.lambda1 * se.d_pose[k];
    return out;
}

// --- stage 1 -------------------------------------------------------------------

Step1Result step1_pretrain_decoders(const std::vector<SceneInstance>& dataset,
                                    const TrainConfig& cfg, const CheckpointHooks& hooks) {
    cfg.validate();
    if (dataset.empty()) throw UsageError("empty dataset");
    for (const SceneInstance& inst : dataset)
        if (inst.samples.empty()) throw UsageError("instance without point samples");

    const std::uint64_t stage_seed = cfg.seed ^ kStep1Tag;
    Step1Result res;
    Adam opt(cfg.lr_step1);
    int start = 0;
    if (hooks.resume) {
        res.params = JofParams::from_store(*hooks.resume, "params");
        res.encoder = VoxelEncoder::from_store(*hooks.resume, "venc");
        opt.state_from(*hooks.resume, "opt");
        start = resume_next_step(*hooks.resume);
    } else {
        Rng init_rng(Rng::mix(stage_seed));
        res.params = JofParams::make(cfg.branches, cfg.l_C, cfg.l_S, cfg.l_A, cfg.trunk_width,
                                     cfg.trunk_depth, init_rng);
        res.encoder = VoxelEncoder::make(cfg.voxel_res, cfg.l_C, cfg.l_S, cfg.l_A,
                                         cfg.voxel_hidden, cfg.categories, init_rng);
    }
    res.curve.columns = {"step", "loss", "loss_S", "loss_A", "loss_C"};
    res.steps_done = start;

    std::vector<ParamView> views = param_views(res.params.shape_net, "shape");
    append_views(views, param_views(res.params.albedo_net, "albedo"));
    append_views(views, param_views(res.encoder, "venc"));

    auto take_snapshot = [&](int next_step) {
        TensorStore s;
        res.params.to_store(s, "params");
        res.encoder.to_store(s, "venc");
        opt.state_to(s, "opt");
        s.put(Tensor::scalar("progress.next_step", static_cast<double>(next_step)));
        cfg.to_store(s, "config");
        return s;
    };
    TensorStore last_good = take_snapshot(start);

    const auto n = static_cast<std::int64_t>(dataset.size());
    for (int s = start; s < cfg.steps1; ++s) {
        Rng r = Rng::for_step(stage_seed, static_cast<std::uint64_t>(s));
        NetGrads g_shape = NetGrads::zeros_like(res.params.shape_net);
        NetGrads g_albedo = NetGrads::zeros_like(res.params.albedo_net);
        NetGrads g_vnet = NetGrads::zeros_like(res.encoder.net);
        ClassifierGrads g_cls;
        g_cls.d_W = Matrix::Zero(res.encoder.classifier.W.rows(), res.encoder.classifier.W.cols());
        g_cls.d_b = Vector::Zero(res.encoder.classifier.b.size());
        double loss = 0.0, l_S = 0.0, l_A = 0.0, l_C = 0.0;
        const double inv = 1.0 / cfg.batch_size;

        for (int b = 0; b < cfg.batch_size; ++b) {
            const SceneInstance& inst = dataset[static_cast<std::size_t>(r.uniform_int(0, n - 1))];
            const auto n_samples = static_cast<std::int64_t>(inst.samples.size());
            std::vector<Vec3> xs(cfg.points_per_shape);
            std::vector<double> os(cfg.points_per_shape);
            std::vector<Vec3> rgbs(cfg.points_per_shape);
            for (int j = 0; j < cfg.points_per_shape; ++j) {
                const PointSample& ps =
                    inst.samples[static_cast<std::size_t>(r.uniform_int(0, n_samples - 1))];
                xs[j] = ps.x;
                os[j] = ps.o;
                rgbs[j] = ps.albedo;
            }
            VoxelEncoderEval venc_eval = voxel_encode(res.encoder, inst.voxel);
            DecoderPretrainEval dp =
                decoder_pretrain_loss(res.params, venc_eval.codes, xs, os, rgbs,
                                      inst.shape.category, res.encoder.classifier, true);
            loss += dp.loss * inv;
            l_S += dp.loss_S * inv;
            l_A += dp.loss_A * inv;
            l_C += dp.loss_C * inv;
            g_shape.add_scaled(dp.d_shape, inv);
            g_albedo.add_scaled(dp.d_albedo, inv);
            g_cls.d_W += inv * dp.d_classifier.d_W;
            g_cls.d_b += inv * dp.d_classifier.d_b;
            const NetGrads g_v =
                voxel_encode_backward(res.encoder, venc_eval, dp.d_fC, dp.d_fS, dp.d_fA);
            g_vnet.add_scaled(g_v, inv);
        }

        if (!is_finite(loss)) {
            res.params = JofParams::from_store(last_good, "params");
            res.encoder = VoxelEncoder::from_store(last_good, "venc");
            res.steps_done = resume_next_step(last_good);
            res.diverged = true;
            break;
        }
        std::vector<GradView> gv = grad_views(g_shape);
        append_grads(gv, grad_views(g_albedo));
        append_grads(gv, grad_views(g_vnet));
        append_grads(gv, grad_views(g_cls));
        opt.step(views, gv);
        res.curve.add_row({static_cast<double>(s), loss, l_S, l_A, l_C});
        const int next = s + 1;
        res.steps_done = next;
        if (next % cfg.checkpoint_every == 0 || next == cfg.steps1) {
            last_good = take_snapshot(next);
            if (hooks.save) hooks.save(next, last_good);
        }
    }
    return res;
}

// --- stage 2 -------------------------------------------------------------------

Step2Result step2_pretrain_encoder(const std::vector<SceneInstance>& dataset,
                                   const JofParams& params, const VoxelEncoder& voxel_encoder,
                                   const TrainConfig& cfg, const CheckpointHooks& hooks) {
    cfg.validate();
    if (dataset.empty()) throw UsageError("empty dataset");
    if (cfg.width != cfg.height) throw UsageError("encoder training requires square images");
    for (const SceneInstance& inst : dataset) {
        if (inst.views.empty()) throw UsageError("instance without views");
        for (const SceneView& view : inst.views)
            if (view.image.width != cfg.width || view.image.height != cfg.height)
                throw UsageError("dataset image size does not match the config");
    }

    std::vector<LatentCodes> targets;
    targets.reserve(dataset.size());
    for (const SceneInstance& inst : dataset) {
        VoxelEncoderEval e = voxel_encode(voxel_encoder, inst.voxel);
        targets.push_back(std::move(e.codes));
    }

    const std::uint64_t stage_seed = cfg.seed ^ kStep2Tag;
    Step2Result res;
    Adam opt(cfg.lr_step2);
    int start = 0;
    if (hooks.resume) {
        res.encoder = ImageEncoder::from_store(*hooks.resume, "ienc");
        opt.state_from(*hooks.resume, "opt");
        start = resume_next_step(*hooks.resume);
    } else {
        Rng init_rng(Rng::mix(stage_seed));
        res.encoder =
            ImageEncoder::make(cfg.width, cfg.l_C, cfg.l_S, cfg.l_A, cfg.head_hidden, init_rng);
    }
    res.curve.columns = {"step", "loss", "img", "code", "pose"};
    res.steps_done = start;

    std::vector<ParamView> views = param_views(res.encoder, "ienc");
    auto take_snapshot = [&](int next_step) {
        TensorStore s;
        res.encoder.to_store(s, "ienc");
        opt.state_to(s, "opt");
        s.put(Tensor::scalar("progress.next_step", static_cast<double>(next_step)));
        cfg.to_store(s, "config");
        return s;
    };
    TensorStore last_good = take_snapshot(start);
    const SearchConfig search = cfg.search();

    const auto n = static_cast<std::int64_t>(dataset.size());
    for (int s = start; s < cfg.steps2; ++s) {
        Rng r = Rng::for_step(stage_seed, static_cast<std::uint64_t>(s));
        ImageEncoderGrads grads = ImageEncoderGrads::zeros_like(res.encoder);
        double loss = 0.0, l_img = 0.0, l_code = 0.0, l_pose = 0.0;
        const double inv = 1.0 / cfg.batch_size;

        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto ii = static_cast<std::size_t>(r.uniform_int(0, n - 1));
            const SceneInstance& inst = dataset[ii];
            const SceneView& view =
                inst.views[static_cast<std::size_t>(r.uniform_int(
                    0, static_cast<std::int64_t>(inst.views.size()) - 1))];
            ImageEncoderEval ev = image_encode(res.encoder, view.image);
            const PoseParams pred_pose = pose_from_prediction(ev.pose, view.pose);
            RenderChain rc = render_photometric(params, ev.codes, pred_pose, ev.light, view.image,
                                                view.mask, search, false);
            const Vec3 pose_target = {view.pose.azimuth, view.pose.elevation, view.pose.distance};
            EncoderPretrainEval pe = encoder_pretrain_loss(ev.codes, ev.pose, targets[ii],
                                                           pose_target, rc.img_loss, cfg.weights);
            ImageEncoderPullback pull;
            pull.d_fC = inv * (pe.d_fC + rc.d_fC);
            pull.d_fS = inv * (pe.d_fS + rc.d_fS);
            pull.d_fA = inv * (pe.d_fA + rc.d_fA);
            for (int k = 0; k < 3; ++k) pull.d_pose[k] = inv * pe.d_pose[k];
            pull.d_gamma = inv * rc.d_gamma;
            image_encode_backward(res.encoder, ev, pull, grads);
            loss += pe.loss * inv;
            l_img += pe.loss_img * inv;
            l_code += pe.loss_code * inv;
            l_pose += pe.loss_pose * inv;
        }

        if (!is_finite(loss)) {
            res.encoder = ImageEncoder::from_store(last_good, "ienc");
            res.steps_done = resume_next_step(last_good);
            res.diverged = true;
            break;
        }
        opt.step(views, grad_views(grads));
        res.curve.add_row({static_cast<double>(s), loss, l_img, l_code, l_pose});
        const int next = s + 1;
        res.steps_done = next;
        if (next % cfg.checkpoint_every == 0 || next == cfg.steps2) {
            last_good = take_snapshot(next);
            if (hooks.save) hooks.save(next, last_good);
        }
    }
    return res;
}

// --- stage 3 -------------------------------------------------------------------

std::vector<UnlabeledImage> strip_to_masks(const std::vector<SceneInstance>& dataset) {
    std::vector<UnlabeledImage> stream;
    for (const SceneInstance& inst : dataset)
        for (const SceneView& view : inst.views) stream.push_back({view.image, view.mask});
    return stream;
}

Step3Result step3_finetune(const std::vector<UnlabeledImage>& stream, const ImageEncoder& encoder,
                           const JofParams& params, const Classifier& classifier,
                           const TrainConfig& cfg, const CheckpointHooks& hooks) {
    cfg.validate();
    classifier.validate();
    if (stream.empty()) throw UsageError("empty image stream");
    const int width = stream.front().image.width, height = stream.front().image.height;
    if (width != encoder.input_size || height != encoder.input_size)
        throw UsageError("stream image size does not match the encoder");
    for (const UnlabeledImage& u : stream)
        if (u.image.width != width || u.image.height != height || u.mask.width != width ||
            u.mask.height != height)
            throw UsageError("inconsistent stream image sizes");

    const std::uint64_t frozen_hash = params.shape_hash();
    const std::uint64_t stage_seed = cfg.seed ^ kStep3Tag;
    Step3Result res;
    res.encoder = encoder;
    res.params = params;
    Adam opt(cfg.lr_step3);
    int start = 0;
    if (hooks.resume) {
        res.encoder = ImageEncoder::from_store(*hooks.resume, "ienc");
        res.params = JofParams::from_store(*hooks.resume, "params");
        opt.state_from(*hooks.resume, "opt");
        start = resume_next_step(*hooks.resume);
        if (res.params.shape_hash() != frozen_hash)
            throw CheckError("resumed checkpoint carries a different shape decoder");
    }
    res.curve.columns = {"step", "total", "img", "sil", "fea", "alb", "bws"};
    res.steps_done = start;

    std::vector<ParamView> views = param_views(res.encoder, "ienc");
    append_views(views, param_views(res.params.albedo_net, "albedo"));
    auto take_snapshot = [&](int next_step) {
        TensorStore s;
        res.encoder.to_store(s, "ienc");
        res.params.to_store(s, "params");
        opt.state_to(s, "opt");
        s.put(Tensor::scalar("progress.next_step", static_cast<double>(next_step)));
        cfg.to_store(s, "config");
        return s;
    };
    TensorStore last_good = take_snapshot(start);
    const SearchConfig search = cfg.search();
    PoseParams intrinsics;
    intrinsics.focal = cfg.focal;
    intrinsics.principal = {width / 2.0, height / 2.0};

    struct Member {
        ImageEncoderEval ev;
        ViewTermsEval vt;
        int cls = 0;
        std::vector<FeatureMap> d_maps;
    };

    const auto n = static_cast<std::int64_t>(stream.size());
    for (int s = start; s < cfg.steps3; ++s) {
        Rng r = Rng::for_step(stage_seed, static_cast<std::uint64_t>(s));
        std::vector<Member> batch(static_cast<std::size_t>(cfg.batch_size));
        std::vector<PoseParams> poses(batch.size());
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const UnlabeledImage& u = stream[static_cast<std::size_t>(r.uniform_int(0, n - 1))];
            Member& m = batch[b];
            m.ev = image_encode(res.encoder, u.image);
            m.cls = argmax_branch(classifier.W * m.ev.codes.f_C + classifier.b);
            poses[b] = pose_from_prediction(m.ev.pose, intrinsics);
            m.vt = view_terms(res.params, m.ev.codes, poses[b], m.ev.light, u.image, u.mask,
                              cfg.weights, search, true, true);
            if (m.ev.pose[2] < kMinCameraDistance) m.vt.d_pose[2] = 0.0;
        }

        // feature consistency per predicted-class group
        std::map<int, std::vector<std::size_t>> groups;
        for (std::size_t b = 0; b < batch.size(); ++b) groups[batch[b].cls].push_back(b);
        struct GroupEval {
            std::vector<std::size_t> bs;
            std::vector<FeatureSampleTape> tapes;
            std::vector<EigenEval> ees;
            std::vector<Vector> vs;
        };
        std::vector<GroupEval> gevals;
        for (const auto& [cls, members] : groups) {
            if (members.size() < 2) continue;
            GroupEval ge;
            for (const std::size_t b : members) {
                try {
                    const std::vector<Vec3> bp = boundary_points(
                        res.params, batch[b].ev.codes, cfg.boundary_count, cfg.boundary_probe);
                    const Projection proj = compose_projection(poses[b], width, height);
                    Matrix U(static_cast<Eigen::Index>(bp.size()), 2);
                    for (std::size_t j = 0; j < bp.size(); ++j) {
                        const Vec3 uvd = proj.project(bp[j]);
                        U(static_cast<Eigen::Index>(j), 0) = uvd[0];
                        U(static_cast<Eigen::Index>(j), 1) = uvd[1];
                    }
                    FeatureSampleTape tape;
                    const Matrix F =
                        sample_local_features(batch[b].ev.maps, U, width, height, &tape);
                    EigenEval ee = principal_eigenvector_eval(F);
                    ge.bs.push_back(b);
                    ge.tapes.push_back(std::move(tape));
                    ge.vs.push_back(ee.v);
                    ge.ees.push_back(std::move(ee));
                } catch (const NumericError&) {
                    // no usable part boundary under these codes; the view sits
                    // out of the consistency term this step
                }
            }
            if (ge.bs.size() >= 2) gevals.push_back(std::move(ge));
        }
        SelfSupervisedTerms terms;
        const double inv = 1.0 / cfg.batch_size;
        for (const Member& m : batch) {
            terms.img += m.vt.terms.img * inv;
            terms.sil += m.vt.terms.sil * inv;
            terms.alb += m.vt.terms.alb * inv;
            terms.bws += m.vt.terms.bws * inv;
        }
        if (!gevals.empty()) {
            const double ginv = 1.0 / static_cast<double>(gevals.size());
            for (GroupEval& ge : gevals) {
                terms.fea += feature_consistency_loss(ge.vs) * ginv;
                const std::vector<Vector> d_vs = feature_consistency_grad(ge.vs);
                for (std::size_t i = 0; i < ge.bs.size(); ++i) {
                    const Matrix d_F = (cfg.weights.lambda2 * ginv) *
                                       principal_eigenvector_backward(ge.ees[i], d_vs[i]);
                    batch[ge.bs[i]].d_maps = sample_local_features_backward(ge.tapes[i], d_F);
                }
            }
        }
        const LossBreakdown bd = total_self_supervised_loss(terms, cfg.weights);

        if (!is_finite(bd.total)) {
            res.encoder = ImageEncoder::from_store(last_good, "ienc");
            res.params = JofParams::from_store(last_good, "params");
            res.steps_done = resume_next_step(last_good);
            res.diverged = true;
            break;
        }

        ImageEncoderGrads eg = ImageEncoderGrads::zeros_like(res.encoder);
        NetGrads ag = NetGrads::zeros_like(res.params.albedo_net);
        for (Member& m : batch) {
            ImageEncoderPullback pull;
            pull.d_fC = inv * m.vt.d_fC;
            pull.d_fS = inv * m.vt.d_fS;
            pull.d_fA = inv * m.vt.d_fA;
            for (int k = 0; k < 3; ++k) pull.d_pose[k] = inv * m.vt.d_pose[k];
            pull.d_gamma = inv * m.vt.d_gamma;
            pull.d_maps = std::move(m.d_maps);
            image_encode_backward(res.encoder, m.ev, pull, eg);
            ag.add_scaled(m.vt.d_albedo, inv);
        }
        std::vector<GradView> gv = grad_views(eg);
        append_grads(gv, grad_views(ag));
        opt.step(views, gv);
        res.curve.add_row({static_cast<double>(s), bd.total, bd.img, bd.sil, bd.fea, bd.alb,
                           bd.bws});
        const int next = s + 1;
        res.steps_done = next;
        if (next % cfg.checkpoint_every == 0 || next == cfg.steps3) {
            last_good = take_snapshot(next);
            if (hooks.save) hooks.save(next, last_good);
        }
    }

    if (res.params.shape_hash() != frozen_hash)
        throw CheckError("shape decoder changed during fine-tuning");
    return res;
}

// --- direct fitting ---------------------------------------------------------------

FitResult fit_by_optimization(const ImageRGB& image, const ImageGray& mask,
                              const JofParams& params, const FitInit& init, const TrainConfig& cfg,
                              const FitOptions& opts) {
    cfg.validate();
    params.validate();
    if (image.width != mask.width || image.height != mask.height)
        throw UsageError("image/mask size mismatch");
    bool any_fg = false;
    for (const double m : mask.data)
        if (m > 0.5) {
            any_fg = true;
            break;
        }
    if (!any_fg) throw UsageError("all-background mask");
    if (!opts.fit_pose && !opts.fit_light && !opts.fit_codes)
        throw UsageError("nothing to fit");

    FitResult res;
    res.pose = init.pose;
    res.light = init.light;
    res.codes = init.codes;
    res.codes.validate();
    res.curve.columns = {"step", "total", "img", "sil", "alb", "bws"};

    Adam opt(cfg.lr_fit);
    std::vector<ParamView> views;
    if (opts.fit_pose) {
        views.push_back({"pose.azimuth", &res.pose.azimuth, 1});
        views.push_back({"pose.elevation", &res.pose.elevation, 1});
        views.push_back({"pose.distance", &res.pose.distance, 1});
    }
    if (opts.fit_light)
        views.push_back({"light.gamma", res.light.gamma.data(),
                         static_cast<std::size_t>(res.light.gamma.size())});
    if (opts.fit_codes) {
        views.push_back({"codes.f_C", res.codes.f_C.data(),
                         static_cast<std::size_t>(res.codes.f_C.size())});
        views.push_back({"codes.f_S", res.codes.f_S.data(),
                         static_cast<std::size_t>(res.codes.f_S.size())});
        views.push_back({"codes.f_A", res.codes.f_A.data(),
                         static_cast<std::size_t>(res.codes.f_A.size())});
    }

    PoseParams best_pose = res.pose;
    Lighting best_light = res.light;
    LatentCodes best_codes = res.codes;
    double best = std::numeric_limits<double>::infinity();
    int best_step = 0;
    const SearchConfig search = cfg.search();

    for (int it = 0; it <= cfg.fit_iters; ++it) {
        ViewTermsEval vt = view_terms(params, res.codes, res.pose, res.light, image, mask,
                                      cfg.weights, search, false, opts.fit_pose);
        const LossBreakdown bd = total_self_supervised_loss(vt.terms, cfg.weights);
        res.curve.add_row({static_cast<double>(it), bd.total, bd.img, bd.sil, bd.alb, bd.bws});
        if (!is_finite(bd.total)) break;
        if (bd.total < best) {
            best = bd.total;
            best_step = it;
            best_pose = res.pose;
            best_light = res.light;
            best_codes = res.codes;
        }
        if (it == cfg.fit_iters) break;

        double g_pose[3] = {vt.d_pose[0], vt.d_pose[1], vt.d_pose[2]};
        std::vector<GradView> gv;
        if (opts.fit_pose) {
            gv.push_back({&g_pose[0], 1});
            gv.push_back({&g_pose[1], 1});
            gv.push_back({&g_pose[2], 1});
        }
        if (opts.fit_light)
            gv.push_back({vt.d_gamma.data(), static_cast<std::size_t>(vt.d_gamma.size())});
        if (opts.fit_codes) {
            gv.push_back({vt.d_fC.data(), static_cast<std::size_t>(vt.d_fC.size())});
            gv.push_back({vt.d_fS.data(), static_cast<std::size_t>(vt.d_fS.size())});
            gv.push_back({vt.d_fA.data(), static_cast<std::size_t>(vt.d_fA.size())});
        }
        opt.step(views, gv);
        if (res.pose.distance < kMinCameraDistance) res.pose.distance = kMinCameraDistance;
    }

    res.pose = best_pose;
    res.light = best_light;
    res.codes = best_codes;
    res.best_loss = best;
    res.best_step = best_step;
    return res;
}

// --- evaluation helpers --------------------------------------------------------

double occupancy_accuracy(const JofParams& params, const LatentCodes& codes,
                          const std::vector<PointSample>& samples) {
    if (samples.empty()) throw UsageError("no samples");
    std::vector<Vec3> xs(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) xs[i] = samples[i].x;
    const ShapeBatchEval e = shape_forward_batch(params, codes, xs);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < samples.size(); ++i)
        agree += ((e.o[i] > params.tau) == (samples[i].o > 0.5)) ? 1 : 0;
    return static_cast<double>(agree) / static_cast<double>(samples.size());
}

double branch_purity(const JofParams& params, const LatentCodes& codes,
                     const std::vector<PointSample>& samples) {
    std::vector<Vec3> xs;
    std::vector<int> labels;
    for (const PointSample& s : samples)
        if (s.o > 0.5) {
            xs.push_back(s.x);
            labels.push_back(s.label);
        }
    if (xs.empty()) throw UsageError("no interior samples");
    const ShapeBatchEval e = shape_forward_batch(params, codes, xs);
    std::map<int, std::map<int, std::size_t>> counts;
    for (std::size_t i = 0; i < xs.size(); ++i) ++counts[e.idx[i]][labels[i]];
    std::size_t covered = 0;
    for (const auto& [branch, by_label] : counts) {
        std::size_t top = 0;
        for (const auto& [label, c] : by_label) top = std::max(top, c);
        covered += top;
    }
    return static_cast<double>(covered) / static_cast<double>(xs.size());
}

double median_azimuth_error(const ImageEncoder& enc, const std::vector<SceneInstance>& dataset) {
    std::vector<double> errs;
    for (const SceneInstance& inst : dataset)
        for (const SceneView& view : inst.views) {
            const ImageEncoderEval ev = image_encode(enc, view.image);
            const PoseParams pred = pose_from_prediction(ev.pose, view.pose);
            errs.push_back(azimuth_error_degrees(pred, view.pose));
        }
    if (errs.empty()) throw UsageError("no views");
    std::sort(errs.begin(), errs.end());
    const std::size_t mid = errs.size() / 2;
    return errs.size() % 2 == 1 ? errs[mid] : 0.5 * (errs[mid - 1] + errs[mid]);
}

} // namespace jof
