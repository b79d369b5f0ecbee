#include <doctest.h>

#include <random>

#include "roomtwin/metrics.hpp"
#include "test_util.hpp"

using namespace twin;
using namespace twin::test;

namespace {

Skeleton3D skeleton_at(const Eigen::Vector3d& base) {
    Skeleton3D s;
    for (int j = 0; j < kNumJoints; ++j) {
        s.joints[j].position = base + Eigen::Vector3d(0.05 * j, 0.02 * j, 0.1 * j);
        s.joints[j].valid = true;
    }
    return s;
}

OrientedBox make_box(const Eigen::Vector3d& center,
                     const Eigen::Vector3d& half, const Eigen::Quaterniond& q) {
    OrientedBox b;
    b.center = center;
    b.half_extents = half;
    b.rotation = q;
    return b;
}

// Monte-Carlo IoU oracle: sample in the union's bounding box.
double mc_iou(const OrientedBox& a, const OrientedBox& b, int samples,
              uint64_t seed) {
    auto inside = [](const OrientedBox& box, const Eigen::Vector3d& p) {
        Eigen::Vector3d local = box.rotation.conjugate() * (p - box.center);
        return (local.cwiseAbs().array() <= box.half_extents.array()).all();
    };
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e30);
    Eigen::Vector3d hi = -lo;
    for (const OrientedBox* box : {&a, &b}) {
        Eigen::Matrix3d r = box->rotation.toRotationMatrix();
        Eigen::Vector3d extent =
            r.cwiseAbs() * box->half_extents;  // AABB of the rotated box
        lo = lo.cwiseMin(box->center - extent);
        hi = hi.cwiseMax(box->center + extent);
    }
    auto g = rng(seed);
    std::uniform_real_distribution<double> ux(lo.x(), hi.x()), uy(lo.y(), hi.y()),
        uz(lo.z(), hi.z());
    long in_union = 0, in_both = 0;
    for (int i = 0; i < samples; ++i) {
        Eigen::Vector3d p(ux(g), uy(g), uz(g));
        bool ia = inside(a, p), ib = inside(b, p);
        if (ia || ib) ++in_union;
        if (ia && ib) ++in_both;
    }
    return in_union > 0 ? static_cast<double>(in_both) / in_union : 0.0;
}

Trajectory circle_traj(int n, double radius, double fps = 30) {
    Trajectory t;
    for (int i = 0; i < n; ++i) {
        double th = 2 * M_PI * i / n;
        Pose p(Eigen::Quaterniond(Eigen::AngleAxisd(th, Eigen::Vector3d::UnitZ())),
               {radius * std::cos(th), radius * std::sin(th), 1.0});
        t.entries.emplace_back(i / fps, p);
    }
    return t;
}

}  // namespace

TEST_CASE("mpjpe trivial and brute-force oracle") {
    std::vector<Skeleton3D> gt = {skeleton_at({0, 0, 0}), skeleton_at({1, 0, 0})};
    CHECK(mpjpe(gt, gt) == 0.0);

    std::vector<Skeleton3D> shifted = gt;
    for (auto& s : shifted)
        for (auto& j : s.joints) j.position += Eigen::Vector3d(0.01, 0, 0);
    CHECK(mpjpe(shifted, gt) == doctest::Approx(0.01));

    auto g = rng(1);
    std::vector<Skeleton3D> noisy = gt;
    double sum = 0;
    long n = 0;
    for (size_t f = 0; f < noisy.size(); ++f)
        for (int j = 0; j < kNumJoints; ++j) {
            Eigen::Vector3d d = random_vec(g, -0.05, 0.05);
            noisy[f].joints[j].position += d;
            if (j % 3 == 0) {
                noisy[f].joints[j].valid = false;  // excluded both ways
            } else {
                sum += d.norm();
                ++n;
            }
        }
    CHECK(mpjpe(noisy, gt) == doctest::Approx(sum / n).epsilon(1e-12));

    std::vector<Skeleton3D> invalid(2);
    CHECK_THROWS_AS(mpjpe(invalid, gt), NoCommonValidJoints);
}

TEST_CASE("pcp3d fixtures and scale covariance") {
    std::vector<Skeleton3D> gt = {skeleton_at({0, 0, 0})};
    CHECK(pcp3d(gt, gt) == 100.0);

    // Displace every joint by 0.6x the longest limb attached to it: every
    // limb fails at alpha=0.5 when displacement exceeds half its length.
    std::vector<Skeleton3D> far = gt;
    for (auto& j : far[0].joints) j.position += Eigen::Vector3d(10, 0, 0);
    CHECK(pcp3d(far, gt) == 0.0);

    // Hand fixture: invalidate GT so only 3 limbs are evaluable, break 1.
    std::vector<Skeleton3D> gt3 = gt;
    for (int j = 0; j < kNumJoints; ++j) gt3[0].joints[j].valid = false;
    // Keep left leg chain valid: hip-knee, knee-ankle, plus hip girdle.
    for (int j : {kLeftHip, kRightHip, kLeftKnee, kLeftAnkle})
        gt3[0].joints[j].valid = true;
    std::vector<Skeleton3D> pred3 = gt3;
    pred3[0].joints[kLeftAnkle].position += Eigen::Vector3d(5, 0, 0);
    CHECK(pcp3d(pred3, gt3) == doctest::Approx(100.0 * 2 / 3));

    // Uniform scaling leaves the percentage unchanged.
    auto g = rng(2);
    std::vector<Skeleton3D> pred = gt;
    for (auto& j : pred[0].joints) j.position += random_vec(g, -0.08, 0.08);
    double base = pcp3d(pred, gt);
    std::vector<Skeleton3D> preds = pred, gts = gt;
    for (auto& j : preds[0].joints) j.position *= 3.7;
    for (auto& j : gts[0].joints) j.position *= 3.7;
    CHECK(pcp3d(preds, gts) == doctest::Approx(base));

    std::vector<Skeleton3D> none(1);
    CHECK_THROWS_AS(pcp3d(none, none), NoEvaluableLimbs);
}

TEST_CASE("chamfer distances on analytic fixtures") {
    PointCloud a;
    a.positions = {{0, 0, 0}};
    PointCloud b;
    b.positions = {{1, 0, 0}};
    CHECK(chamfer(a, a) == 0.0);
    CHECK(chamfer(a, b) == doctest::Approx(1.0));

    // Dense plane: in-plane shift by less than the sample spacing is nearly
    // free; out-of-plane shift by h costs h.
    PointCloud plane, inplane, outplane;
    for (int i = 0; i <= 100; ++i)
        for (int j = 0; j <= 100; ++j) {
            Eigen::Vector3d p(i * 0.01, j * 0.01, 0);
            plane.positions.push_back(p);
            inplane.positions.push_back(p + Eigen::Vector3d(0.004, 0, 0));
            outplane.positions.push_back(p + Eigen::Vector3d(0, 0, 0.03));
        }
    CHECK(chamfer(plane, inplane) < 0.005);
    CHECK(chamfer(plane, outplane) == doctest::Approx(0.03).epsilon(1e-9));
    CHECK(chamfer(plane, outplane) == chamfer(outplane, plane));

    PointCloud empty;
    CHECK_THROWS_AS(chamfer(empty, a), EmptyCloud);
}

TEST_CASE("pose_error matches the rotation-matrix trace formula") {
    Pose id;
    PoseError z = pose_error(id, id);
    CHECK(z.translation_m == 0.0);
    CHECK(z.rotation_deg == 0.0);

    Pose yaw(Eigen::Quaterniond(
                 Eigen::AngleAxisd(10 * M_PI / 180, Eigen::Vector3d::UnitZ())),
             Eigen::Vector3d::Zero());
    PoseError e = pose_error(yaw, id);
    CHECK(e.translation_m == 0.0);
    CHECK(e.rotation_deg == doctest::Approx(10.0));

    auto g = rng(3);
    for (int i = 0; i < 50; ++i) {
        Pose a = random_pose(g), b = random_pose(g);
        PoseError pe = pose_error(a, b);
        Eigen::Matrix3d rel = b.rotation().transpose() * a.rotation();
        double tr = std::acos(std::clamp((rel.trace() - 1) / 2, -1.0, 1.0));
        CHECK(pe.rotation_deg == doctest::Approx(tr * 180 / M_PI).epsilon(1e-9));
        CHECK(pe.translation_m == doctest::Approx((a.t - b.t).norm()));
    }
}

TEST_CASE("obb_iou exact cases") {
    OrientedBox cube = make_box({0, 0, 0}, {0.5, 0.5, 0.5},
                                Eigen::Quaterniond::Identity());
    CHECK(obb_iou(cube, cube) == doctest::Approx(1.0));

    OrientedBox shifted = cube;
    shifted.center = {0.5, 0, 0};
    CHECK(obb_iou(cube, shifted) == doctest::Approx(1.0 / 3).epsilon(1e-9));

    OrientedBox disjoint = cube;
    disjoint.center = {5, 0, 0};
    CHECK(obb_iou(cube, disjoint) == 0.0);

    // Containment: IoU = V_small / V_big.
    OrientedBox small = make_box({0.1, 0.05, -0.1}, {0.2, 0.15, 0.1},
                                 Eigen::Quaterniond(Eigen::AngleAxisd(
                                     0.4, Eigen::Vector3d(1, 2, 3).normalized())));
    CHECK(obb_iou(cube, small) ==
          doctest::Approx(small.volume() / cube.volume()).epsilon(1e-9));

    // 45-degree rotated unit cube vs itself unrotated: analytic overlap of a
    // square and its rotated copy extruded in z = 8*(sqrt(2)-1)/2... checked
    // against the Monte-Carlo oracle below instead of a closed form.
    auto g = rng(4);
    for (int i = 0; i < 6; ++i) {
        OrientedBox a = make_box(random_vec(g, -0.2, 0.2),
                                 {0.3 + 0.2 * i / 6.0, 0.4, 0.25},
                                 random_quat(g));
        OrientedBox b = make_box(random_vec(g, -0.2, 0.2), {0.35, 0.3, 0.3},
                                 random_quat(g));
        double exact = obb_iou(a, b);
        double sampled = mc_iou(a, b, 1000000, 100 + i);
        CHECK(std::abs(exact - sampled) < 0.005);
        CHECK(exact >= 0.0);
        CHECK(exact <= 1.0);
        CHECK(obb_iou(b, a) == doctest::Approx(exact).epsilon(1e-9));
    }
}

TEST_CASE("ate trivial, aligned, and sinusoid fixtures") {
    Trajectory gt = circle_traj(300, 2.0);
    CHECK(ate(gt, gt) == doctest::Approx(0.0).scale(1));

    auto g = rng(5);
    Pose rigid = random_pose(g, 3.0);
    Trajectory moved = gt;
    for (auto& [t, p] : moved.entries) p = rigid * p;
    CHECK(ate(moved, gt) < 1e-9);

    // Radial sinusoid of amplitude 0.1 m, several periods around the circle:
    // orthogonal to all rigid modes, so alignment leaves RMSE = 0.1/sqrt(2).
    Trajectory wobble = gt;
    for (size_t i = 0; i < wobble.entries.size(); ++i) {
        double th = 2 * M_PI * i / wobble.entries.size();
        Eigen::Vector3d radial(std::cos(th), std::sin(th), 0);
        wobble.entries[i].second.t += 0.1 * std::sin(5 * th) * radial;
    }
    CHECK(ate(wobble, gt) == doctest::Approx(0.1 / std::sqrt(2)).epsilon(0.02));

    Trajectory two;
    two.entries = {gt.entries[0], gt.entries[1]};
    CHECK_THROWS_AS(ate(two, gt), InsufficientMatches);
}

TEST_CASE("rpe trivial, offset-invariant, and drift fixtures") {
    Trajectory gt = circle_traj(200, 2.0);
    RpeResult zero = rpe(gt, gt);
    CHECK(zero.translation_rmse_m < 1e-12);
    CHECK(zero.rotation_rmse_deg < 1e-9);

    auto g = rng(6);
    Pose rigid = random_pose(g, 2.0);
    Trajectory moved = gt;
    for (auto& [t, p] : moved.entries) p = rigid * p;
    RpeResult inv = rpe(moved, gt);
    CHECK(inv.translation_rmse_m < 1e-12);
    CHECK(inv.rotation_rmse_deg < 1e-9);

    // 1 mm/frame drift on a straight constant-orientation path: relative
    // translation error over delta frames is exactly delta mm.
    Trajectory line, drift;
    for (int i = 0; i < 120; ++i) {
        Pose p(Eigen::Quaterniond::Identity(), {0.05 * i, 0, 1.0});
        line.entries.emplace_back(i / 30.0, p);
        p.t.x() += 0.001 * i;
        drift.entries.emplace_back(i / 30.0, p);
    }
    RpeResult d = rpe(drift, line);
    CHECK(d.translation_rmse_m == doctest::Approx(0.030).epsilon(1e-9));
    CHECK(d.rotation_rmse_deg < 1e-12);

    Trajectory short_traj = circle_traj(20, 2.0);
    CHECK_THROWS_AS(rpe(short_traj, short_traj), TrajectoryTooShort);
}

TEST_CASE("stereo_eval hand-computed and half-normal fixtures") {
    StereoRig rig;
    rig.left = test_camera();
    rig.baseline = 0.1;

    RasterF32 gt(64, 48, 10.f);
    CHECK(stereo_eval(gt, gt, rig).metrics.at("epe_px") == 0.0);

    RasterF32 pred(64, 48, 12.f);
    EvalReport r = stereo_eval(pred, gt, rig);
    CHECK(r.metrics.at("epe_px") == doctest::Approx(2.0));
    CHECK(r.metrics.at("bad2_pct") == 0.0);  // strict >
    CHECK(r.metrics.at("d1_all_pct") == 0.0);
    // Depth MAE: fx*B/10 - fx*B/12 = 100*(1/10-1/12) = 5/3 m.
    CHECK(r.metrics.at("depth_mae_m") == doctest::Approx(100.0 / 10 - 100.0 / 12));

    // Sentinel pixels excluded.
    RasterF32 gt_holes = gt;
    for (int x = 0; x < 32; ++x) gt_holes.at(x, 0) = 0.f;
    EvalReport rh = stereo_eval(pred, gt_holes, rig);
    CHECK(rh.counts.at("valid_px") == 64 * 48 - 32);

    // Gaussian disparity noise: EPE approaches sigma*sqrt(2/pi).
    auto g = rng(7);
    std::normal_distribution<double> noise(0, 0.5);
    RasterF32 noisy(200, 200, 10.f), gtn(200, 200, 10.f);
    for (auto& v : noisy.data) v += static_cast<float>(noise(g));
    EvalReport rn = stereo_eval(noisy, gtn, rig);
    CHECK(rn.metrics.at("epe_px") ==
          doctest::Approx(0.5 * std::sqrt(2 / M_PI)).epsilon(0.02));

    RasterF32 wrong(10, 10);
    CHECK_THROWS_AS(stereo_eval(wrong, gt, rig), DimensionMismatch);
    RasterF32 all_invalid(8, 8, 0.f);
    CHECK_THROWS_AS(stereo_eval(all_invalid, all_invalid, rig), NoValidPixels);
}

TEST_CASE("stereo_eval d1 never exceeds the bad-3px fraction") {
    StereoRig rig;
    rig.left = test_camera();
    rig.baseline = 0.12;
    auto g = rng(8);
    std::normal_distribution<double> noise(0, 3.0);
    std::uniform_real_distribution<double> disp(5, 80);
    RasterF32 gt(100, 100), pred(100, 100);
    for (size_t i = 0; i < gt.data.size(); ++i) {
        gt.data[i] = static_cast<float>(disp(g));
        pred.data[i] = gt.data[i] + static_cast<float>(noise(g));
    }
    EvalReport r = stereo_eval(pred, gt, rig);
    long bad3 = 0;
    for (size_t i = 0; i < gt.data.size(); ++i)
        if (std::abs(pred.data[i] - gt.data[i]) > 3.0) ++bad3;
    CHECK(r.metrics.at("d1_all_pct") <= 100.0 * bad3 / gt.data.size() + 1e-12);
}

TEST_CASE("image_quality PSNR and SSIM fixtures") {
    Image8 img(64, 48, 3);
    auto g = rng(9);
    std::uniform_int_distribution<int> u(0, 255);
    for (auto& v : img.data) v = static_cast<uint8_t>(u(g));

    ImageQuality same = image_quality(img, img);
    CHECK(std::isinf(same.psnr_db));
    CHECK(same.ssim == doctest::Approx(1.0));

    // +1 everywhere without clipping: MSE 1 -> PSNR 20*log10(255).
    Image8 capped = img;
    for (auto& v : capped.data) v = std::min<int>(v, 254);
    Image8 plus1 = capped;
    for (auto& v : plus1.data) v = static_cast<uint8_t>(v + 1);
    CHECK(image_quality(plus1, capped).psnr_db ==
          doctest::Approx(20 * std::log10(255.0)).epsilon(1e-9));

    // Structured error vs random error with matched MSE: SSIM prefers the
    // structured one on a smooth gradient image.
    Image8 smooth(64, 48, 1);
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 64; ++x)
            smooth.at(x, y) = static_cast<uint8_t>(40 + 2 * x + y);
    Image8 structured = smooth;
    for (auto& v : structured.data) v = static_cast<uint8_t>(v + 8);  // bias
    Image8 noisy = smooth;
    std::uniform_int_distribution<int> pm(0, 1);
    for (auto& v : noisy.data)
        v = static_cast<uint8_t>(v + (pm(g) ? 8 : -8));  // same MSE = 64
    ImageQuality qs = image_quality(structured, smooth);
    ImageQuality qn = image_quality(noisy, smooth);
    CHECK(qs.ssim > qn.ssim);

    Image8 other(32, 48, 3);
    CHECK_THROWS_AS(image_quality(img, other), DimensionMismatch);
}
