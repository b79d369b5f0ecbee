#include <algorithm>
#include <cmath>

#include "roomtwin/metrics.hpp"

namespace twin {

double mpjpe(const std::vector<Skeleton3D>& pred,
             const std::vector<Skeleton3D>& gt) {
    size_t frames = std::min(pred.size(), gt.size());
    double sum = 0;
    long n = 0;
    for (size_t f = 0; f < frames; ++f)
        for (int j = 0; j < kNumJoints; ++j) {
            const Joint3D& p = pred[f].joints[j];
            const Joint3D& g = gt[f].joints[j];
            if (!p.valid || !g.valid) continue;
            sum += (p.position - g.position).norm();
            ++n;
        }
    if (n == 0) throw NoCommonValidJoints();
    return sum / n;
}

double pcp3d(const std::vector<Skeleton3D>& pred,
             const std::vector<Skeleton3D>& gt, double alpha) {
    size_t frames = std::min(pred.size(), gt.size());
    long total = 0, correct = 0;
    for (size_t f = 0; f < frames; ++f)
        for (const auto& [a, b] : kLimbs) {
            const Joint3D& ga = gt[f].joints[a];
            const Joint3D& gb = gt[f].joints[b];
            if (!ga.valid || !gb.valid) continue;
            ++total;
            const Joint3D& pa = pred[f].joints[a];
            const Joint3D& pb = pred[f].joints[b];
            if (!pa.valid || !pb.valid) continue;
            double limb = (ga.position - gb.position).norm();
            if ((pa.position - ga.position).norm() <= alpha * limb &&
                (pb.position - gb.position).norm() <= alpha * limb)
                ++correct;
        }
    if (total == 0) throw NoEvaluableLimbs();
    return 100.0 * correct / total;
}

double chamfer(const PointCloud& a, const PointCloud& b) {
    if (a.positions.empty() || b.positions.empty()) throw EmptyCloud();
    KdTree ta(a.positions), tb(b.positions);
    double sum_ab = 0, sum_ba = 0;
    for (const auto& p : a.positions) sum_ab += tb.nearest(p).distance;
    for (const auto& p : b.positions) sum_ba += ta.nearest(p).distance;
    return 0.5 * (sum_ab / a.positions.size() + sum_ba / b.positions.size());
}

PoseError pose_error(const Pose& pred, const Pose& gt) {
    PoseError e;
    e.translation_m = (pred.t - gt.t).norm();
    Eigen::Quaterniond rel = gt.q.conjugate() * pred.q;
    e.rotation_deg =
        2.0 * std::asin(std::min(1.0, rel.vec().norm())) * 180.0 / M_PI;
    return e;
}

namespace {

using Polygon = std::vector<Eigen::Vector3d>;

// 6 outward-oriented quads of a box.
std::vector<Polygon> box_faces(const OrientedBox& box) {
    Eigen::Matrix3d r = box.rotation.toRotationMatrix();
    auto corner = [&](int sx, int sy, int sz) {
        return Eigen::Vector3d(box.center +
                               r * box.half_extents.cwiseProduct(
                                       Eigen::Vector3d(sx, sy, sz)));
    };
    // Each face listed counter-clockwise seen from outside.
    return {
        {corner(1, -1, -1), corner(1, 1, -1), corner(1, 1, 1), corner(1, -1, 1)},
        {corner(-1, -1, -1), corner(-1, -1, 1), corner(-1, 1, 1), corner(-1, 1, -1)},
        {corner(-1, 1, -1), corner(-1, 1, 1), corner(1, 1, 1), corner(1, 1, -1)},
        {corner(-1, -1, -1), corner(1, -1, -1), corner(1, -1, 1), corner(-1, -1, 1)},
        {corner(-1, -1, 1), corner(1, -1, 1), corner(1, 1, 1), corner(-1, 1, 1)},
        {corner(-1, -1, -1), corner(-1, 1, -1), corner(1, 1, -1), corner(1, -1, -1)},
    };
}

// Clips a convex polytope by the half-space n.x <= d; the cut cross-section
// becomes a new face with outward normal n.
std::vector<Polygon> clip_polytope(const std::vector<Polygon>& faces,
                                   const Eigen::Vector3d& n, double d) {
    const double eps = 1e-12;
    std::vector<Polygon> out;
    Polygon cap;
    for (const Polygon& face : faces) {
        Polygon kept;
        size_t m = face.size();
        for (size_t i = 0; i < m; ++i) {
            const Eigen::Vector3d& a = face[i];
            const Eigen::Vector3d& b = face[(i + 1) % m];
            double da = n.dot(a) - d, db = n.dot(b) - d;
            if (da <= eps) kept.push_back(a);
            if ((da < -eps && db > eps) || (da > eps && db < -eps)) {
                double t = da / (da - db);
                Eigen::Vector3d x = a + t * (b - a);
                kept.push_back(x);
                cap.push_back(x);
            }
        }
        if (kept.size() >= 3) out.push_back(std::move(kept));
    }
    if (cap.size() >= 3) {
        // Order the cut loop around the plane so its normal points along +n.
        Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
        for (const auto& p : cap) centroid += p;
        centroid /= static_cast<double>(cap.size());
        Eigen::Vector3d u = n.unitOrthogonal();
        Eigen::Vector3d v = n.cross(u);
        std::sort(cap.begin(), cap.end(),
                  [&](const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
                      return std::atan2(v.dot(a - centroid), u.dot(a - centroid)) <
                             std::atan2(v.dot(b - centroid), u.dot(b - centroid));
                  });
        // Deduplicate points produced by adjacent faces sharing an edge.
        Polygon dedup;
        for (const auto& p : cap)
            if (dedup.empty() || (p - dedup.back()).norm() > 1e-9)
                dedup.push_back(p);
        if (dedup.size() >= 3 && (dedup.front() - dedup.back()).norm() <= 1e-9)
            dedup.pop_back();
        if (dedup.size() >= 3) out.push_back(std::move(dedup));
    }
    return out;
}

double polytope_volume(const std::vector<Polygon>& faces) {
    double six_v = 0;
    for (const Polygon& face : faces)
        for (size_t i = 1; i + 1 < face.size(); ++i)
            six_v += face[0].dot(face[i].cross(face[i + 1]));
    return six_v / 6.0;
}

}  // namespace

double obb_iou(const OrientedBox& a, const OrientedBox& b) {
    std::vector<Polygon> poly = box_faces(a);
    Eigen::Matrix3d rb = b.rotation.toRotationMatrix();
    for (int axis = 0; axis < 3; ++axis)
        for (int sign : {-1, 1}) {
            if (poly.empty()) return 0.0;
            Eigen::Vector3d n = sign * rb.col(axis);
            double d = n.dot(b.center) + b.half_extents[axis];
            poly = clip_polytope(poly, n, d);
        }
    double inter = poly.empty() ? 0.0 : polytope_volume(poly);
    inter = std::max(0.0, inter);
    double uni = a.volume() + b.volume() - inter;
    return uni > 0 ? std::min(1.0, inter / uni) : 0.0;
}

namespace {

// Nearest-timestamp association within the allowed gap, in time order.
std::vector<std::pair<Pose, Pose>> associate(const Trajectory& est,
                                             const Trajectory& gt,
                                             double max_dt) {
    std::vector<std::pair<Pose, Pose>> pairs;
    for (const auto& [t, pose] : est.entries) {
        double best_dt = max_dt;
        const Pose* match = nullptr;
        for (const auto& [tg, pg] : gt.entries) {
            double dt = std::abs(tg - t);
            if (dt <= best_dt) {
                best_dt = dt;
                match = &pg;
            }
        }
        if (match) pairs.emplace_back(pose, *match);
    }
    return pairs;
}

}  // namespace

double ate(const Trajectory& est, const Trajectory& gt,
           const TrajectoryMetricOptions& opts) {
    auto pairs = associate(est, gt, opts.max_time_diff_s);
    if (pairs.size() < 3)
        throw InsufficientMatches("matched " + std::to_string(pairs.size()) +
                                  " trajectory samples");
    std::vector<Eigen::Vector3d> src, dst;
    for (const auto& [e, g] : pairs) {
        src.push_back(e.t);
        dst.push_back(g.t);
    }
    Pose align = umeyama_align(src, dst, false).pose;
    double sq = 0;
    for (size_t i = 0; i < src.size(); ++i)
        sq += (align.apply(src[i]) - dst[i]).squaredNorm();
    return std::sqrt(sq / src.size());
}

RpeResult rpe(const Trajectory& est, const Trajectory& gt,
              const TrajectoryMetricOptions& opts) {
    auto pairs = associate(est, gt, opts.max_time_diff_s);
    const int delta = opts.rpe_delta_frames;
    if (static_cast<int>(pairs.size()) <= delta)
        throw TrajectoryTooShort("need more than " + std::to_string(delta) +
                                 " matched samples");
    double sq_t = 0, sq_r = 0;
    int n = 0;
    for (size_t i = 0; i + delta < pairs.size(); ++i) {
        Pose rel_est = pairs[i].first.inverse() * pairs[i + delta].first;
        Pose rel_gt = pairs[i].second.inverse() * pairs[i + delta].second;
        Pose err = rel_gt.inverse() * rel_est;
        sq_t += err.t.squaredNorm();
        double ang = 2.0 * std::asin(std::min(1.0, err.q.vec().norm()));
        sq_r += ang * ang;
        ++n;
    }
    RpeResult r;
    r.translation_rmse_m = std::sqrt(sq_t / n);
    r.rotation_rmse_deg = std::sqrt(sq_r / n) * 180.0 / M_PI;
    return r;
}

EvalReport stereo_eval(const RasterF32& pred_disp, const RasterF32& gt_disp,
                       const StereoRig& rig) {
    if (pred_disp.width != gt_disp.width || pred_disp.height != gt_disp.height)
        throw DimensionMismatch("disparity rasters");
    double abs_sum = 0;
    long valid = 0, bad2 = 0, d1 = 0;
    double depth_abs = 0, rel_sum = 0;
    long depth_n = 0;
    const double fxb = rig.left.fx * rig.baseline;
    for (size_t i = 0; i < gt_disp.data.size(); ++i) {
        double g = gt_disp.data[i];
        if (g == 0.0f) continue;  // sentinel
        double p = pred_disp.data[i];
        double e = std::abs(p - g);
        abs_sum += e;
        ++valid;
        if (e > 2.0) ++bad2;
        if (e > 3.0 && e > 0.05 * std::abs(g)) ++d1;
        if (p > 0 && g > 0) {
            double zp = fxb / p, zg = fxb / g;
            depth_abs += std::abs(zp - zg);
            rel_sum += std::abs(zp - zg) / zg;
            ++depth_n;
        }
    }
    if (valid == 0) throw NoValidPixels();
    EvalReport report;
    report.metrics["epe_px"] = abs_sum / valid;
    report.metrics["bad2_pct"] = 100.0 * bad2 / valid;
    report.metrics["d1_all_pct"] = 100.0 * d1 / valid;
    report.metrics["depth_mae_m"] = depth_n ? depth_abs / depth_n : 0.0;
    report.metrics["abs_rel_pct"] = depth_n ? 100.0 * rel_sum / depth_n : 0.0;
    report.counts["valid_px"] = valid;
    report.counts["depth_px"] = depth_n;
    return report;
}

}  // namespace twin
