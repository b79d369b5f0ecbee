#include <algorithm>
#include <cmath>
#include <limits>

#include "roomtwin/track.hpp"

namespace twin {

const std::array<const char*, kNumJoints> kJointNames = {
    "nose",           "left_eye",      "right_eye",  "left_ear",
    "right_ear",      "left_shoulder", "right_shoulder",
    "left_elbow",     "right_elbow",   "left_wrist", "right_wrist",
    "left_hip",       "right_hip",     "left_knee",  "right_knee",
    "left_ankle",     "right_ankle"};

// Spanning tree over the COCO-17 joints (16 edges): head fan from the nose,
// nose-to-left-shoulder link, shoulder and hip girdles, arms and legs.
const std::array<std::pair<int, int>, kNumLimbs> kLimbs = {{
    {kNose, kLeftEye},
    {kNose, kRightEye},
    {kLeftEye, kLeftEar},
    {kRightEye, kRightEar},
    {kNose, kLeftShoulder},
    {kLeftShoulder, kRightShoulder},
    {kLeftShoulder, kLeftElbow},
    {kLeftElbow, kLeftWrist},
    {kRightShoulder, kRightElbow},
    {kRightElbow, kRightWrist},
    {kLeftShoulder, kLeftHip},
    {kLeftHip, kRightHip},
    {kLeftHip, kLeftKnee},
    {kLeftKnee, kLeftAnkle},
    {kRightHip, kRightKnee},
    {kRightKnee, kRightAnkle},
}};

namespace {

Eigen::Matrix3d intrinsic_matrix(const PinholeCamera& cam) {
    Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
    k(0, 0) = cam.fx;
    k(1, 1) = cam.fy;
    k(0, 2) = cam.cx;
    k(1, 2) = cam.cy;
    return k;
}

// Fundamental matrix mapping pixels in camera a to epipolar lines in camera b.
Eigen::Matrix3d fundamental(const PinholeCamera& a, const PinholeCamera& b) {
    Pose rel = b.extrinsic * a.extrinsic.inverse();
    Eigen::Matrix3d e = skew(rel.t) * rel.rotation();
    return intrinsic_matrix(b).transpose().inverse() * e *
           intrinsic_matrix(a).inverse();
}

double line_distance(const Eigen::Vector3d& line, const Eigen::Vector2d& px) {
    double denom = std::hypot(line.x(), line.y());
    if (denom < 1e-15) return std::numeric_limits<double>::infinity();
    return std::abs(line.x() * px.x() + line.y() * px.y() + line.z()) / denom;
}

// Mean symmetric point-to-epipolar-line distance over jointly confident
// joints; infinity when no joint qualifies.
double epipolar_affinity(const Keypoints2D& da, const Keypoints2D& db,
                         const Eigen::Matrix3d& f_ab) {
    double sum = 0;
    int n = 0;
    for (int j = 0; j < kNumJoints; ++j) {
        if (da.joints[j].conf < 0.5 || db.joints[j].conf < 0.5) continue;
        Eigen::Vector3d xa(da.joints[j].uv.x(), da.joints[j].uv.y(), 1);
        Eigen::Vector3d xb(db.joints[j].uv.x(), db.joints[j].uv.y(), 1);
        double d = 0.5 * (line_distance(f_ab * xa, db.joints[j].uv) +
                          line_distance(f_ab.transpose() * xb, da.joints[j].uv));
        if (!std::isfinite(d)) return std::numeric_limits<double>::infinity();
        sum += d;
        ++n;
    }
    return n > 0 ? sum / n : std::numeric_limits<double>::infinity();
}

}  // namespace

std::vector<ViewGroup> match_views(
    const std::vector<std::vector<Keypoints2D>>& detections,
    const std::vector<PinholeCamera>& cameras, double tau_px) {
    const int num_cams = static_cast<int>(detections.size());

    struct Pair {
        double affinity;
        int cam_a, det_a, cam_b, det_b;
    };
    std::vector<Pair> pairs;
    for (int i = 0; i < num_cams; ++i)
        for (int j = i + 1; j < num_cams; ++j) {
            if (detections[i].empty() || detections[j].empty()) continue;
            Eigen::Matrix3d f = fundamental(cameras[i], cameras[j]);
            for (size_t a = 0; a < detections[i].size(); ++a)
                for (size_t b = 0; b < detections[j].size(); ++b) {
                    double aff =
                        epipolar_affinity(detections[i][a], detections[j][b], f);
                    if (aff < tau_px)
                        pairs.push_back({aff, i, static_cast<int>(a), j,
                                         static_cast<int>(b)});
                }
        }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
        return std::tie(x.affinity, x.cam_a, x.det_a, x.cam_b, x.det_b) <
               std::tie(y.affinity, y.cam_a, y.det_a, y.cam_b, y.det_b);
    });

    // Greedy agglomeration with at most one detection per camera per group.
    std::vector<std::vector<int>> group_id(num_cams);
    for (int i = 0; i < num_cams; ++i)
        group_id[i].assign(detections[i].size(), -1);
    std::vector<ViewGroup> groups;
    auto cameras_of = [&](int g) {
        std::vector<int> cams;
        for (const auto& [c, d] : groups[g].members) cams.push_back(c);
        return cams;
    };
    for (const Pair& p : pairs) {
        int ga = group_id[p.cam_a][p.det_a];
        int gb = group_id[p.cam_b][p.det_b];
        if (ga < 0 && gb < 0) {
            group_id[p.cam_a][p.det_a] = group_id[p.cam_b][p.det_b] =
                static_cast<int>(groups.size());
            groups.push_back({{{p.cam_a, p.det_a}, {p.cam_b, p.det_b}}});
        } else if (ga < 0) {
            auto cams = cameras_of(gb);
            if (std::find(cams.begin(), cams.end(), p.cam_a) != cams.end())
                continue;
            group_id[p.cam_a][p.det_a] = gb;
            groups[gb].members.emplace_back(p.cam_a, p.det_a);
        } else if (gb < 0) {
            auto cams = cameras_of(ga);
            if (std::find(cams.begin(), cams.end(), p.cam_b) != cams.end())
                continue;
            group_id[p.cam_b][p.det_b] = ga;
            groups[ga].members.emplace_back(p.cam_b, p.det_b);
        } else if (ga != gb) {
            auto ca = cameras_of(ga), cb = cameras_of(gb);
            bool overlap = false;
            for (int c : cb)
                if (std::find(ca.begin(), ca.end(), c) != ca.end()) overlap = true;
            if (overlap) continue;
            for (const auto& [c, d] : groups[gb].members) {
                group_id[c][d] = ga;
                groups[ga].members.emplace_back(c, d);
            }
            groups[gb].members.clear();
        }
    }

    // Singletons for everything unmatched; drop emptied groups; deterministic
    // order by first (camera, detection).
    for (int i = 0; i < num_cams; ++i)
        for (size_t a = 0; a < detections[i].size(); ++a)
            if (group_id[i][a] < 0) groups.push_back({{{i, static_cast<int>(a)}}});
    std::vector<ViewGroup> out;
    for (auto& g : groups) {
        if (g.members.empty()) continue;
        std::sort(g.members.begin(), g.members.end());
        out.push_back(std::move(g));
    }
    std::sort(out.begin(), out.end(), [](const ViewGroup& a, const ViewGroup& b) {
        return a.members.front() < b.members.front();
    });
    return out;
}

Skeleton3D triangulate_skeleton(
    const ViewGroup& group,
    const std::vector<std::vector<Keypoints2D>>& detections,
    const std::vector<PinholeCamera>& cameras, double conf_min,
    double reject_px) {
    {
        std::vector<int> cams;
        for (const auto& [c, d] : group.members) cams.push_back(c);
        std::sort(cams.begin(), cams.end());
        cams.erase(std::unique(cams.begin(), cams.end()), cams.end());
        if (cams.size() < 2)
            throw InsufficientViews("group spans " + std::to_string(cams.size()) +
                                    " cameras");
    }

    Skeleton3D skel;
    for (int j = 0; j < kNumJoints; ++j) {
        std::vector<Observation> views;
        for (const auto& [c, d] : group.members) {
            const Joint2D& jt = detections[c][d].joints[j];
            if (jt.conf < conf_min) continue;
            views.push_back({cameras[c], jt.uv, jt.conf});
        }
        if (views.size() < 2) continue;
        try {
            TriangulationResult tri = triangulate(views);
            skel.joints[j].position = tri.point;
            skel.joints[j].residual_px = tri.mean_reprojection_px;
            skel.joints[j].valid = tri.mean_reprojection_px <= reject_px;
        } catch (const Error&) {
            // degenerate joint stays invalid
        }
    }
    return skel;
}

}  // namespace twin
