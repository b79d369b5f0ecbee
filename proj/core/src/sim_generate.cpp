#include <algorithm>
#include <cmath>
#include <random>

#include "roomtwin/sim.hpp"

namespace twin {

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace

uint64_t derive_seed(uint64_t base, const std::string& stream) {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the stream name
    for (unsigned char c : stream) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return splitmix64(base ^ h);
}

namespace {

struct EquipmentOcclusion {
    std::vector<Bvh> bvhs;
    const Scene* scene;

    explicit EquipmentOcclusion(const Scene& s) : scene(&s) {
        for (int i = 0; i < static_cast<int>(s.config().equipment.size()); ++i)
            bvhs.emplace_back(s.equipment_mesh(i));
    }

    bool blocked(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                 double t) const {
        for (size_t i = 0; i < bvhs.size(); ++i) {
            Pose local_from_world =
                scene->equipment_pose(static_cast<int>(i), t).inverse();
            if (bvhs[i].occluded(local_from_world.apply(a),
                                 local_from_world.apply(b), 1e-4))
                return true;
        }
        return false;
    }
};

bool project_visible(const PinholeCamera& cam, const Eigen::Vector3d& p,
                     Eigen::Vector2d* uv) {
    Eigen::Vector3d pc = cam.extrinsic.apply(p);
    if (pc.z() <= 1e-6) return false;
    *uv = Eigen::Vector2d(cam.fx * pc.x() / pc.z() + cam.cx,
                          cam.fy * pc.y() / pc.z() + cam.cy);
    return cam.in_bounds(*uv);
}

}  // namespace

WandDataset gen_wand_sequence(const Scene& scene, double sigma_px,
                              double dropout_rate, uint64_t stream_seed) {
    const SceneConfig& cfg = scene.config();
    uint64_t seed =
        stream_seed ? stream_seed : derive_seed(cfg.seed, "wand");
    std::mt19937_64 g(seed);
    std::normal_distribution<double> noise(0, sigma_px);
    std::uniform_real_distribution<double> u(0, 1);

    EquipmentOcclusion occ(scene);
    WandDataset out;
    for (const auto& cam : cfg.cameras)
        out.gt_extrinsics.push_back(cam.camera.extrinsic);

    int two_view_frames = 0;
    for (int f = 0; f < cfg.frame_count(); ++f) {
        double t = f / cfg.fps;
        auto markers = scene.wand_markers(t);
        out.gt_markers_world[f] = markers;
        int cams_seen = 0;
        for (const auto& cam_cfg : cfg.cameras) {
            const PinholeCamera& cam = cam_cfg.camera;
            std::array<Eigen::Vector2d, 3> pixels;
            bool visible = true;
            for (int m = 0; m < 3 && visible; ++m) {
                visible = project_visible(cam, markers[m], &pixels[m]) &&
                          !occ.blocked(cam.center(), markers[m], t);
            }
            if (!visible) continue;
            ++cams_seen;
            if (u(g) < dropout_rate) continue;
            std::array<int, 3> perm = {0, 1, 2};
            std::shuffle(perm.begin(), perm.end(), g);
            std::array<Eigen::Vector2d, 3> observed;
            for (int m = 0; m < 3; ++m) {
                observed[m] = pixels[perm[m]];
                if (sigma_px > 0)
                    observed[m] += Eigen::Vector2d(noise(g), noise(g));
            }
            out.observations.frames[f][cam_cfg.id] = observed;
        }
        if (cams_seen >= 2) ++two_view_frames;
    }
    if (two_view_frames == 0)
        throw WandNeverVisible("wand never visible in 2+ cameras");
    return out;
}

namespace {

// Sight-line vs limb-capsule test: does the segment cam->joint pass within
// `radius` of the limb segment, at a point in front of the joint?
bool capsule_blocks(const Eigen::Vector3d& cam, const Eigen::Vector3d& joint,
                    const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                    double radius) {
    Eigen::Vector3d view = joint - cam;
    double len = view.norm();
    if (len < 1e-9) return false;
    // Shorten the sight line so capsules touching the joint's own neighborhood
    // do not self-occlude it.
    Eigen::Vector3d u1 = view * ((len - 2.5 * radius) / len);
    if (u1.dot(view) <= 0) return false;
    Eigen::Vector3d d2 = b - a;
    Eigen::Vector3d r = cam - a;
    double A = u1.squaredNorm(), B = u1.dot(d2), C = d2.squaredNorm();
    double D = u1.dot(r), E = d2.dot(r);
    double den = A * C - B * B;
    double s = den > 1e-15 ? std::clamp((B * E - C * D) / den, 0.0, 1.0) : 0.0;
    double tt = C > 1e-15 ? std::clamp((B * s + E) / C, 0.0, 1.0) : 0.0;
    s = std::clamp((B * tt - D) / std::max(A, 1e-15), 0.0, 1.0);
    Eigen::Vector3d c1 = cam + s * u1;
    Eigen::Vector3d c2 = a + tt * d2;
    return (c1 - c2).norm() < radius;
}

constexpr double kLimbRadius = 0.07;

}  // namespace

KeypointDataset gen_keypoint_sequence(const Scene& scene,
                                      const KeypointNoise& noise,
                                      uint64_t stream_seed) {
    const SceneConfig& cfg = scene.config();
    if (cfg.humans.empty()) throw BadConfig("scene has no humans");
    uint64_t seed =
        stream_seed ? stream_seed : derive_seed(cfg.seed, "keypoints");
    std::mt19937_64 g(seed);
    std::normal_distribution<double> px_noise(0, noise.sigma_px);
    std::normal_distribution<double> occ_noise(
        0, std::max(3 * noise.sigma_px, 4.0));
    std::uniform_real_distribution<double> conf_vis(noise.conf_visible_lo,
                                                    noise.conf_visible_hi);
    std::uniform_real_distribution<double> conf_occ(noise.conf_occluded_lo,
                                                    noise.conf_occluded_hi);
    std::uniform_real_distribution<double> u(0, 1);

    EquipmentOcclusion occ(scene);
    KeypointDataset out;
    out.gt_tracks.resize(scene.human_count());
    for (int p = 0; p < scene.human_count(); ++p)
        out.gt_tracks[p].person_id = p;

    for (int f = 0; f < cfg.frame_count(); ++f) {
        double t = f / cfg.fps;
        std::vector<std::array<Eigen::Vector3d, kNumJoints>> people;
        for (int p = 0; p < scene.human_count(); ++p) {
            people.push_back(scene.human_joints(p, t));
            Skeleton3D s;
            for (int j = 0; j < kNumJoints; ++j) {
                s.joints[j].position = people[p][j];
                s.joints[j].valid = true;
            }
            out.gt_tracks[p].frames[f] = s;
        }
        auto& vis_frame = out.visibility[f];
        vis_frame.resize(people.size());

        for (int p = 0; p < static_cast<int>(people.size()); ++p) {
            vis_frame[p].resize(cfg.cameras.size());
            for (size_t c = 0; c < cfg.cameras.size(); ++c) {
                const PinholeCamera& cam = cfg.cameras[c].camera;
                Eigen::Vector3d eye = cam.center();
                Keypoints2D det;
                det.camera = cfg.cameras[c].id;
                int visible_count = 0;
                for (int j = 0; j < kNumJoints; ++j) {
                    Eigen::Vector2d uv = Eigen::Vector2d::Zero();
                    bool vis = project_visible(cam, people[p][j], &uv);
                    if (vis && noise.model_occlusion) {
                        if (occ.blocked(eye, people[p][j], t)) vis = false;
                        for (int q = 0; vis && q < static_cast<int>(people.size());
                             ++q)
                            for (const auto& [la, lb] : kLimbs) {
                                if (q == p && (la == j || lb == j)) continue;
                                if (capsule_blocks(eye, people[p][j],
                                                   people[q][la], people[q][lb],
                                                   kLimbRadius)) {
                                    vis = false;
                                    break;
                                }
                            }
                    }
                    vis_frame[p][c][j] = vis;
                    if (vis && noise.dropout_rate > 0 && u(g) < noise.dropout_rate)
                        vis = false;
                    if (vis) {
                        det.joints[j].uv =
                            uv + Eigen::Vector2d(px_noise(g), px_noise(g));
                        det.joints[j].conf = conf_vis(g);
                        ++visible_count;
                    } else if (cam.in_bounds(uv) || vis_frame[p][c][j]) {
                        // Reported but low-confidence: near the blocked ray.
                        det.joints[j].uv =
                            uv + Eigen::Vector2d(occ_noise(g), occ_noise(g));
                        det.joints[j].conf = conf_occ(g);
                    } else {
                        det.joints[j].uv = Eigen::Vector2d::Zero();
                        det.joints[j].conf = 0;
                    }
                }
                if (visible_count < 3) continue;  // detector would miss this one
                Eigen::Vector2d lo(1e30, 1e30), hi(-1e30, -1e30);
                for (int j = 0; j < kNumJoints; ++j)
                    if (det.joints[j].conf > 0) {
                        lo = lo.cwiseMin(det.joints[j].uv);
                        hi = hi.cwiseMax(det.joints[j].uv);
                    }
                det.bbox << lo.x() - 10, lo.y() - 10, hi.x() + 10, hi.y() + 10;
                out.detections[f][det.camera].push_back(det);
                out.detection_person[f][det.camera].push_back(p);
            }
        }
    }
    for (auto& track : out.gt_tracks)
        track.bone_lengths = median_bone_lengths(track);
    return out;
}

StereoFrame gen_stereo_pair(const Scene& scene, const StereoRig& rig, double t) {
    if (rig.baseline <= 0) throw BadConfig("stereo baseline must be positive");
    StereoFrame frame;
    RenderOutput left = raycast_render(scene, rig.left, t);
    RenderOutput right = raycast_render(scene, rig.right(), t);
    frame.left = std::move(left.color);
    frame.right = std::move(right.color);
    frame.gt_disparity = RasterF32(rig.left.width, rig.left.height, 0.f);
    const double fxb = rig.left.fx * rig.baseline;
    for (size_t i = 0; i < left.depth.data.size(); ++i) {
        float z = left.depth.data[i];
        if (z > 0) frame.gt_disparity.data[i] = static_cast<float>(fxb / z);
    }
    return frame;
}

Trajectory gen_robot_trajectory(const Scene& scene,
                                const RobotTrajectoryConfig& cfg) {
    const Eigen::Vector3d dims = scene.config().room_dims;
    const double margin = 0.05;
    if (cfg.center.x() - cfg.radius_m < margin ||
        cfg.center.x() + cfg.radius_m > dims.x() - margin ||
        cfg.center.y() - cfg.radius_m < margin ||
        cfg.center.y() + cfg.radius_m > dims.y() - margin ||
        cfg.height_m < margin || cfg.height_m > dims.z() - margin)
        throw CircleOutsideRoom();

    Trajectory traj;
    double total_angle = 2 * M_PI * cfg.laps;
    int frames =
        static_cast<int>(std::floor(total_angle / cfg.angular_speed * cfg.fps)) +
        1;
    for (int k = 0; k < frames; ++k) {
        double t = k / cfg.fps;
        double th = std::min(cfg.angular_speed * t, total_angle);
        Eigen::Vector3d pos = cfg.center + Eigen::Vector3d(cfg.radius_m * std::cos(th),
                                                           cfg.radius_m * std::sin(th),
                                                           cfg.height_m);
        Eigen::Vector3d x_axis;
        if (cfg.face_center) {
            Eigen::Vector3d to_center =
                (cfg.center + Eigen::Vector3d(0, 0, cfg.height_m)) - pos;
            x_axis = to_center.normalized();
        } else {
            x_axis = Eigen::Vector3d(-std::sin(th), std::cos(th), 0);
        }
        Eigen::Vector3d z_axis = Eigen::Vector3d::UnitZ();
        Eigen::Vector3d y_axis = z_axis.cross(x_axis).normalized();
        Eigen::Matrix3d r;
        r.col(0) = x_axis;
        r.col(1) = y_axis;
        r.col(2) = z_axis;
        traj.entries.emplace_back(t, Pose::from_rt(r, pos));
    }
    return traj;
}

}  // namespace twin
