#include <cmath>

#include "roomtwin/sim.hpp"

namespace twin {

namespace {

void validate(const SceneConfig& c) {
    if (c.fps <= 0) throw BadConfig("fps must be positive");
    if (c.duration_s <= 0) throw BadConfig("duration_s must be positive");
    if ((c.room_dims.array() <= 0).any())
        throw BadConfig("room_dims must be positive");
    for (size_t i = 0; i < c.cameras.size(); ++i) {
        const PinholeCamera& cam = c.cameras[i].camera;
        std::string path = "cameras[" + std::to_string(i) + "]";
        if (c.cameras[i].id.empty()) throw BadConfig(path + ".id empty");
        if (cam.fx <= 0 || cam.fy <= 0 || cam.width <= 0 || cam.height <= 0)
            throw BadConfig(path + ".camera intrinsics invalid");
        for (size_t j = 0; j < i; ++j)
            if (c.cameras[j].id == c.cameras[i].id)
                throw BadConfig(path + ".id duplicates cameras[" +
                                std::to_string(j) + "]");
    }
    for (size_t i = 0; i < c.equipment.size(); ++i) {
        const std::string& kind = c.equipment[i].kind;
        if (kind != "table" && kind != "carm" && kind != "stretcher" &&
            kind != "box" && kind != "sphere")
            throw BadConfig("equipment[" + std::to_string(i) + "].kind \"" +
                            kind + "\" unknown");
    }
    for (size_t i = 0; i < c.humans.size(); ++i) {
        const HumanConfig& h = c.humans[i];
        std::string path = "humans[" + std::to_string(i) + "]";
        if (h.waypoints.empty()) throw BadConfig(path + ".waypoints empty");
        if (h.speed < 0) throw BadConfig(path + ".speed negative");
        if (h.height <= 0) throw BadConfig(path + ".height must be positive");
    }
    if (c.wand.d12 <= 0 || c.wand.d13 <= 0 || c.wand.d23 <= 0)
        throw BadConfig("wand distances must be positive");
}

TriMesh equipment_mesh_for(const EquipmentConfig& e) {
    if (e.kind == "table") return make_table();
    if (e.kind == "carm") return make_carm();
    if (e.kind == "stretcher") return make_stretcher();
    if (e.kind == "box") return make_box({0.4, 0.3, 0.25}, 0.12);
    return make_uv_sphere(0.3);
}

Eigen::Vector3d flat(const Eigen::Vector3d& p) { return {p.x(), p.y(), 0}; }

}  // namespace

Scene::Scene(const SceneConfig& config) : config_(config) {
    validate(config_);
    room_ = make_room(config_.room_dims);
    for (const auto& e : config_.equipment)
        equipment_meshes_.push_back(equipment_mesh_for(e));
}

Pose Scene::equipment_pose(int i, double t) const {
    const EquipmentConfig& e = config_.equipment[i];
    Pose motion(Eigen::Quaterniond(
                    Eigen::AngleAxisd(e.spin * t, Eigen::Vector3d::UnitZ())),
                e.drift * t);
    return motion * e.base_pose;
}

Pose Scene::wand_pose(double t) const {
    const WandMotionConfig& m = config_.wand_motion;
    // Lissajous sweep with incommensurate phases covers the capture volume.
    Eigen::Vector3d pos =
        m.center +
        Eigen::Vector3d(m.amplitude.x() * std::sin(m.angular_freq.x() * t),
                        m.amplitude.y() * std::sin(m.angular_freq.y() * t + 1.3),
                        m.amplitude.z() * std::sin(m.angular_freq.z() * t + 0.7));
    Eigen::Quaterniond q =
        Eigen::Quaterniond(
            Eigen::AngleAxisd(0.7 * t, Eigen::Vector3d::UnitZ())) *
        Eigen::Quaterniond(
            Eigen::AngleAxisd(0.4 * std::sin(0.9 * t), Eigen::Vector3d::UnitX()));
    return Pose(q, pos);
}

std::array<Eigen::Vector3d, 3> Scene::wand_markers(double t) const {
    Pose pose = wand_pose(t);
    std::array<Eigen::Vector3d, 3> local = config_.wand.local_points();
    std::array<Eigen::Vector3d, 3> world;
    for (int i = 0; i < 3; ++i) world[i] = pose.apply(local[i]);
    return world;
}

double Scene::path_length(int human) const {
    const auto& wp = config_.humans[human].waypoints;
    double len = 0;
    for (size_t i = 0; i + 1 < wp.size(); ++i)
        len += (flat(wp[i + 1]) - flat(wp[i])).norm();
    return len;
}

std::array<Eigen::Vector3d, 3> Scene::human_segment_frames(int human) const {
    (void)human;
    return {Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY(),
            Eigen::Vector3d::UnitZ()};
}

namespace {

// Walking figure with constant bone lengths: limbs swing sinusoidally with the
// gait phase; `stride` in [0,1] scales the swing so a standing person is still.
std::array<Eigen::Vector3d, kNumJoints> figure(const Eigen::Vector3d& root,
                                               const Eigen::Vector3d& dir,
                                               double phase, double scale,
                                               double stride) {
    Eigen::Vector3d fwd = dir.normalized();
    Eigen::Vector3d side = fwd.cross(Eigen::Vector3d::UnitZ()).normalized();
    auto at = [&](double s, double f, double z) {
        return Eigen::Vector3d(root + scale * (s * side + f * fwd) +
                               Eigen::Vector3d(0, 0, scale * z));
    };
    // Swing angles keep segment lengths exactly constant: each distal joint
    // hangs on a fixed-radius arc in the forward/vertical plane.
    double th_leg = 0.6 * stride * std::sin(phase);
    double th_shin = 1.0 * stride * std::sin(phase);
    double th_arm = 0.8 * stride * std::sin(phase);
    auto hang = [&](const Eigen::Vector3d& from, double len, double th) {
        return Eigen::Vector3d(from + scale * len *
                                          (std::sin(th) * fwd -
                                           std::cos(th) * Eigen::Vector3d::UnitZ()));
    };
    std::array<Eigen::Vector3d, kNumJoints> j;
    j[kNose] = at(0, 0.05, 1.62);
    j[kLeftEye] = at(0.04, 0.07, 1.66);
    j[kRightEye] = at(-0.04, 0.07, 1.66);
    j[kLeftEar] = at(0.08, 0.01, 1.63);
    j[kRightEar] = at(-0.08, 0.01, 1.63);
    j[kLeftShoulder] = at(0.20, 0, 1.45);
    j[kRightShoulder] = at(-0.20, 0, 1.45);
    j[kLeftElbow] = hang(j[kLeftShoulder] + at(0.04, 0, 0) - at(0, 0, 0), 0.27,
                         -th_arm);
    j[kRightElbow] = hang(j[kRightShoulder] - at(0.04, 0, 0) + at(0, 0, 0),
                          0.27, th_arm);
    j[kLeftWrist] = hang(j[kLeftElbow], 0.25, -1.5 * th_arm);
    j[kRightWrist] = hang(j[kRightElbow], 0.25, 1.5 * th_arm);
    j[kLeftHip] = at(0.11, 0, 0.95);
    j[kRightHip] = at(-0.11, 0, 0.95);
    j[kLeftKnee] = hang(j[kLeftHip], 0.43, th_leg);
    j[kRightKnee] = hang(j[kRightHip], 0.43, -th_leg);
    j[kLeftAnkle] = hang(j[kLeftKnee], 0.43, th_shin);
    j[kRightAnkle] = hang(j[kRightKnee], 0.43, -th_shin);
    return j;
}

}  // namespace

std::array<Eigen::Vector3d, kNumJoints> Scene::human_joints(int human,
                                                            double t) const {
    const HumanConfig& h = config_.humans[human];
    std::vector<Eigen::Vector3d> wp;
    for (const auto& p : h.waypoints) wp.push_back(flat(p));

    Eigen::Vector3d pos = wp.front();
    Eigen::Vector3d dir = Eigen::Vector3d::UnitX();
    double total = path_length(human);
    if (wp.size() >= 2 && total > 0 && h.speed > 0) {
        // Ping-pong along the polyline so any duration stays on the path.
        double d = std::fmod(h.speed * t, 2 * total);
        bool reversed = d > total;
        if (reversed) d = 2 * total - d;
        size_t seg = 0;
        while (seg + 2 < wp.size() && d > (wp[seg + 1] - wp[seg]).norm()) {
            d -= (wp[seg + 1] - wp[seg]).norm();
            ++seg;
        }
        Eigen::Vector3d a = wp[seg], b = wp[seg + 1];
        double len = (b - a).norm();
        pos = a + (b - a) * std::min(1.0, d / std::max(len, 1e-12));
        dir = (b - a) / std::max(len, 1e-12);
        if (reversed) dir = -dir;
    } else if (wp.size() >= 2) {
        dir = (wp[1] - wp[0]).normalized();
    }
    // Cadence tied to speed: 1.2 m/s walks at 1 Hz; standing means no swing.
    double cadence_hz = h.speed / 1.2;
    double stride = std::min(1.0, h.speed / 1.2);
    double phase = 2 * M_PI * cadence_hz * t + h.phase;
    return figure(pos, dir, phase, h.height / 1.7, stride);
}

}  // namespace twin
