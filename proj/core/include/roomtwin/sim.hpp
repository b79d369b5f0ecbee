#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "roomtwin/calib.hpp"
#include "roomtwin/geom.hpp"
#include "roomtwin/io.hpp"
#include "roomtwin/track.hpp"

namespace twin {

struct TriMesh {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<Eigen::Vector3i> faces;
    std::vector<Eigen::Vector3d> vertex_colors;  // [0,1]

    void append(const TriMesh& other);
    void transform(const Pose& pose);
};

// Primitive builders. Colors are procedural 3D checkers unless stated.
TriMesh make_box(const Eigen::Vector3d& half_extents, double checker_m = 0.25);
// Room interior: an inward-facing box shell spanning [0,dims] shifted so the
// floor is z=0 and the center is above the origin.
TriMesh make_room(const Eigen::Vector3d& dims, double checker_m = 0.5);
TriMesh make_cylinder(double radius, double length, int segments = 24,
                      double checker_m = 0.1);
TriMesh make_uv_sphere(double radius, int rings = 24, int segments = 48);
// Equipment assemblies (canonical frame, centered on origin footprint).
TriMesh make_table();
TriMesh make_carm();
TriMesh make_stretcher();

// Uniform-area surface samples with barycentric-interpolated colors and
// face normals.
PointCloud sample_surface(const TriMesh& mesh, int count, uint64_t seed);

// Axis-aligned BVH over triangles; watertight-enough double-precision
// ray-triangle intersection.
class Bvh {
public:
    explicit Bvh(const TriMesh& mesh);

    struct Hit {
        double t = -1;       // ray parameter; < 0 means miss
        int face = -1;
        double u = 0, v = 0; // barycentric of verts 1,2
    };
    Hit intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                  double t_max = 1e30) const;
    bool occluded(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                  double eps = 1e-6) const;

private:
    struct Node {
        Eigen::Vector3d lo, hi;
        int left = -1, right = -1;
        int begin = 0, end = 0;  // leaf triangle range
    };
    int build(int begin, int end);
    const TriMesh* mesh_;
    std::vector<int> order_;
    std::vector<Eigen::Vector3d> centroids_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

struct CameraConfig {
    std::string id;
    PinholeCamera camera;
    double stereo_baseline = 0;  // 0 = monocular
};

struct HumanConfig {
    std::vector<Eigen::Vector3d> waypoints;  // on the floor, z ignored
    double speed = 1.0;   // m/s
    double height = 1.7;  // stature, meters
    double phase = 0;     // gait phase offset, radians
};

struct EquipmentConfig {
    std::string name;
    std::string kind;  // "table" | "carm" | "stretcher" | "box" | "sphere"
    Pose base_pose;
    // Optional slow drift: pose(t) = translate(drift*t) * rotate_z(spin*t) * base.
    Eigen::Vector3d drift = Eigen::Vector3d::Zero();  // m/s
    double spin = 0;                                  // rad/s about z
};

struct WandMotionConfig {
    Eigen::Vector3d center{0, 0, 1.5};
    Eigen::Vector3d amplitude{2.0, 1.5, 0.8};
    Eigen::Vector3d angular_freq{0.31, 0.23, 0.41};  // rad/s, Lissajous
};

struct SceneConfig {
    uint64_t seed = 1;  // mandatory; all randomness derives from it
    Eigen::Vector3d room_dims{7, 6, 3};
    std::vector<CameraConfig> cameras;
    std::vector<EquipmentConfig> equipment;
    std::vector<HumanConfig> humans;
    WandGeometry wand{0.20, 0.35, 0.27};
    WandMotionConfig wand_motion;
    double fps = 30;
    double duration_s = 10;

    int frame_count() const { return static_cast<int>(fps * duration_s + 0.5); }
};

// Instantiated world: meshes, animated poses, ground-truth accessors.
class Scene {
public:
    explicit Scene(const SceneConfig& config);

    const SceneConfig& config() const { return config_; }
    const std::vector<CameraConfig>& cameras() const { return config_.cameras; }

    // Instance ids: 0 = background (no hit), 1 = room, 2+i = equipment i.
    int instance_count() const { return 2 + static_cast<int>(config_.equipment.size()); }
    const TriMesh& room_mesh() const { return room_; }
    const TriMesh& equipment_mesh(int i) const { return equipment_meshes_[i]; }
    Pose equipment_pose(int i, double t) const;

    Pose wand_pose(double t) const;
    std::array<Eigen::Vector3d, 3> wand_markers(double t) const;

    std::array<Eigen::Vector3d, 3> human_segment_frames(int human) const;  // unused
    std::array<Eigen::Vector3d, kNumJoints> human_joints(int human, double t) const;
    int human_count() const { return static_cast<int>(config_.humans.size()); }

    double path_length(int human) const;

private:
    SceneConfig config_;
    TriMesh room_;
    std::vector<TriMesh> equipment_meshes_;
};

struct RenderOutput {
    RasterF32 depth;  // camera-frame z, 0 = no hit
    Image8 mask;      // instance id per pixel
    Image8 color;     // 3-channel, barycentric vertex colors
};

// Per-pixel nearest-triangle ray cast over room + equipment at time t.
RenderOutput raycast_render(const Scene& scene, const PinholeCamera& cam, double t);

struct WandDataset {
    WandSequence observations;
    // Ground truth sidecar.
    std::map<int, std::array<Eigen::Vector3d, 3>> gt_markers_world;
    std::vector<Pose> gt_extrinsics;  // per configured camera, camera-from-world
};

WandDataset gen_wand_sequence(const Scene& scene, double sigma_px,
                              double dropout_rate, uint64_t stream_seed = 0);

struct KeypointDataset {
    // frame -> camera id -> detections.
    std::map<int, std::map<std::string, std::vector<Keypoints2D>>> detections;
    // frame -> camera id -> person index per detection.
    std::map<int, std::map<std::string, std::vector<int>>> detection_person;
    std::vector<Track> gt_tracks;  // all joints valid
    // frame -> person -> camera index -> per-joint visibility.
    std::map<int, std::vector<std::vector<std::array<bool, kNumJoints>>>> visibility;
};

struct KeypointNoise {
    double sigma_px = 0;
    double conf_visible_lo = 0.7, conf_visible_hi = 1.0;
    double conf_occluded_lo = 0.05, conf_occluded_hi = 0.3;
    double dropout_rate = 0;   // chance a visible joint is reported occluded-like
    bool model_occlusion = true;
};

KeypointDataset gen_keypoint_sequence(const Scene& scene, const KeypointNoise& noise,
                                      uint64_t stream_seed = 0);

struct StereoFrame {
    Image8 left, right;
    RasterF32 gt_disparity;  // left-image geometric disparity, 0 = invalid
};

StereoFrame gen_stereo_pair(const Scene& scene, const StereoRig& rig, double t);

struct RobotTrajectoryConfig {
    double radius_m = 4.3;
    double height_m = 1.2;
    double laps = 1;
    double fps = 30;
    double angular_speed = 0.5;  // rad/s
    Eigen::Vector3d center{0, 0, 0};
    bool face_center = false;    // otherwise heading tangent
};

Trajectory gen_robot_trajectory(const Scene& scene, const RobotTrajectoryConfig& cfg);

// Named sub-stream seeding so adding a stream never perturbs the others.
uint64_t derive_seed(uint64_t base, const std::string& stream);

}  // namespace twin
