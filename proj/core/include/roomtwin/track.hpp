#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "roomtwin/geom.hpp"

namespace twin {

inline constexpr int kNumJoints = 17;

// COCO-17 joint order.
enum CocoJoint {
    kNose = 0, kLeftEye, kRightEye, kLeftEar, kRightEar,
    kLeftShoulder, kRightShoulder, kLeftElbow, kRightElbow,
    kLeftWrist, kRightWrist, kLeftHip, kRightHip,
    kLeftKnee, kRightKnee, kLeftAnkle, kRightAnkle
};

extern const std::array<const char*, kNumJoints> kJointNames;

// 16 limbs spanning the 17-joint skeleton (a tree), documented in
// docs/formats.md. Each entry is (parent, child).
inline constexpr int kNumLimbs = 16;
extern const std::array<std::pair<int, int>, kNumLimbs> kLimbs;

struct Joint2D {
    Eigen::Vector2d uv;
    double conf = 0;  // [0,1]
};

struct Keypoints2D {
    std::string camera;
    Eigen::Vector4d bbox = Eigen::Vector4d::Zero();  // u0 v0 u1 v1
    std::array<Joint2D, kNumJoints> joints;
};

struct Joint3D {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    bool valid = false;
    bool inferred = false;  // filled in by refinement, not triangulated
    double residual_px = 0;
};

struct Skeleton3D {
    std::array<Joint3D, kNumJoints> joints;

    int valid_count() const {
        int n = 0;
        for (const auto& j : joints) n += j.valid ? 1 : 0;
        return n;
    }
};

struct Track {
    int person_id = -1;
    std::map<int, Skeleton3D> frames;
    std::array<double, kNumLimbs> bone_lengths{};  // median over track; 0 = undefined
    int missed_frames = 0;                         // consecutive unmatched frames
};

// One detection per camera at most; indices into the per-camera input lists.
struct ViewGroup {
    std::vector<std::pair<int, int>> members;  // (camera index, detection index)
};

// Cross-view grouping by symmetric epipolar distance over confident joints.
std::vector<ViewGroup> match_views(
    const std::vector<std::vector<Keypoints2D>>& detections,
    const std::vector<PinholeCamera>& cameras, double tau_px = 20.0);

// Confidence-weighted per-joint triangulation; a joint is valid iff its mean
// reprojection residual stays below reject_px.
Skeleton3D triangulate_skeleton(const ViewGroup& group,
                                const std::vector<std::vector<Keypoints2D>>& detections,
                                const std::vector<PinholeCamera>& cameras,
                                double conf_min = 0.3, double reject_px = 15.0);

struct AssociationResult {
    std::vector<std::pair<int, int>> assignments;  // (track index, skeleton index)
    std::vector<int> new_skeletons;                // unmatched skeleton indices
    std::vector<int> terminated_tracks;            // track indices past patience
};

// Frame-to-frame one-to-one assignment (Hungarian) with a metric gate;
// tracks unmatched for max_missed consecutive frames terminate.
AssociationResult associate_tracks(const std::vector<Track>& tracks,
                                   const std::vector<Skeleton3D>& skeletons,
                                   double gate_m = 0.5, int max_missed = 30);

// Applies an association step in place: updates matched tracks with the new
// skeletons at `frame`, spawns tracks for unmatched skeletons, drops
// terminated ones. Returns surviving track list.
void advance_tracks(std::vector<Track>& tracks, const std::vector<Skeleton3D>& skeletons,
                    int frame, int* next_person_id, double gate_m = 0.5,
                    int max_missed = 30);

// Optimal assignment over a rectangular cost matrix; returns col index per
// row (-1 when unassigned). Exposed for testing.
std::vector<int> hungarian(const Eigen::MatrixXd& cost);

struct RefineWeights {
    double w_2d = 1e-2;
    double w_acc = 50.0;
    double w_bone = 10.0;
    double huber_px = 2.0;
    int max_iterations = 20;
};

// Per-frame 2D detections feeding the refinement data term: for each frame of
// the track, the detections (across cameras) associated with this person.
using TrackDetections = std::map<int, std::vector<Keypoints2D>>;

// Joint trajectory refinement: 3D data term + robust 2D reprojection +
// acceleration smoothness + bone-length consistency. Inpaints invalid joints
// and flags them `inferred`. Never increases the objective. camera_ids maps
// Keypoints2D::camera onto the cameras list.
Track refine_tracks(const Track& track, const TrackDetections& detections2d,
                    const std::vector<PinholeCamera>& cameras,
                    const std::vector<std::string>& camera_ids,
                    const RefineWeights& weights = {});

// Track-median bone lengths over frames where both endpoints are valid.
std::array<double, kNumLimbs> median_bone_lengths(const Track& track);

}  // namespace twin
