#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "roomtwin/geom.hpp"

namespace twin {

// Three-marker wand with pairwise-distinct inter-marker distances.
struct WandGeometry {
    double d12 = 0, d13 = 0, d23 = 0;  // meters

    // Marker layout in the wand's own frame: m1 at origin, m2 on +x,
    // m3 in the xy-plane.
    std::array<Eigen::Vector3d, 3> local_points() const;
};

struct WandObservation {
    int frame = 0;
    std::string camera;
    std::array<Eigen::Vector2d, 3> pixels;  // unlabeled marker centers
};

// Per-frame unlabeled marker pixels, keyed frame -> camera id.
struct WandSequence {
    std::map<int, std::map<std::string, std::array<Eigen::Vector2d, 3>>> frames;
};

struct CalibrationResult {
    std::vector<std::string> camera_ids;          // camera 0 is the gauge
    std::vector<Pose> extrinsics;                 // camera-from-world, [0] identity
    std::map<int, std::array<Eigen::Vector3d, 3>> wand_points;  // world frame
    double mean_reprojection_px = 0;
    double max_reprojection_px = 0;
    std::map<std::string, double> per_camera_reprojection_px;
};

// Unique assignment of 3 unlabeled points to wand markers by pairwise
// distances; tol_rel is the relative distance tolerance.
// Returns perm with perm[marker_slot] = input index.
std::array<int, 3> label_markers(const std::array<Eigen::Vector3d, 3>& points,
                                 const WandGeometry& wand, double tol_rel = 0.1);

// Minimal 3-point pose: camera-from-object candidates (up to 4), all with
// positive depths, reprojecting the inputs exactly on exact data.
std::vector<Pose> p3p(const std::array<Eigen::Vector3d, 3>& object_points,
                      const std::array<Eigen::Vector2d, 3>& pixels,
                      const PinholeCamera& intrinsics);

// Linear 11-parameter DLT over >= 6 non-coplanar correspondences, rotation
// projected onto SO(3), then <= 10 Gauss-Newton reprojection steps.
Pose pnp_dlt(const std::vector<std::pair<Eigen::Vector3d, Eigen::Vector2d>>& corr,
             const PinholeCamera& intrinsics);

struct BundleOptions {
    double huber_delta_px = 2.0;
    double wand_distance_weight = 1e4;
    double init_lambda = 1e-3;
    int max_iterations = 100;
    double rel_cost_tol = 1e-10;
};

struct BundleObservation {
    int frame;
    int camera;   // index into CalibrationResult::extrinsics
    int marker;   // 0..2
    Eigen::Vector2d pixel;
};

// Levenberg-Marquardt over extrinsics 1..N-1 and per-frame marker triples;
// camera 0 is fixed (gauge). Robust reprojection + wand-distance residuals.
CalibrationResult bundle_adjust(const CalibrationResult& initial,
                                const std::vector<PinholeCamera>& intrinsics,
                                const std::vector<BundleObservation>& observations,
                                const WandGeometry& wand,
                                const BundleOptions& opts = {});

// Recomputes mean/max/per-camera pixel residuals from the stored poses and
// wand points.
void fill_reprojection_stats(CalibrationResult& result,
                             const std::vector<PinholeCamera>& intrinsics,
                             const std::vector<BundleObservation>& observations);

struct CalibrateOptions {
    int min_shared_frames = 20;
    double label_tol_rel = 0.1;
    BundleOptions bundle;
};

// Full rig calibration: P3P bootstrap in camera 0, DLT PnP for the other
// cameras against the accumulated marker cloud, then global bundle adjustment.
CalibrationResult calibrate_rig(const WandSequence& wand_obs,
                                const std::vector<std::string>& camera_ids,
                                const std::vector<PinholeCamera>& intrinsics,
                                const WandGeometry& wand,
                                const CalibrateOptions& opts = {});

}  // namespace twin
