#pragma once

#include <map>
#include <string>
#include <vector>

#include "roomtwin/geom.hpp"
#include "roomtwin/io.hpp"
#include "roomtwin/track.hpp"

namespace twin {

struct OrientedBox {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    Eigen::Vector3d half_extents = Eigen::Vector3d::Ones();
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();

    double volume() const { return 8.0 * half_extents.prod(); }
};

struct EvalReport {
    std::map<std::string, double> metrics;  // name (with unit suffix) -> value
    std::map<std::string, long> counts;
};

// Mean Euclidean joint error over joints valid in both sequences.
double mpjpe(const std::vector<Skeleton3D>& pred, const std::vector<Skeleton3D>& gt);

// Percentage of limbs with both endpoints within alpha * GT limb length.
double pcp3d(const std::vector<Skeleton3D>& pred, const std::vector<Skeleton3D>& gt,
             double alpha = 0.5);

// Symmetric mean of (unsquared) nearest-neighbor distances.
double chamfer(const PointCloud& a, const PointCloud& b);

struct PoseError {
    double translation_m = 0;
    double rotation_deg = 0;
};
PoseError pose_error(const Pose& pred, const Pose& gt);

// Exact intersection-over-union via half-space clipping of box polytopes.
double obb_iou(const OrientedBox& a, const OrientedBox& b);

struct TrajectoryMetricOptions {
    double max_time_diff_s = 0.02;  // nearest-neighbor timestamp association
    int rpe_delta_frames = 30;
};

// RMSE of positions after SE(3) Umeyama alignment (scale fixed to 1).
double ate(const Trajectory& est, const Trajectory& gt,
           const TrajectoryMetricOptions& opts = {});

struct RpeResult {
    double translation_rmse_m = 0;
    double rotation_rmse_deg = 0;
};
RpeResult rpe(const Trajectory& est, const Trajectory& gt,
              const TrajectoryMetricOptions& opts = {});

// Disparity-domain EPE/Bad-2px/D1-all and depth-domain MAE/AbsRel.
// Pixels where the GT carries the 0 sentinel are excluded.
EvalReport stereo_eval(const RasterF32& pred_disp, const RasterF32& gt_disp,
                       const StereoRig& rig);

struct ImageQuality {
    double psnr_db = 0;  // +inf when images are identical
    double ssim = 0;
};
ImageQuality image_quality(const Image8& a, const Image8& b);

}  // namespace twin
