#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "roomtwin/geom.hpp"
#include "roomtwin/io.hpp"
#include "roomtwin/metrics.hpp"

namespace twin {

// 3 angular-feature sub-histograms x 11 bins, each sub-histogram normalized
// to sum 100. An all-zero feature with valid == false marks an isolated point.
struct FpfhFeature {
    std::array<double, 33> bins{};
    bool valid = false;
};

struct RegistrationResult {
    Pose pose;                // model-to-scene
    double fitness = 0;       // inlier fraction in [0,1]
    double inlier_rmse = 0;   // meters
    bool converged = false;
};

struct EquipmentModel {
    std::string name;
    PointCloud model_cloud;   // colored samples of the canonical shape
    OrientedBox canonical_box;
};

struct FusionView {
    RasterF32 depth;   // meters, 0 = invalid
    Image8 mask;       // nonzero = foreground
    Image8 color;      // 3-channel
    PinholeCamera camera;
};

// Back-projects masked, depth-valid pixels of every view into world space and
// concatenates the resulting colored clouds.
PointCloud fuse_masked_depth(const std::vector<FusionView>& views,
                             double z_min = 0.3, double z_max = 10.0);

// One point per occupied voxel, at the centroid of its members.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel_m);

// k-NN covariance normals, sign-flipped toward the viewpoint.
PointCloud estimate_normals(const PointCloud& cloud, int k = 30,
                            const Eigen::Vector3d& viewpoint = Eigen::Vector3d::Zero());

// FPFH descriptors over radius neighborhoods (Rusu's construction).
std::vector<FpfhFeature> compute_fpfh(const PointCloud& cloud, double radius_m);

struct RansacOptions {
    double dist_thresh_m = 0.015;
    int max_iterations = 100000;
    double confidence = 0.999;
    double edge_similarity = 0.9;
    double min_fitness = 0.1;
    uint64_t seed = 0;
    int num_candidates = 1;  // distinct pose basins kept for refinement
    // Adds color_weight * intensity difference to the descriptor distance when
    // both clouds carry colors. On shapes dominated by featureless surfaces
    // the geometric descriptors alone are ambiguous; photometry disambiguates.
    double color_weight = 60.0;
};

// RANSAC over mutual-nearest FPFH correspondences, 3-sample rigid hypotheses
// pruned by edge-length similarity. Inliers additionally require front-facing
// normal agreement when both clouds carry normals, so a near-symmetric shape
// cannot bury the true pose under a flipped one.
RegistrationResult ransac_feature_registration(const PointCloud& source,
                                               const std::vector<FpfhFeature>& source_features,
                                               const PointCloud& target,
                                               const std::vector<FpfhFeature>& target_features,
                                               const RansacOptions& opts);

// Same search, but returns up to num_candidates pose hypotheses from distinct
// basins, best fitness first. Only the best one must clear min_fitness.
std::vector<RegistrationResult> ransac_feature_candidates(
    const PointCloud& source, const std::vector<FpfhFeature>& source_features,
    const PointCloud& target, const std::vector<FpfhFeature>& target_features,
    const RansacOptions& opts);

struct IcpLevel {
    double voxel_m;
    int max_iterations;
};

struct ColoredIcpOptions {
    double geometric_weight = 0.968;  // delta; 1.0 = geometry only
    std::vector<IcpLevel> levels;     // coarse to fine; empty = single pass at base_voxel
    double base_voxel_m = 0.01;
    double rel_rmse_tol = 1e-6;
    int min_correspondences = 10;

    static ColoredIcpOptions defaults(double voxel_m) {
        ColoredIcpOptions o;
        o.base_voxel_m = voxel_m;
        o.levels = {{voxel_m * 4, 50}, {voxel_m * 2, 30}, {voxel_m, 14}};
        return o;
    }
};

// Coarse-to-fine joint geometric/photometric ICP (point-to-plane + tangent-
// plane color term). Target needs normals and colors.
RegistrationResult colored_icp(const PointCloud& source, const PointCloud& target,
                               const Pose& init, const ColoredIcpOptions& opts);

struct EquipmentPoseParams {
    double voxel_m = 0.01;
    double fpfh_radius_factor = 5.0;   // radius = factor * voxel
    double ransac_dist_factor = 1.5;   // dist_thresh = factor * voxel
    double geometric_weight = 0.968;
    uint64_t seed = 0;
    double z_min = 0.3, z_max = 10.0;
};

// Full pipeline: fuse -> downsample -> normals -> FPFH -> RANSAC -> colored ICP.
// Stage failures are re-thrown with the stage name prefixed.
RegistrationResult estimate_equipment_pose(const std::vector<FusionView>& views,
                                           const EquipmentModel& model,
                                           const EquipmentPoseParams& params = {});

}  // namespace twin
