#pragma once

#include "roomtwin/schemas.hpp"
#include "roomtwin/sim.hpp"

namespace twin {

// scene.json <-> SceneConfig. Unknown keys are rejected with their path;
// omitted keys take the documented defaults.
Json scene_config_to_json(const SceneConfig& config);
SceneConfig scene_config_from_json(const Json& j);

struct SimulateOptions {
    double wand_sigma_px = 0.5;
    double wand_dropout = 0.05;
    KeypointNoise keypoint_noise;
    bool render_frames = true;
    int render_stride = 10;  // write rasters every Nth frame
    bool robot_trajectory = false;
    RobotTrajectoryConfig robot;
};
Json simulate_options_to_json(const SimulateOptions& opts);
SimulateOptions simulate_options_from_json(const Json& j);

// Writes cameras.json, wand.json / wand_gt.json, keypoints.json /
// keypoints_gt.json, equipment.json + model_<name>.ply, per-frame
// depth_/mask_/color_ rasters (and gt_disparity_ for stereo cameras),
// gt_poses.json, and gt_traj.tum when a robot sweep is requested.
void run_simulate(const SceneConfig& config, const SimulateOptions& opts,
                  const std::string& out_dir);

// Stage parameter blocks. Every tunable appears in the resolved config.
struct TrackingParams {
    double tau_px = 20.0;
    double conf_min = 0.3;
    double reject_px = 15.0;
    double gate_m = 0.5;
    int max_missed = 30;
    RefineWeights refine;
    bool refine_tracks = true;
};

struct PipelineConfig {
    uint64_t seed = 1;
    int workers = 1;
    std::string input_dir;  // simulate output directory
    std::string out_dir;
    CalibrateOptions calibration;
    WandGeometry wand{0.20, 0.35, 0.27};
    TrackingParams tracking;
    EquipmentPoseParams registration;
    TrajectoryMetricOptions metrics;
    double pcp_alpha = 0.5;
};
Json pipeline_config_to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const Json& j);

// calibrate -> track -> register over the input directory; emits
// resolved_config.json, calib.json, tracks.json, equipment_poses.json,
// twin_state.json, manifest.json, and report.json when GT sidecars exist.
// Returns the CLI exit code: 0 ok, 2 validation error, 3 numerical failure.
int run_pipeline(const PipelineConfig& config, std::string* error = nullptr);

// Tracking stage used by both the CLI `track` command and run_pipeline:
// per-frame grouping + triangulation (frame-parallel), sequential
// association, then per-track refinement.
std::vector<Track> track_sequence(const KeypointFile& keypoints,
                                  const std::vector<std::string>& camera_ids,
                                  const std::vector<PinholeCamera>& cameras,
                                  const TrackingParams& params, int workers = 1);

}  // namespace twin
