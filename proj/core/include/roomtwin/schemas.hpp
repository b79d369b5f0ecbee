#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "roomtwin/calib.hpp"
#include "roomtwin/metrics.hpp"
#include "roomtwin/reg.hpp"
#include "roomtwin/track.hpp"

namespace twin {

using Json = nlohmann::json;

// Canonical serialization: keys sorted, floats at 17 significant digits,
// newline-terminated. Stable for golden-file diffs.
std::string canonical_dump(const Json& j);
void write_json(const std::string& path, const Json& j);
Json read_json_file(const std::string& path);

// cameras.json: {"cameras":[{id,fx,fy,cx,cy,width,height,q_wxyz,t_xyz[,baseline]}]}
// with q/t giving the world->camera transform.
struct CameraSet {
    std::vector<std::string> ids;
    std::vector<PinholeCamera> cameras;
    std::vector<double> baselines;  // 0 = monocular
};
Json cameras_to_json(const CameraSet& set);
CameraSet cameras_from_json(const Json& j);

// keypoints.json: frame -> camera -> detections {bbox, 17x[u,v,conf]}.
using KeypointFile = std::map<int, std::map<std::string, std::vector<Keypoints2D>>>;
Json keypoints_to_json(const KeypointFile& kp);
KeypointFile keypoints_from_json(const Json& j);

// wand.json: frame -> camera -> 3 unlabeled [u,v] centers.
Json wand_to_json(const WandSequence& seq);
WandSequence wand_from_json(const Json& j);

// Flat metric report: {"metrics":{name:value},"counts":{name:count}}.
Json report_to_json(const EvalReport& report);
EvalReport report_from_json(const Json& j);

// pose.json: {q_wxyz, t_xyz, fitness, inlier_rmse, converged}.
Json registration_to_json(const RegistrationResult& result);
RegistrationResult registration_from_json(const Json& j);

// tracks.json: per person -> per frame -> 17 x {xyz, valid, inferred}.
Json tracks_to_json(const std::vector<Track>& tracks);
std::vector<Track> tracks_from_json(const Json& j);

// calib.json = cameras.json plus a report block.
Json calibration_to_json(const CalibrationResult& result,
                         const std::vector<PinholeCamera>& intrinsics);

Json pose_to_json(const Pose& pose);
Pose pose_from_json(const Json& j, const std::string& path);

Json box_to_json(const OrientedBox& box);
OrientedBox box_from_json(const Json& j, const std::string& path);

}  // namespace twin
