#include "roomtwin/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <thread>

#include "roomtwin/io.hpp"
#include "roomtwin/metrics.hpp"

namespace fs = std::filesystem;

namespace twin {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw SchemaViolation(path + ": " + what);
}

void reject_unknown(const Json& j, const std::set<std::string>& allowed,
                    const std::string& path) {
    if (!j.is_object()) fail(path, "expected object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) fail(path + "/" + it.key(), "unknown key");
}

double get_num(const Json& j, const std::string& key, double fallback,
               const std::string& path) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_number()) fail(path + "/" + key, "expected number");
    return it->get<double>();
}

bool get_bool(const Json& j, const std::string& key, bool fallback,
              const std::string& path) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_boolean()) fail(path + "/" + key, "expected bool");
    return it->get<bool>();
}

std::string get_str(const Json& j, const std::string& key,
                    const std::string& fallback, const std::string& path) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_string()) fail(path + "/" + key, "expected string");
    return it->get<std::string>();
}

Eigen::Vector3d get_vec3(const Json& j, const std::string& key,
                         const Eigen::Vector3d& fallback,
                         const std::string& path) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_array() || it->size() != 3) fail(path + "/" + key, "expected [x,y,z]");
    for (int i = 0; i < 3; ++i)
        if (!(*it)[i].is_number())
            fail(path + "/" + key + "/" + std::to_string(i), "expected number");
    return {(*it)[0].get<double>(), (*it)[1].get<double>(), (*it)[2].get<double>()};
}

Json vec3_json(const Eigen::Vector3d& v) { return Json::array({v.x(), v.y(), v.z()}); }

}  // namespace

Json scene_config_to_json(const SceneConfig& c) {
    Json j;
    j["seed"] = c.seed;
    j["room_dims"] = vec3_json(c.room_dims);
    j["fps"] = c.fps;
    j["duration_s"] = c.duration_s;
    j["wand"] = {{"d12", c.wand.d12}, {"d13", c.wand.d13}, {"d23", c.wand.d23}};
    j["wand_motion"] = {{"center", vec3_json(c.wand_motion.center)},
                        {"amplitude", vec3_json(c.wand_motion.amplitude)},
                        {"angular_freq", vec3_json(c.wand_motion.angular_freq)}};
    CameraSet set;
    for (const auto& cam : c.cameras) {
        set.ids.push_back(cam.id);
        set.cameras.push_back(cam.camera);
        set.baselines.push_back(cam.stereo_baseline);
    }
    j["cameras"] = cameras_to_json(set)["cameras"];
    j["equipment"] = Json::array();
    for (const auto& e : c.equipment)
        j["equipment"].push_back({{"name", e.name},
                                  {"kind", e.kind},
                                  {"pose", pose_to_json(e.base_pose)},
                                  {"drift", vec3_json(e.drift)},
                                  {"spin", e.spin}});
    j["humans"] = Json::array();
    for (const auto& h : c.humans) {
        Json wp = Json::array();
        for (const auto& p : h.waypoints) wp.push_back(vec3_json(p));
        j["humans"].push_back({{"waypoints", wp},
                               {"speed", h.speed},
                               {"height", h.height},
                               {"phase", h.phase}});
    }
    return j;
}

SceneConfig scene_config_from_json(const Json& j) {
    reject_unknown(j, {"seed", "room_dims", "fps", "duration_s", "wand",
                       "wand_motion", "cameras", "equipment", "humans"},
                   "/scene");
    SceneConfig c;
    c.seed = static_cast<uint64_t>(get_num(j, "seed", 1, "/scene"));
    c.room_dims = get_vec3(j, "room_dims", c.room_dims, "/scene");
    c.fps = get_num(j, "fps", c.fps, "/scene");
    c.duration_s = get_num(j, "duration_s", c.duration_s, "/scene");
    if (j.contains("wand")) {
        reject_unknown(j["wand"], {"d12", "d13", "d23"}, "/scene/wand");
        c.wand.d12 = get_num(j["wand"], "d12", c.wand.d12, "/scene/wand");
        c.wand.d13 = get_num(j["wand"], "d13", c.wand.d13, "/scene/wand");
        c.wand.d23 = get_num(j["wand"], "d23", c.wand.d23, "/scene/wand");
    }
    if (j.contains("wand_motion")) {
        const Json& m = j["wand_motion"];
        reject_unknown(m, {"center", "amplitude", "angular_freq"},
                       "/scene/wand_motion");
        c.wand_motion.center = get_vec3(m, "center", c.wand_motion.center,
                                        "/scene/wand_motion");
        c.wand_motion.amplitude = get_vec3(m, "amplitude", c.wand_motion.amplitude,
                                           "/scene/wand_motion");
        c.wand_motion.angular_freq = get_vec3(
            m, "angular_freq", c.wand_motion.angular_freq, "/scene/wand_motion");
    }
    if (j.contains("cameras")) {
        Json wrapper;
        wrapper["cameras"] = j["cameras"];
        CameraSet set = cameras_from_json(wrapper);
        for (size_t i = 0; i < set.ids.size(); ++i) {
            CameraConfig cam;
            cam.id = set.ids[i];
            cam.camera = set.cameras[i];
            cam.stereo_baseline = set.baselines[i];
            c.cameras.push_back(cam);
        }
    }
    if (j.contains("equipment")) {
        if (!j["equipment"].is_array()) fail("/scene/equipment", "expected array");
        for (size_t i = 0; i < j["equipment"].size(); ++i) {
            const Json& je = j["equipment"][i];
            std::string path = "/scene/equipment/" + std::to_string(i);
            reject_unknown(je, {"name", "kind", "pose", "drift", "spin"}, path);
            EquipmentConfig e;
            e.name = get_str(je, "name", "equipment" + std::to_string(i), path);
            e.kind = get_str(je, "kind", "box", path);
            if (je.contains("pose")) e.base_pose = pose_from_json(je["pose"], path);
            e.drift = get_vec3(je, "drift", e.drift, path);
            e.spin = get_num(je, "spin", e.spin, path);
            c.equipment.push_back(e);
        }
    }
    if (j.contains("humans")) {
        if (!j["humans"].is_array()) fail("/scene/humans", "expected array");
        for (size_t i = 0; i < j["humans"].size(); ++i) {
            const Json& jh = j["humans"][i];
            std::string path = "/scene/humans/" + std::to_string(i);
            reject_unknown(jh, {"waypoints", "speed", "height", "phase"}, path);
            HumanConfig h;
            if (jh.contains("waypoints")) {
                if (!jh["waypoints"].is_array())
                    fail(path + "/waypoints", "expected array");
                for (size_t w = 0; w < jh["waypoints"].size(); ++w) {
                    Json wrap;
                    wrap["p"] = jh["waypoints"][w];
                    h.waypoints.push_back(get_vec3(
                        wrap, "p", Eigen::Vector3d::Zero(), path + "/waypoints"));
                }
            }
            h.speed = get_num(jh, "speed", h.speed, path);
            h.height = get_num(jh, "height", h.height, path);
            h.phase = get_num(jh, "phase", h.phase, path);
            c.humans.push_back(h);
        }
    }
    return c;
}

Json simulate_options_to_json(const SimulateOptions& o) {
    Json j;
    j["wand_sigma_px"] = o.wand_sigma_px;
    j["wand_dropout"] = o.wand_dropout;
    j["keypoint_noise"] = {{"sigma_px", o.keypoint_noise.sigma_px},
                           {"conf_visible_lo", o.keypoint_noise.conf_visible_lo},
                           {"conf_visible_hi", o.keypoint_noise.conf_visible_hi},
                           {"conf_occluded_lo", o.keypoint_noise.conf_occluded_lo},
                           {"conf_occluded_hi", o.keypoint_noise.conf_occluded_hi},
                           {"dropout_rate", o.keypoint_noise.dropout_rate},
                           {"model_occlusion", o.keypoint_noise.model_occlusion}};
    j["render_frames"] = o.render_frames;
    j["render_stride"] = o.render_stride;
    j["robot_trajectory"] = o.robot_trajectory;
    j["robot"] = {{"radius_m", o.robot.radius_m},
                  {"height_m", o.robot.height_m},
                  {"laps", o.robot.laps},
                  {"fps", o.robot.fps},
                  {"angular_speed", o.robot.angular_speed},
                  {"center", vec3_json(o.robot.center)},
                  {"face_center", o.robot.face_center}};
    return j;
}

SimulateOptions simulate_options_from_json(const Json& j) {
    reject_unknown(j, {"wand_sigma_px", "wand_dropout", "keypoint_noise",
                       "render_frames", "render_stride", "robot_trajectory",
                       "robot"},
                   "/simulate");
    SimulateOptions o;
    o.wand_sigma_px = get_num(j, "wand_sigma_px", o.wand_sigma_px, "/simulate");
    o.wand_dropout = get_num(j, "wand_dropout", o.wand_dropout, "/simulate");
    if (j.contains("keypoint_noise")) {
        const Json& n = j["keypoint_noise"];
        const std::string p = "/simulate/keypoint_noise";
        reject_unknown(n, {"sigma_px", "conf_visible_lo", "conf_visible_hi",
                           "conf_occluded_lo", "conf_occluded_hi", "dropout_rate",
                           "model_occlusion"},
                       p);
        KeypointNoise& kn = o.keypoint_noise;
        kn.sigma_px = get_num(n, "sigma_px", kn.sigma_px, p);
        kn.conf_visible_lo = get_num(n, "conf_visible_lo", kn.conf_visible_lo, p);
        kn.conf_visible_hi = get_num(n, "conf_visible_hi", kn.conf_visible_hi, p);
        kn.conf_occluded_lo = get_num(n, "conf_occluded_lo", kn.conf_occluded_lo, p);
        kn.conf_occluded_hi = get_num(n, "conf_occluded_hi", kn.conf_occluded_hi, p);
        kn.dropout_rate = get_num(n, "dropout_rate", kn.dropout_rate, p);
        kn.model_occlusion = get_bool(n, "model_occlusion", kn.model_occlusion, p);
    }
    o.render_frames = get_bool(j, "render_frames", o.render_frames, "/simulate");
    o.render_stride = static_cast<int>(
        get_num(j, "render_stride", o.render_stride, "/simulate"));
    o.robot_trajectory =
        get_bool(j, "robot_trajectory", o.robot_trajectory, "/simulate");
    if (j.contains("robot")) {
        const Json& r = j["robot"];
        const std::string p = "/simulate/robot";
        reject_unknown(r, {"radius_m", "height_m", "laps", "fps", "angular_speed",
                           "center", "face_center"},
                       p);
        o.robot.radius_m = get_num(r, "radius_m", o.robot.radius_m, p);
        o.robot.height_m = get_num(r, "height_m", o.robot.height_m, p);
        o.robot.laps = get_num(r, "laps", o.robot.laps, p);
        o.robot.fps = get_num(r, "fps", o.robot.fps, p);
        o.robot.angular_speed = get_num(r, "angular_speed", o.robot.angular_speed, p);
        o.robot.center = get_vec3(r, "center", o.robot.center, p);
        o.robot.face_center = get_bool(r, "face_center", o.robot.face_center, p);
    }
    return o;
}

namespace {

std::string frame_tag(int f) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", f);
    return buf;
}

OrientedBox mesh_bounds(const TriMesh& mesh) {
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e30);
    Eigen::Vector3d hi = -lo;
    for (const auto& v : mesh.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    OrientedBox box;
    box.center = 0.5 * (lo + hi);
    box.half_extents = 0.5 * (hi - lo);
    return box;
}

}  // namespace

void run_simulate(const SceneConfig& config, const SimulateOptions& opts,
                  const std::string& out_dir) {
    Scene scene(config);
    fs::create_directories(out_dir);
    auto out = [&](const std::string& name) { return out_dir + "/" + name; };

    CameraSet set;
    for (const auto& cam : config.cameras) {
        set.ids.push_back(cam.id);
        set.cameras.push_back(cam.camera);
        set.baselines.push_back(cam.stereo_baseline);
    }
    write_json(out("cameras.json"), cameras_to_json(set));

    if (!config.cameras.empty()) {
        WandDataset wand =
            gen_wand_sequence(scene, opts.wand_sigma_px, opts.wand_dropout);
        write_json(out("wand.json"), wand_to_json(wand.observations));
        Json gt;
        gt["extrinsics"] = Json::array();
        for (const auto& e : wand.gt_extrinsics)
            gt["extrinsics"].push_back(pose_to_json(e));
        gt["frames"] = Json::object();
        for (const auto& [f, markers] : wand.gt_markers_world) {
            Json m = Json::array();
            for (int i = 0; i < 3; ++i) m.push_back(vec3_json(markers[i]));
            gt["frames"][std::to_string(f)] = m;
        }
        write_json(out("wand_gt.json"), gt);
    }

    if (!config.humans.empty()) {
        KeypointDataset kp = gen_keypoint_sequence(scene, opts.keypoint_noise);
        write_json(out("keypoints.json"), keypoints_to_json(kp.detections));
        Json gt;
        gt["tracks"] = tracks_to_json(kp.gt_tracks);
        Json person = Json::object();
        for (const auto& [f, cams] : kp.detection_person) {
            Json jf = Json::object();
            for (const auto& [id, people] : cams) jf[id] = people;
            person[std::to_string(f)] = jf;
        }
        gt["detection_person"] = person;
        write_json(out("keypoints_gt.json"), gt);
    }

    if (!config.equipment.empty()) {
        Json models = Json::array();
        for (int i = 0; i < static_cast<int>(config.equipment.size()); ++i) {
            const std::string& name = config.equipment[i].name;
            PointCloud cloud = sample_surface(scene.equipment_mesh(i), 20000,
                                              derive_seed(config.seed, "model:" + name));
            std::string ply = "model_" + name + ".ply";
            write_ply(out(ply), cloud);
            models.push_back({{"name", name},
                              {"instance", 2 + i},
                              {"model", ply},
                              {"box", box_to_json(mesh_bounds(scene.equipment_mesh(i)))}});
        }
        write_json(out("equipment.json"), Json{{"equipment", models}});
    }

    std::vector<int> rendered;
    if (opts.render_frames && !config.cameras.empty()) {
        for (int f = 0; f < config.frame_count(); f += std::max(1, opts.render_stride))
            rendered.push_back(f);
        for (int f : rendered) {
            double t = f / config.fps;
            for (const auto& cam : config.cameras) {
                RenderOutput r = raycast_render(scene, cam.camera, t);
                std::string tag = cam.id + "_" + frame_tag(f);
                write_pfm(out("depth_" + tag + ".pfm"), r.depth);
                write_pnm(out("mask_" + tag + ".pgm"), r.mask);
                write_pnm(out("color_" + tag + ".ppm"), r.color);
                if (cam.stereo_baseline > 0) {
                    RasterF32 disp(r.depth.width, r.depth.height, 0.f);
                    const double fxb = cam.camera.fx * cam.stereo_baseline;
                    for (size_t i = 0; i < disp.data.size(); ++i)
                        if (r.depth.data[i] > 0)
                            disp.data[i] = static_cast<float>(fxb / r.depth.data[i]);
                    write_pfm(out("gt_disparity_" + tag + ".pfm"), disp);
                }
            }
        }
    }

    Json gt_poses;
    gt_poses["frames"] = rendered;
    gt_poses["equipment"] = Json::object();
    for (int i = 0; i < static_cast<int>(config.equipment.size()); ++i) {
        Json per_frame = Json::object();
        for (int f : rendered)
            per_frame[std::to_string(f)] =
                pose_to_json(scene.equipment_pose(i, f / config.fps));
        gt_poses["equipment"][config.equipment[i].name] = per_frame;
    }
    write_json(out("gt_poses.json"), gt_poses);

    if (opts.robot_trajectory)
        write_tum(out("gt_traj.tum"), gen_robot_trajectory(scene, opts.robot));
}

Json pipeline_config_to_json(const PipelineConfig& c) {
    Json j;
    j["seed"] = c.seed;
    j["workers"] = c.workers;
    j["input_dir"] = c.input_dir;
    j["out_dir"] = c.out_dir;
    j["calibration"] = {
        {"min_shared_frames", c.calibration.min_shared_frames},
        {"label_tol_rel", c.calibration.label_tol_rel},
        {"bundle",
         {{"huber_delta_px", c.calibration.bundle.huber_delta_px},
          {"wand_distance_weight", c.calibration.bundle.wand_distance_weight},
          {"init_lambda", c.calibration.bundle.init_lambda},
          {"max_iterations", c.calibration.bundle.max_iterations},
          {"rel_cost_tol", c.calibration.bundle.rel_cost_tol}}}};
    j["wand"] = {{"d12", c.wand.d12}, {"d13", c.wand.d13}, {"d23", c.wand.d23}};
    j["tracking"] = {{"tau_px", c.tracking.tau_px},
                     {"conf_min", c.tracking.conf_min},
                     {"reject_px", c.tracking.reject_px},
                     {"gate_m", c.tracking.gate_m},
                     {"max_missed", c.tracking.max_missed},
                     {"refine_tracks", c.tracking.refine_tracks},
                     {"refine",
                      {{"w_2d", c.tracking.refine.w_2d},
                       {"w_acc", c.tracking.refine.w_acc},
                       {"w_bone", c.tracking.refine.w_bone},
                       {"huber_px", c.tracking.refine.huber_px},
                       {"max_iterations", c.tracking.refine.max_iterations}}}};
    j["registration"] = {{"voxel_m", c.registration.voxel_m},
                         {"fpfh_radius_factor", c.registration.fpfh_radius_factor},
                         {"ransac_dist_factor", c.registration.ransac_dist_factor},
                         {"geometric_weight", c.registration.geometric_weight},
                         {"seed", c.registration.seed},
                         {"z_min", c.registration.z_min},
                         {"z_max", c.registration.z_max}};
    j["metrics"] = {{"max_time_diff_s", c.metrics.max_time_diff_s},
                    {"rpe_delta_frames", c.metrics.rpe_delta_frames},
                    {"pcp_alpha", c.pcp_alpha}};
    return j;
}

PipelineConfig pipeline_config_from_json(const Json& j) {
    reject_unknown(j, {"seed", "workers", "input_dir", "out_dir", "calibration",
                       "wand", "tracking", "registration", "metrics"},
                   "/pipeline");
    PipelineConfig c;
    c.seed = static_cast<uint64_t>(get_num(j, "seed", 1, "/pipeline"));
    c.workers = static_cast<int>(get_num(j, "workers", 1, "/pipeline"));
    c.input_dir = get_str(j, "input_dir", "", "/pipeline");
    c.out_dir = get_str(j, "out_dir", "", "/pipeline");
    if (j.contains("calibration")) {
        const Json& cal = j["calibration"];
        const std::string p = "/pipeline/calibration";
        reject_unknown(cal, {"min_shared_frames", "label_tol_rel", "bundle"}, p);
        c.calibration.min_shared_frames = static_cast<int>(
            get_num(cal, "min_shared_frames", c.calibration.min_shared_frames, p));
        c.calibration.label_tol_rel =
            get_num(cal, "label_tol_rel", c.calibration.label_tol_rel, p);
        if (cal.contains("bundle")) {
            const Json& b = cal["bundle"];
            reject_unknown(b, {"huber_delta_px", "wand_distance_weight",
                               "init_lambda", "max_iterations", "rel_cost_tol"},
                           p + "/bundle");
            BundleOptions& bo = c.calibration.bundle;
            bo.huber_delta_px = get_num(b, "huber_delta_px", bo.huber_delta_px, p);
            bo.wand_distance_weight =
                get_num(b, "wand_distance_weight", bo.wand_distance_weight, p);
            bo.init_lambda = get_num(b, "init_lambda", bo.init_lambda, p);
            bo.max_iterations = static_cast<int>(
                get_num(b, "max_iterations", bo.max_iterations, p));
            bo.rel_cost_tol = get_num(b, "rel_cost_tol", bo.rel_cost_tol, p);
        }
    }
    if (j.contains("wand")) {
        reject_unknown(j["wand"], {"d12", "d13", "d23"}, "/pipeline/wand");
        c.wand.d12 = get_num(j["wand"], "d12", c.wand.d12, "/pipeline/wand");
        c.wand.d13 = get_num(j["wand"], "d13", c.wand.d13, "/pipeline/wand");
        c.wand.d23 = get_num(j["wand"], "d23", c.wand.d23, "/pipeline/wand");
    }
    if (j.contains("tracking")) {
        const Json& t = j["tracking"];
        const std::string p = "/pipeline/tracking";
        reject_unknown(t, {"tau_px", "conf_min", "reject_px", "gate_m",
                           "max_missed", "refine_tracks", "refine"},
                       p);
        c.tracking.tau_px = get_num(t, "tau_px", c.tracking.tau_px, p);
        c.tracking.conf_min = get_num(t, "conf_min", c.tracking.conf_min, p);
        c.tracking.reject_px = get_num(t, "reject_px", c.tracking.reject_px, p);
        c.tracking.gate_m = get_num(t, "gate_m", c.tracking.gate_m, p);
        c.tracking.max_missed =
            static_cast<int>(get_num(t, "max_missed", c.tracking.max_missed, p));
        c.tracking.refine_tracks =
            get_bool(t, "refine_tracks", c.tracking.refine_tracks, p);
        if (t.contains("refine")) {
            const Json& r = t["refine"];
            reject_unknown(r, {"w_2d", "w_acc", "w_bone", "huber_px",
                               "max_iterations"},
                           p + "/refine");
            RefineWeights& w = c.tracking.refine;
            w.w_2d = get_num(r, "w_2d", w.w_2d, p);
            w.w_acc = get_num(r, "w_acc", w.w_acc, p);
            w.w_bone = get_num(r, "w_bone", w.w_bone, p);
            w.huber_px = get_num(r, "huber_px", w.huber_px, p);
            w.max_iterations =
                static_cast<int>(get_num(r, "max_iterations", w.max_iterations, p));
        }
    }
    if (j.contains("registration")) {
        const Json& r = j["registration"];
        const std::string p = "/pipeline/registration";
        reject_unknown(r, {"voxel_m", "fpfh_radius_factor", "ransac_dist_factor",
                           "geometric_weight", "seed", "z_min", "z_max"},
                       p);
        EquipmentPoseParams& e = c.registration;
        e.voxel_m = get_num(r, "voxel_m", e.voxel_m, p);
        e.fpfh_radius_factor = get_num(r, "fpfh_radius_factor", e.fpfh_radius_factor, p);
        e.ransac_dist_factor = get_num(r, "ransac_dist_factor", e.ransac_dist_factor, p);
        e.geometric_weight = get_num(r, "geometric_weight", e.geometric_weight, p);
        e.seed = static_cast<uint64_t>(get_num(r, "seed", 0, p));
        e.z_min = get_num(r, "z_min", e.z_min, p);
        e.z_max = get_num(r, "z_max", e.z_max, p);
    }
    if (j.contains("metrics")) {
        const Json& m = j["metrics"];
        const std::string p = "/pipeline/metrics";
        reject_unknown(m, {"max_time_diff_s", "rpe_delta_frames", "pcp_alpha"}, p);
        c.metrics.max_time_diff_s =
            get_num(m, "max_time_diff_s", c.metrics.max_time_diff_s, p);
        c.metrics.rpe_delta_frames = static_cast<int>(
            get_num(m, "rpe_delta_frames", c.metrics.rpe_delta_frames, p));
        c.pcp_alpha = get_num(m, "pcp_alpha", c.pcp_alpha, p);
    }
    return c;
}

namespace {

void parallel_for(int n, int workers, const std::function<void(int)>& body) {
    workers = std::max(1, workers);
    if (workers == 1 || n <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int w = 0; w < std::min(workers, n); ++w)
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) body(i);
        });
    for (auto& t : pool) t.join();
}

}  // namespace

std::vector<Track> track_sequence(const KeypointFile& keypoints,
                                  const std::vector<std::string>& camera_ids,
                                  const std::vector<PinholeCamera>& cameras,
                                  const TrackingParams& params, int workers) {
    std::vector<int> frames;
    for (const auto& [f, per_cam] : keypoints) frames.push_back(f);

    struct FrameResult {
        std::vector<Skeleton3D> skeletons;
        std::vector<std::vector<Keypoints2D>> contributing;  // per skeleton
    };
    std::vector<FrameResult> per_frame(frames.size());

    parallel_for(static_cast<int>(frames.size()), workers, [&](int fi) {
        const auto& per_cam = keypoints.at(frames[fi]);
        std::vector<std::vector<Keypoints2D>> dets(cameras.size());
        for (size_t c = 0; c < cameras.size(); ++c) {
            auto it = per_cam.find(camera_ids[c]);
            if (it != per_cam.end()) dets[c] = it->second;
        }
        for (const ViewGroup& group : match_views(dets, cameras, params.tau_px)) {
            try {
                Skeleton3D s = triangulate_skeleton(group, dets, cameras,
                                                    params.conf_min,
                                                    params.reject_px);
                std::vector<Keypoints2D> used;
                for (const auto& [cam, det] : group.members)
                    used.push_back(dets[cam][det]);
                per_frame[fi].skeletons.push_back(s);
                per_frame[fi].contributing.push_back(std::move(used));
            } catch (const InsufficientViews&) {
            }
        }
    });

    // Sequential association; terminated tracks are kept for the output.
    std::vector<Track> active, finished;
    std::map<int, TrackDetections> dets_by_person;
    int next_id = 0;
    for (size_t fi = 0; fi < frames.size(); ++fi) {
        int frame = frames[fi];
        const FrameResult& fr = per_frame[fi];
        AssociationResult assoc = associate_tracks(active, fr.skeletons,
                                                   params.gate_m,
                                                   params.max_missed);
        std::vector<char> matched(active.size(), false);
        for (const auto& [t, s] : assoc.assignments) {
            active[t].frames[frame] = fr.skeletons[s];
            active[t].missed_frames = 0;
            matched[t] = true;
            dets_by_person[active[t].person_id][frame] = fr.contributing[s];
        }
        for (size_t t = 0; t < active.size(); ++t)
            if (!matched[t]) ++active[t].missed_frames;
        std::vector<Track> survivors;
        for (auto& track : active) {
            if (track.missed_frames < params.max_missed)
                survivors.push_back(std::move(track));
            else
                finished.push_back(std::move(track));
        }
        active = std::move(survivors);
        for (int s : assoc.new_skeletons) {
            Track track;
            track.person_id = next_id++;
            track.frames[frame] = fr.skeletons[s];
            dets_by_person[track.person_id][frame] = fr.contributing[s];
            active.push_back(std::move(track));
        }
        for (Track& t : active) t.bone_lengths = median_bone_lengths(t);
    }
    for (auto& t : active) finished.push_back(std::move(t));
    std::sort(finished.begin(), finished.end(),
              [](const Track& a, const Track& b) { return a.person_id < b.person_id; });

    if (params.refine_tracks) {
        static const TrackDetections kNoDetections;
        parallel_for(static_cast<int>(finished.size()), workers, [&](int i) {
            auto it = dets_by_person.find(finished[i].person_id);
            const TrackDetections& dets =
                it == dets_by_person.end() ? kNoDetections : it->second;
            try {
                finished[i] = refine_tracks(finished[i], dets, cameras, camera_ids,
                                            params.refine);
            } catch (const TrackTooShort&) {
            }
        });
    }
    return finished;
}

namespace {

struct EquipmentSpec {
    std::string name;
    int instance = 0;
    EquipmentModel model;
};

double median_of(std::vector<double> v) {
    if (v.empty()) return 0;
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

OrientedBox posed_box(const OrientedBox& canonical, const Pose& pose) {
    OrientedBox b;
    b.center = pose.apply(canonical.center);
    b.rotation = pose.q * canonical.rotation;
    b.half_extents = canonical.half_extents;
    return b;
}

}  // namespace

int run_pipeline(const PipelineConfig& config, std::string* error) {
    auto set_error = [&](const std::string& msg) {
        if (error) *error = msg;
    };
    Json manifest;
    manifest["stages"] = Json::object();
    std::string out_dir = config.out_dir.empty() ? "." : config.out_dir;
    auto out = [&](const std::string& name) { return out_dir + "/" + name; };
    auto in = [&](const std::string& name) { return config.input_dir + "/" + name; };
    auto flush_manifest = [&] { write_json(out("manifest.json"), manifest); };

    try {
        if (config.input_dir.empty() || !fs::is_directory(config.input_dir)) {
            set_error("input_dir not found: " + config.input_dir);
            return 2;
        }
        for (const char* required : {"cameras.json", "wand.json", "keypoints.json"})
            if (!fs::exists(in(required))) {
                set_error("missing input file: " + in(required));
                return 2;
            }
        fs::create_directories(out_dir);
        write_json(out("resolved_config.json"), pipeline_config_to_json(config));
        flush_manifest();

        // Calibrate, then anchor the gauge (camera 0's frame) back to the
        // world frame of the reference extrinsics so every downstream product
        // is comparable with GT sidecars.
        CameraSet set = cameras_from_json(read_json_file(in("cameras.json")));
        WandSequence wand = wand_from_json(read_json_file(in("wand.json")));
        CalibrationResult calib = calibrate_rig(wand, set.ids, set.cameras,
                                                config.wand, config.calibration);
        write_json(out("calib.json"), calibration_to_json(calib, set.cameras));
        std::vector<PinholeCamera> rig = set.cameras;
        for (size_t c = 0; c < rig.size(); ++c)
            rig[c].extrinsic = calib.extrinsics[c] * set.cameras[0].extrinsic;
        manifest["stages"]["calibrate"] = true;
        flush_manifest();

        // Track.
        KeypointFile keypoints = keypoints_from_json(read_json_file(in("keypoints.json")));
        std::vector<Track> tracks = track_sequence(keypoints, set.ids, rig,
                                                   config.tracking, config.workers);
        write_json(out("tracks.json"), tracks_to_json(tracks));
        manifest["stages"]["track"] = true;
        flush_manifest();

        // Register equipment on every rendered frame.
        Json equipment_poses = Json::object();
        std::vector<EquipmentSpec> specs;
        std::vector<int> rendered;
        if (fs::exists(in("equipment.json")) && fs::exists(in("gt_poses.json"))) {
            Json eq = read_json_file(in("equipment.json"));
            for (const Json& je : eq["equipment"]) {
                EquipmentSpec spec;
                spec.name = je["name"].get<std::string>();
                spec.instance = je["instance"].get<int>();
                spec.model.name = spec.name;
                spec.model.model_cloud = read_ply(in(je["model"].get<std::string>()));
                spec.model.canonical_box = box_from_json(je["box"], "/equipment/box");
                specs.push_back(std::move(spec));
            }
            Json gt_poses = read_json_file(in("gt_poses.json"));
            for (const Json& f : gt_poses["frames"]) rendered.push_back(f.get<int>());
        }
        for (const EquipmentSpec& spec : specs) {
            Json per_frame = Json::object();
            for (int f : rendered) {
                std::vector<FusionView> views;
                for (size_t c = 0; c < rig.size(); ++c) {
                    std::string tag = set.ids[c] + "_" + frame_tag(f);
                    if (!fs::exists(in("depth_" + tag + ".pfm"))) continue;
                    FusionView view;
                    view.depth = read_pfm(in("depth_" + tag + ".pfm"));
                    view.color = read_pnm(in("color_" + tag + ".ppm"));
                    Image8 mask = read_pnm(in("mask_" + tag + ".pgm"));
                    for (auto& m : mask.data)
                        m = (m == spec.instance) ? 255 : 0;
                    view.mask = std::move(mask);
                    view.camera = rig[c];
                    views.push_back(std::move(view));
                }
                if (views.empty()) continue;
                EquipmentPoseParams params = config.registration;
                if (params.seed == 0)
                    params.seed = derive_seed(config.seed,
                                              "register:" + spec.name + ":" +
                                                  std::to_string(f));
                RegistrationResult result =
                    estimate_equipment_pose(views, spec.model, params);
                per_frame[std::to_string(f)] = registration_to_json(result);
            }
            equipment_poses[spec.name] = per_frame;
        }
        write_json(out("equipment_poses.json"), equipment_poses);
        manifest["stages"]["register"] = true;
        flush_manifest();

        // Twin state: calibrated rig + skeleton tracks + equipment poses.
        Json twin;
        CameraSet rig_set = set;
        rig_set.cameras = rig;
        twin["cameras"] = cameras_to_json(rig_set);
        twin["tracks"] = tracks_to_json(tracks);
        twin["equipment"] = equipment_poses;
        write_json(out("twin_state.json"), twin);
        manifest["stages"]["twin_state"] = true;
        flush_manifest();

        // Evaluate against GT sidecars when present.
        Json report;
        report["metrics"] = Json::object();
        report["counts"] = Json::object();
        if (fs::exists(in("keypoints_gt.json"))) {
            std::vector<Track> gt =
                tracks_from_json(read_json_file(in("keypoints_gt.json"))["tracks"]);
            // Greedy track->GT matching by mean pelvis-midpoint distance.
            std::vector<Skeleton3D> pred_seq, gt_seq;
            int id_aligned = 0;
            for (const Track& track : tracks) {
                double best = 1e30;
                const Track* best_gt = nullptr;
                for (const Track& g : gt) {
                    double sum = 0;
                    int n = 0;
                    for (const auto& [f, s] : track.frames) {
                        auto it = g.frames.find(f);
                        if (it == g.frames.end()) continue;
                        Eigen::Vector3d pa = 0.5 * (s.joints[kLeftHip].position +
                                                    s.joints[kRightHip].position);
                        Eigen::Vector3d pb =
                            0.5 * (it->second.joints[kLeftHip].position +
                                   it->second.joints[kRightHip].position);
                        sum += (pa - pb).norm();
                        ++n;
                    }
                    if (n > 0 && sum / n < best) {
                        best = sum / n;
                        best_gt = &g;
                    }
                }
                if (!best_gt) continue;
                ++id_aligned;
                for (const auto& [f, s] : track.frames) {
                    auto it = best_gt->frames.find(f);
                    if (it == best_gt->frames.end()) continue;
                    pred_seq.push_back(s);
                    gt_seq.push_back(it->second);
                }
            }
            if (!pred_seq.empty()) {
                report["metrics"]["mpjpe_m"] = mpjpe(pred_seq, gt_seq);
                report["metrics"]["pcp3d_pct"] =
                    pcp3d(pred_seq, gt_seq, config.pcp_alpha);
                report["counts"]["tracks"] = static_cast<long>(tracks.size());
                report["counts"]["matched_tracks"] = id_aligned;
                report["counts"]["evaluated_frames"] =
                    static_cast<long>(pred_seq.size());
            }
        }
        if (!specs.empty()) {
            Json gt_poses = read_json_file(in("gt_poses.json"));
            for (const EquipmentSpec& spec : specs) {
                std::vector<double> terr, rerr, ious;
                for (const auto& [fs_, jr] : equipment_poses[spec.name].items()) {
                    Pose pred = pose_from_json(jr, "/equipment_poses");
                    Pose gt = pose_from_json(
                        gt_poses["equipment"][spec.name][fs_], "/gt_poses");
                    PoseError e = pose_error(pred, gt);
                    terr.push_back(e.translation_m);
                    rerr.push_back(e.rotation_deg);
                    ious.push_back(obb_iou(posed_box(spec.model.canonical_box, pred),
                                           posed_box(spec.model.canonical_box, gt)));
                }
                report["metrics"][spec.name + "_translation_median_m"] = median_of(terr);
                report["metrics"][spec.name + "_rotation_median_deg"] = median_of(rerr);
                report["metrics"][spec.name + "_obb_iou_median"] = median_of(ious);
            }
        }
        report["metrics"]["calibration_mean_reproj_px"] = calib.mean_reprojection_px;
        report["metrics"]["calibration_max_reproj_px"] = calib.max_reprojection_px;
        write_json(out("report.json"), report);
        manifest["stages"]["eval"] = true;
        flush_manifest();
        return 0;
    } catch (const SchemaViolation& e) {
        set_error(e.what());
        return 2;
    } catch (const BadConfig& e) {
        set_error(e.what());
        return 2;
    } catch (const Error& e) {
        set_error(e.what());
        flush_manifest();
        return 3;
    } catch (const std::exception& e) {
        set_error(e.what());
        return 3;
    }
}

}  // namespace twin
