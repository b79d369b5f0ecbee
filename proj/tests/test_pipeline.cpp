#include <doctest.h>

#include <filesystem>

#include "roomtwin/io.hpp"
#include "roomtwin/pipeline.hpp"
#include "test_util.hpp"

using namespace twin;
namespace fs = std::filesystem;

namespace {

Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
    Eigen::Vector3d z = (target - eye).normalized();
    Eigen::Vector3d x = z.cross(Eigen::Vector3d::UnitZ()).normalized();
    if (x.norm() < 0.5) x = Eigen::Vector3d::UnitX();
    Eigen::Vector3d y = z.cross(x).normalized();
    Eigen::Matrix3d r;
    r.row(0) = x;
    r.row(1) = y;
    r.row(2) = z;
    Pose world_to_cam(Eigen::Quaterniond(r), Eigen::Vector3d::Zero());
    world_to_cam.t = -(world_to_cam.q * eye);
    return world_to_cam;
}

PinholeCamera small_camera(const Pose& extrinsic) {
    PinholeCamera c;
    c.fx = c.fy = 300;
    c.cx = 160;
    c.cy = 120;
    c.width = 320;
    c.height = 240;
    c.extrinsic = extrinsic;
    return c;
}

SceneConfig tiny_scene() {
    SceneConfig c;
    c.seed = 77;
    c.room_dims = {6, 5, 3};
    c.fps = 15;
    c.duration_s = 3.0;
    Eigen::Vector3d target(3, 2.5, 1.2);
    const Eigen::Vector3d eyes[4] = {
        {0.4, 0.4, 2.6}, {5.6, 0.4, 2.6}, {0.4, 4.6, 2.6}, {5.6, 4.6, 2.6}};
    for (int i = 0; i < 4; ++i) {
        CameraConfig cam;
        cam.id = "cam" + std::to_string(i);
        cam.camera = small_camera(look_at(eyes[i], target));
        if (i == 0) cam.stereo_baseline = 0.08;
        c.cameras.push_back(cam);
    }
    c.wand_motion.center = {3, 2.5, 1.4};
    c.wand_motion.amplitude = {1.4, 1.1, 0.5};
    c.wand_motion.angular_freq = {2.1, 1.7, 2.9};
    EquipmentConfig eq;
    eq.name = "cart";
    eq.kind = "table";
    eq.base_pose = Pose(Eigen::Quaterniond(Eigen::AngleAxisd(0.4, Eigen::Vector3d::UnitZ())),
                        Eigen::Vector3d(4.4, 3.6, 0));
    c.equipment.push_back(eq);
    HumanConfig h;
    h.waypoints = {{1.5, 1.5, 0}, {3.5, 3.0, 0}};
    h.speed = 1.0;
    c.humans.push_back(h);
    return c;
}

std::string fresh_dir(const std::string& name) {
    std::string dir = (fs::temp_directory_path() / name).string();
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("scene config json round trip") {
    SceneConfig c = tiny_scene();
    Json j = scene_config_to_json(c);
    SceneConfig back = scene_config_from_json(j);
    CHECK(canonical_dump(scene_config_to_json(back)) == canonical_dump(j));
    CHECK(back.cameras.size() == 4);
    CHECK(back.cameras[0].stereo_baseline == doctest::Approx(0.08));
    CHECK(back.equipment[0].kind == "box");
    CHECK(back.humans[0].waypoints.size() == 2);
    CHECK(back.humans[0].speed == doctest::Approx(1.0));
}

TEST_CASE("scene config rejects unknown keys with their path") {
    Json j = scene_config_to_json(tiny_scene());
    j["wibble"] = 1;
    CHECK_THROWS_WITH_AS(scene_config_from_json(j),
                         doctest::Contains("wibble"), SchemaViolation);
    j.erase("wibble");
    j["wand_motion"]["centre"] = Json::array({0, 0, 0});
    try {
        scene_config_from_json(j);
        FAIL("expected SchemaViolation");
    } catch (const SchemaViolation& e) {
        CHECK(std::string(e.what()).find("wand_motion/centre") != std::string::npos);
    }
}

TEST_CASE("pipeline config materializes every default and round trips") {
    PipelineConfig defaults;
    Json j = pipeline_config_to_json(defaults);
    for (const char* key : {"seed", "workers", "calibration", "wand", "tracking",
                            "registration", "metrics"})
        CHECK(j.contains(key));
    CHECK(j["calibration"]["bundle"].contains("huber_delta_px"));
    CHECK(j["tracking"]["refine"].contains("w_bone"));
    PipelineConfig back = pipeline_config_from_json(j);
    CHECK(canonical_dump(pipeline_config_to_json(back)) == canonical_dump(j));

    // Partial configs inherit defaults.
    PipelineConfig partial = pipeline_config_from_json(
        Json{{"seed", 9}, {"tracking", {{"gate_m", 0.8}}}});
    CHECK(partial.seed == 9);
    CHECK(partial.tracking.gate_m == doctest::Approx(0.8));
    CHECK(partial.tracking.tau_px == doctest::Approx(defaults.tracking.tau_px));
    CHECK(partial.calibration.min_shared_frames == defaults.calibration.min_shared_frames);

    Json bad = j;
    bad["registration"]["voxels"] = 0.01;
    CHECK_THROWS_WITH_AS(pipeline_config_from_json(bad),
                         doctest::Contains("registration/voxels"), SchemaViolation);
}

TEST_CASE("run_simulate writes the declared dataset files") {
    std::string dir = fresh_dir("twin_sim_out");
    SceneConfig scene = tiny_scene();
    SimulateOptions opts;
    opts.wand_sigma_px = 0.0;
    opts.wand_dropout = 0.05;
    opts.keypoint_noise.sigma_px = 1.0;
    opts.render_stride = 15;
    opts.robot_trajectory = true;
    opts.robot.radius_m = 2.0;
    opts.robot.center = {3, 2.5, 0};
    run_simulate(scene, opts, dir);

    for (const char* f : {"cameras.json", "wand.json", "wand_gt.json",
                          "keypoints.json", "keypoints_gt.json", "equipment.json",
                          "model_cart.ply", "gt_poses.json", "gt_traj.tum",
                          "depth_cam0_000000.pfm", "mask_cam0_000000.pgm",
                          "color_cam0_000000.ppm", "gt_disparity_cam0_000000.pfm",
                          "depth_cam3_000015.pfm"})
        CHECK_MESSAGE(fs::exists(dir + "/" + std::string(f)), f);
    CHECK_FALSE(fs::exists(dir + "/gt_disparity_cam1_000000.pfm"));

    // Emitted files parse back through the schema layer.
    CameraSet set = cameras_from_json(read_json_file(dir + "/cameras.json"));
    CHECK(set.ids.size() == 4);
    CHECK(set.baselines[0] == doctest::Approx(0.08));
    WandSequence wand = wand_from_json(read_json_file(dir + "/wand.json"));
    CHECK(wand.frames.size() > 20);
    KeypointFile kp = keypoints_from_json(read_json_file(dir + "/keypoints.json"));
    CHECK(static_cast<int>(kp.size()) == scene.frame_count());
    std::vector<Track> gt =
        tracks_from_json(read_json_file(dir + "/keypoints_gt.json")["tracks"]);
    REQUIRE(gt.size() == 1);
    CHECK(static_cast<int>(gt[0].frames.size()) == scene.frame_count());
    PointCloud model = read_ply(dir + "/model_cart.ply");
    CHECK(model.positions.size() == 20000);
    CHECK(model.colors.size() == 20000);
    RasterF32 disp = read_pfm(dir + "/gt_disparity_cam0_000000.pfm");
    RasterF32 depth = read_pfm(dir + "/depth_cam0_000000.pfm");
    const double fxb = set.cameras[0].fx * set.baselines[0];
    for (size_t i = 0; i < disp.data.size(); i += 97)
        if (depth.data[i] > 0)
            CHECK(disp.data[i] == doctest::Approx(fxb / depth.data[i]).epsilon(1e-5));
}

TEST_CASE("pipeline end to end: exit 0, sane report, byte-identical rerun") {
    std::string in_dir = fresh_dir("twin_pipe_in");
    SceneConfig scene = tiny_scene();
    SimulateOptions opts;
    opts.wand_sigma_px = 0.0;
    opts.keypoint_noise.sigma_px = 1.0;
    opts.render_stride = 15;
    run_simulate(scene, opts, in_dir);

    PipelineConfig config;
    config.seed = 5;
    config.input_dir = in_dir;
    config.out_dir = fresh_dir("twin_pipe_out_a");
    std::string error;
    REQUIRE_MESSAGE(run_pipeline(config, &error) == 0, error);

    for (const char* f : {"resolved_config.json", "calib.json", "tracks.json",
                          "equipment_poses.json", "twin_state.json",
                          "manifest.json", "report.json"})
        CHECK_MESSAGE(fs::exists(config.out_dir + "/" + std::string(f)), f);

    Json report = read_json_file(config.out_dir + "/report.json");
    CHECK(report["metrics"]["calibration_mean_reproj_px"].get<double>() < 1e-5);
    CHECK(report["metrics"]["mpjpe_m"].get<double>() < 0.05);
    CHECK(report["metrics"]["pcp3d_pct"].get<double>() > 90.0);
    CHECK(report["metrics"]["cart_translation_median_m"].get<double>() < 0.10);
    CHECK(report["metrics"]["cart_obb_iou_median"].get<double>() > 0.5);
    CHECK(report["counts"]["matched_tracks"].get<int>() == 1);

    Json manifest = read_json_file(config.out_dir + "/manifest.json");
    for (const char* stage : {"calibrate", "track", "register", "twin_state", "eval"})
        CHECK(manifest["stages"][stage].get<bool>());

    // The resolved config re-parses to the same configuration.
    PipelineConfig echoed = pipeline_config_from_json(
        read_json_file(config.out_dir + "/resolved_config.json"));
    CHECK(canonical_dump(pipeline_config_to_json(echoed)) ==
          canonical_dump(pipeline_config_to_json(config)));

    // Deterministic rerun: bit-identical products.
    PipelineConfig again = config;
    again.out_dir = fresh_dir("twin_pipe_out_b");
    REQUIRE_MESSAGE(run_pipeline(again, &error) == 0, error);
    for (const char* f : {"twin_state.json", "report.json", "calib.json",
                          "tracks.json", "equipment_poses.json"})
        CHECK_MESSAGE(read_file(config.out_dir + "/" + std::string(f)) ==
                          read_file(again.out_dir + "/" + std::string(f)),
                      f);
}

TEST_CASE("pipeline validation failures exit 2 with the offending path") {
    PipelineConfig config;
    config.input_dir = (fs::temp_directory_path() / "twin_missing_dir").string();
    fs::remove_all(config.input_dir);
    config.out_dir = fresh_dir("twin_pipe_out_bad");
    std::string error;
    CHECK(run_pipeline(config, &error) == 2);
    CHECK(error.find("twin_missing_dir") != std::string::npos);

    std::string partial = fresh_dir("twin_pipe_in_partial");
    write_json(partial + "/cameras.json", Json{{"cameras", Json::array()}});
    config.input_dir = partial;
    CHECK(run_pipeline(config, &error) == 2);
    CHECK(error.find("wand.json") != std::string::npos);
}
