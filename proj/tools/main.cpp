#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "roomtwin/io.hpp"
#include "roomtwin/metrics.hpp"
#include "roomtwin/pipeline.hpp"

namespace fs = std::filesystem;
using namespace twin;

namespace {

Json require_json(const std::string& path) {
    if (!fs::exists(path)) throw SchemaViolation(path + ": file not found");
    return read_json_file(path);
}

void emit_report(const Json& report, const std::string& out_path) {
    std::string text = canonical_dump(report);
    if (out_path.empty())
        std::cout << text;
    else
        write_file(out_path, text);
}

Json report_json(const EvalReport& r) { return report_to_json(r); }

struct EvalArgs {
    std::string a, b, out;
    double fx = 0, baseline = 0, alpha = 0.5;
    int delta = 30;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"roomtwin: calibrate, track, register, and evaluate a room twin"};
    app.require_subcommand(1);

    uint64_t seed = 0;
    int workers = 1;
    auto* seed_opt = app.add_option("--seed", seed, "Root RNG seed (overrides config)");
    app.add_option("--workers", workers, "Worker threads for parallel stages");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset");
    std::string sim_config, sim_out = ".";
    sim->add_option("--config", sim_config, "Scene config JSON")->required();
    sim->add_option("--out", sim_out, "Output directory")->required();

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "Calibrate rig extrinsics from wand sweeps");
    std::string cal_wand, cal_intr, cal_geom, cal_out = "calib.json";
    cal->add_option("--wand", cal_wand, "Wand observations JSON")->required();
    cal->add_option("--intrinsics", cal_intr, "Camera intrinsics JSON")->required();
    cal->add_option("--geometry", cal_geom, "Wand distances d12,d13,d23 in meters")->required();
    cal->add_option("--out", cal_out, "Output calibration JSON");

    // track
    auto* trk = app.add_subcommand("track", "Triangulate and track skeletons");
    std::string trk_kp, trk_cams, trk_out = "tracks.json";
    trk->add_option("--keypoints", trk_kp, "2D keypoints JSON")->required();
    trk->add_option("--cameras", trk_cams, "Calibrated cameras JSON")->required();
    trk->add_option("--out", trk_out, "Output tracks JSON");

    // register
    auto* reg = app.add_subcommand("register", "Estimate a rigid equipment pose");
    std::string reg_views, reg_model, reg_masks = ".", reg_out = "pose.json";
    reg->add_option("--views", reg_views, "View list JSON")->required();
    reg->add_option("--model", reg_model, "Canonical model PLY")->required();
    reg->add_option("--masks", reg_masks, "Directory holding the raster files");
    reg->add_option("--out", reg_out, "Output pose JSON");

    // eval
    auto* ev = app.add_subcommand("eval", "Compute evaluation metrics");
    ev->require_subcommand(1);
    std::map<std::string, EvalArgs> eargs;
    auto* ev_traj = ev->add_subcommand("traj", "ATE/RPE between TUM trajectories");
    ev_traj->add_option("--est", eargs["traj"].a)->required();
    ev_traj->add_option("--gt", eargs["traj"].b)->required();
    ev_traj->add_option("--delta", eargs["traj"].delta, "RPE frame offset");
    ev_traj->add_option("--out", eargs["traj"].out);
    auto* ev_st = ev->add_subcommand("stereo", "Disparity and depth error metrics");
    ev_st->add_option("--pred", eargs["stereo"].a)->required();
    ev_st->add_option("--gt", eargs["stereo"].b)->required();
    ev_st->add_option("--fx", eargs["stereo"].fx, "Focal length, pixels")->required();
    ev_st->add_option("--baseline", eargs["stereo"].baseline, "Baseline, meters")->required();
    ev_st->add_option("--out", eargs["stereo"].out);
    auto* ev_sk = ev->add_subcommand("skeleton", "MPJPE / PCP3D between track files");
    ev_sk->add_option("--pred", eargs["skeleton"].a)->required();
    ev_sk->add_option("--gt", eargs["skeleton"].b)->required();
    ev_sk->add_option("--alpha", eargs["skeleton"].alpha, "PCP3D limb fraction");
    ev_sk->add_option("--out", eargs["skeleton"].out);
    auto* ev_po = ev->add_subcommand("pose", "Pose error and box IoU");
    ev_po->add_option("--pred", eargs["pose"].a)->required();
    ev_po->add_option("--gt", eargs["pose"].b)->required();
    std::string pose_box;
    ev_po->add_option("--box", pose_box, "Canonical box JSON")->required();
    ev_po->add_option("--out", eargs["pose"].out);
    auto* ev_cl = ev->add_subcommand("cloud", "Chamfer distance between PLY clouds");
    ev_cl->add_option("--a", eargs["cloud"].a)->required();
    ev_cl->add_option("--b", eargs["cloud"].b)->required();
    ev_cl->add_option("--out", eargs["cloud"].out);
    auto* ev_im = ev->add_subcommand("image", "PSNR / SSIM between images");
    ev_im->add_option("--a", eargs["image"].a)->required();
    ev_im->add_option("--b", eargs["image"].b)->required();
    ev_im->add_option("--out", eargs["image"].out);

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "Full calibrate/track/register run");
    std::string pipe_config, pipe_in, pipe_out;
    pipe->add_option("--config", pipe_config, "Pipeline config JSON");
    pipe->add_option("--input", pipe_in, "Input dataset directory (overrides config)");
    pipe->add_option("--out", pipe_out, "Output directory (overrides config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    const bool seed_given = seed_opt->count() > 0;

    try {
        if (*sim) {
            Json j = require_json(sim_config);
            SimulateOptions opts;
            if (j.contains("simulate")) {
                opts = simulate_options_from_json(j["simulate"]);
                j.erase("simulate");
            }
            SceneConfig scene = scene_config_from_json(j);
            if (seed_given) scene.seed = seed;
            run_simulate(scene, opts, sim_out);
            return 0;
        }
        if (*cal) {
            WandGeometry wand;
            if (std::sscanf(cal_geom.c_str(), "%lf,%lf,%lf", &wand.d12, &wand.d13,
                            &wand.d23) != 3)
                throw SchemaViolation("--geometry expects d12,d13,d23");
            CameraSet set = cameras_from_json(require_json(cal_intr));
            WandSequence obs = wand_from_json(require_json(cal_wand));
            CalibrationResult result =
                calibrate_rig(obs, set.ids, set.cameras, wand);
            write_json(cal_out, calibration_to_json(result, set.cameras));
            std::cout << "mean_reprojection_px "
                      << format_double(result.mean_reprojection_px) << "\n";
            return 0;
        }
        if (*trk) {
            CameraSet set = cameras_from_json(require_json(trk_cams));
            KeypointFile kp = keypoints_from_json(require_json(trk_kp));
            TrackingParams params;
            std::vector<Track> tracks =
                track_sequence(kp, set.ids, set.cameras, params, workers);
            write_json(trk_out, tracks_to_json(tracks));
            std::cout << "tracks " << tracks.size() << "\n";
            return 0;
        }
        if (*reg) {
            Json jv = require_json(reg_views);
            std::vector<FusionView> views;
            if (!jv.contains("views") || !jv["views"].is_array())
                throw SchemaViolation("/views: expected array");
            for (const Json& v : jv["views"]) {
                Json wrap;
                wrap["cameras"] = Json::array({v.at("camera")});
                CameraSet one = cameras_from_json(wrap);
                FusionView view;
                view.camera = one.cameras[0];
                auto resolve = [&](const std::string& name) {
                    fs::path p(name);
                    return p.is_absolute() ? name : (fs::path(reg_masks) / p).string();
                };
                view.depth = read_pfm(resolve(v.at("depth").get<std::string>()));
                view.mask = read_pnm(resolve(v.at("mask").get<std::string>()));
                view.color = read_pnm(resolve(v.at("color").get<std::string>()));
                views.push_back(std::move(view));
            }
            EquipmentModel model;
            model.model_cloud = read_ply(reg_model);
            EquipmentPoseParams params;
            if (seed_given) params.seed = seed;
            RegistrationResult result = estimate_equipment_pose(views, model, params);
            write_json(reg_out, registration_to_json(result));
            std::cout << "fitness " << format_double(result.fitness) << "\n";
            return 0;
        }
        if (*ev) {
            EvalReport r;
            std::string out;
            if (*ev_traj) {
                const EvalArgs& a = eargs["traj"];
                out = a.out;
                TrajectoryMetricOptions o;
                o.rpe_delta_frames = a.delta;
                Trajectory est = read_tum(a.a), gt = read_tum(a.b);
                r.metrics["ate_rmse_m"] = ate(est, gt, o);
                RpeResult rp = rpe(est, gt, o);
                r.metrics["rpe_translation_rmse_m"] = rp.translation_rmse_m;
                r.metrics["rpe_rotation_rmse_deg"] = rp.rotation_rmse_deg;
                r.counts["est_poses"] = static_cast<long>(est.size());
                r.counts["gt_poses"] = static_cast<long>(gt.size());
            } else if (*ev_st) {
                const EvalArgs& a = eargs["stereo"];
                out = a.out;
                StereoRig rig;
                rig.left.fx = a.fx;
                rig.baseline = a.baseline;
                r = stereo_eval(read_pfm(a.a), read_pfm(a.b), rig);
            } else if (*ev_sk) {
                const EvalArgs& a = eargs["skeleton"];
                out = a.out;
                std::vector<Track> pred = tracks_from_json(require_json(a.a));
                std::vector<Track> gt = tracks_from_json(require_json(a.b));
                std::vector<Skeleton3D> ps, gs;
                for (const Track& p : pred)
                    for (const Track& g : gt) {
                        if (p.person_id != g.person_id) continue;
                        for (const auto& [f, s] : p.frames) {
                            auto it = g.frames.find(f);
                            if (it == g.frames.end()) continue;
                            ps.push_back(s);
                            gs.push_back(it->second);
                        }
                    }
                r.metrics["mpjpe_m"] = mpjpe(ps, gs);
                r.metrics["pcp3d_pct"] = pcp3d(ps, gs, a.alpha);
                r.counts["evaluated_frames"] = static_cast<long>(ps.size());
            } else if (*ev_po) {
                const EvalArgs& a = eargs["pose"];
                out = a.out;
                Pose pred = pose_from_json(require_json(a.a), "/pred");
                Pose gt = pose_from_json(require_json(a.b), "/gt");
                Json jb = require_json(pose_box);
                OrientedBox box = box_from_json(
                    jb.contains("box") ? jb["box"] : jb, "/box");
                PoseError e = pose_error(pred, gt);
                r.metrics["translation_m"] = e.translation_m;
                r.metrics["rotation_deg"] = e.rotation_deg;
                auto posed = [&](const Pose& p) {
                    OrientedBox b = box;
                    b.center = p.apply(box.center);
                    b.rotation = p.q * box.rotation;
                    return b;
                };
                r.metrics["obb_iou"] = obb_iou(posed(pred), posed(gt));
            } else if (*ev_cl) {
                const EvalArgs& a = eargs["cloud"];
                out = a.out;
                PointCloud ca = read_ply(a.a), cb = read_ply(a.b);
                r.metrics["chamfer_m"] = chamfer(ca, cb);
                r.counts["points_a"] = static_cast<long>(ca.positions.size());
                r.counts["points_b"] = static_cast<long>(cb.positions.size());
            } else if (*ev_im) {
                const EvalArgs& a = eargs["image"];
                out = a.out;
                ImageQuality q = image_quality(read_pnm(a.a), read_pnm(a.b));
                r.metrics["psnr_db"] = q.psnr_db;
                r.metrics["ssim"] = q.ssim;
            }
            emit_report(report_json(r), out);
            return 0;
        }
        if (*pipe) {
            PipelineConfig config;
            if (!pipe_config.empty())
                config = pipeline_config_from_json(require_json(pipe_config));
            if (seed_given) config.seed = seed;
            if (workers > 1 || config.workers < 1) config.workers = workers;
            if (!pipe_in.empty()) config.input_dir = pipe_in;
            if (!pipe_out.empty()) config.out_dir = pipe_out;
            std::string error;
            int rc = run_pipeline(config, &error);
            if (rc != 0) std::cerr << "pipeline failed: " << error << "\n";
            return rc;
        }
    } catch (const SchemaViolation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const BadConfig& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const MalformedHeader& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
