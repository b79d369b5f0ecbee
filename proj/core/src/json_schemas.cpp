#include "roomtwin/schemas.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "roomtwin/io.hpp"

namespace twin {

namespace {

void dump_rec(const Json& j, std::ostringstream& out) {
    switch (j.type()) {
        case Json::value_t::object: {
            out << '{';
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) out << ',';
                first = false;
                out << Json(it.key()).dump() << ':';
                dump_rec(it.value(), out);
            }
            out << '}';
            break;
        }
        case Json::value_t::array: {
            out << '[';
            for (size_t i = 0; i < j.size(); ++i) {
                if (i) out << ',';
                dump_rec(j[i], out);
            }
            out << ']';
            break;
        }
        case Json::value_t::number_float: {
            double v = j.get<double>();
            if (std::isfinite(v)) out << format_double(v);
            else out << (v > 0 ? "\"inf\"" : (v < 0 ? "\"-inf\"" : "\"nan\""));
            break;
        }
        default:
            out << j.dump();
    }
}

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw SchemaViolation(path + ": " + what);
}

const Json& need(const Json& j, const std::string& key, const std::string& path) {
    if (!j.is_object()) fail(path, "expected object");
    auto it = j.find(key);
    if (it == j.end()) fail(path + "/" + key, "missing field");
    return *it;
}

double need_num(const Json& j, const std::string& key, const std::string& path) {
    const Json& v = need(j, key, path);
    if (!v.is_number()) fail(path + "/" + key, "expected number");
    return v.get<double>();
}

std::vector<double> need_vec(const Json& j, const std::string& key,
                             const std::string& path, size_t n) {
    const Json& v = need(j, key, path);
    if (!v.is_array() || v.size() != n)
        fail(path + "/" + key, "expected array of " + std::to_string(n));
    std::vector<double> out;
    for (size_t i = 0; i < n; ++i) {
        if (!v[i].is_number())
            fail(path + "/" + key + "/" + std::to_string(i), "expected number");
        out.push_back(v[i].get<double>());
    }
    return out;
}

}  // namespace

std::string canonical_dump(const Json& j) {
    std::ostringstream out;
    dump_rec(j, out);
    out << '\n';
    return out.str();
}

void write_json(const std::string& path, const Json& j) {
    write_file(path, canonical_dump(j));
}

Json read_json_file(const std::string& path) {
    Json j = Json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw SchemaViolation(path + ": not valid JSON");
    return j;
}

Json pose_to_json(const Pose& pose) {
    return Json{{"q_wxyz", {pose.q.w(), pose.q.x(), pose.q.y(), pose.q.z()}},
                {"t_xyz", {pose.t.x(), pose.t.y(), pose.t.z()}}};
}

Pose pose_from_json(const Json& j, const std::string& path) {
    auto q = need_vec(j, "q_wxyz", path, 4);
    auto t = need_vec(j, "t_xyz", path, 3);
    Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
    if (quat.norm() < 1e-12) fail(path + "/q_wxyz", "zero quaternion");
    return Pose(quat, Eigen::Vector3d(t[0], t[1], t[2]));
}

Json box_to_json(const OrientedBox& box) {
    return Json{{"center", {box.center.x(), box.center.y(), box.center.z()}},
                {"half_extents",
                 {box.half_extents.x(), box.half_extents.y(), box.half_extents.z()}},
                {"q_wxyz",
                 {box.rotation.w(), box.rotation.x(), box.rotation.y(), box.rotation.z()}}};
}

OrientedBox box_from_json(const Json& j, const std::string& path) {
    auto c = need_vec(j, "center", path, 3);
    auto h = need_vec(j, "half_extents", path, 3);
    auto q = need_vec(j, "q_wxyz", path, 4);
    OrientedBox box;
    box.center = Eigen::Vector3d(c[0], c[1], c[2]);
    box.half_extents = Eigen::Vector3d(h[0], h[1], h[2]);
    if (!(box.half_extents.minCoeff() > 0)) fail(path + "/half_extents", "must be > 0");
    box.rotation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]).normalized();
    return box;
}

Json cameras_to_json(const CameraSet& set) {
    Json arr = Json::array();
    for (size_t i = 0; i < set.cameras.size(); ++i) {
        const PinholeCamera& c = set.cameras[i];
        Json jc{{"id", set.ids[i]},     {"fx", c.fx},         {"fy", c.fy},
                {"cx", c.cx},           {"cy", c.cy},         {"width", c.width},
                {"height", c.height},
                {"q_wxyz",
                 {c.extrinsic.q.w(), c.extrinsic.q.x(), c.extrinsic.q.y(),
                  c.extrinsic.q.z()}},
                {"t_xyz", {c.extrinsic.t.x(), c.extrinsic.t.y(), c.extrinsic.t.z()}}};
        if (i < set.baselines.size() && set.baselines[i] > 0)
            jc["baseline"] = set.baselines[i];
        arr.push_back(jc);
    }
    return Json{{"cameras", arr}};
}

CameraSet cameras_from_json(const Json& j) {
    const Json& arr = need(j, "cameras", "");
    if (!arr.is_array()) fail("/cameras", "expected array");
    CameraSet set;
    for (size_t i = 0; i < arr.size(); ++i) {
        std::string path = "/cameras/" + std::to_string(i);
        const Json& jc = arr[i];
        PinholeCamera c;
        c.fx = need_num(jc, "fx", path);
        c.fy = need_num(jc, "fy", path);
        c.cx = need_num(jc, "cx", path);
        c.cy = need_num(jc, "cy", path);
        c.width = static_cast<int>(need_num(jc, "width", path));
        c.height = static_cast<int>(need_num(jc, "height", path));
        if (c.fx <= 0 || c.fy <= 0) fail(path + "/fx", "focal lengths must be > 0");
        if (c.cx < 0 || c.cx >= c.width || c.cy < 0 || c.cy >= c.height)
            fail(path + "/cx", "principal point outside image");
        c.extrinsic = pose_from_json(jc, path);
        const Json& id = need(jc, "id", path);
        if (!id.is_string()) fail(path + "/id", "expected string");
        set.ids.push_back(id.get<std::string>());
        set.cameras.push_back(c);
        set.baselines.push_back(jc.contains("baseline") ? jc["baseline"].get<double>()
                                                        : 0.0);
    }
    return set;
}

Json keypoints_to_json(const KeypointFile& kp) {
    Json frames = Json::array();
    for (const auto& [frame, by_cam] : kp) {
        Json cams = Json::object();
        for (const auto& [cam_id, dets] : by_cam) {
            Json list = Json::array();
            for (const auto& d : dets) {
                Json joints = Json::array();
                for (const auto& jt : d.joints)
                    joints.push_back({jt.uv.x(), jt.uv.y(), jt.conf});
                list.push_back(Json{
                    {"bbox", {d.bbox(0), d.bbox(1), d.bbox(2), d.bbox(3)}},
                    {"joints", joints}});
            }
            cams[cam_id] = list;
        }
        frames.push_back(Json{{"frame", frame}, {"detections", cams}});
    }
    return Json{{"frames", frames}};
}

KeypointFile keypoints_from_json(const Json& j) {
    const Json& frames = need(j, "frames", "");
    if (!frames.is_array()) fail("/frames", "expected array");
    KeypointFile out;
    for (size_t f = 0; f < frames.size(); ++f) {
        std::string fpath = "/frames/" + std::to_string(f);
        int frame = static_cast<int>(need_num(frames[f], "frame", fpath));
        const Json& cams = need(frames[f], "detections", fpath);
        if (!cams.is_object()) fail(fpath + "/detections", "expected object");
        for (auto it = cams.begin(); it != cams.end(); ++it) {
            std::string cpath = fpath + "/detections/" + it.key();
            if (!it.value().is_array()) fail(cpath, "expected array");
            std::vector<Keypoints2D> dets;
            for (size_t d = 0; d < it.value().size(); ++d) {
                std::string dpath = cpath + "/" + std::to_string(d);
                const Json& jd = it.value()[d];
                Keypoints2D det;
                det.camera = it.key();
                auto bb = need_vec(jd, "bbox", dpath, 4);
                det.bbox = Eigen::Vector4d(bb[0], bb[1], bb[2], bb[3]);
                const Json& joints = need(jd, "joints", dpath);
                if (!joints.is_array() || joints.size() != kNumJoints)
                    fail(dpath + "/joints",
                         "expected " + std::to_string(kNumJoints) + " joints");
                for (int k = 0; k < kNumJoints; ++k) {
                    const Json& jj = joints[k];
                    if (!jj.is_array() || jj.size() != 3)
                        fail(dpath + "/joints/" + std::to_string(k),
                             "expected [u,v,conf]");
                    det.joints[k].uv = {jj[0].get<double>(), jj[1].get<double>()};
                    det.joints[k].conf = jj[2].get<double>();
                    if (det.joints[k].conf < 0 || det.joints[k].conf > 1)
                        fail(dpath + "/joints/" + std::to_string(k) + "/2",
                             "conf outside [0,1]");
                }
                dets.push_back(det);
            }
            out[frame][it.key()] = std::move(dets);
        }
    }
    return out;
}

Json wand_to_json(const WandSequence& seq) {
    Json frames = Json::array();
    for (const auto& [frame, by_cam] : seq.frames) {
        Json cams = Json::object();
        for (const auto& [cam_id, px] : by_cam) {
            Json centers = Json::array();
            for (const auto& p : px) centers.push_back({p.x(), p.y()});
            cams[cam_id] = centers;
        }
        frames.push_back(Json{{"frame", frame}, {"observations", cams}});
    }
    return Json{{"frames", frames}};
}

WandSequence wand_from_json(const Json& j) {
    const Json& frames = need(j, "frames", "");
    if (!frames.is_array()) fail("/frames", "expected array");
    WandSequence out;
    for (size_t f = 0; f < frames.size(); ++f) {
        std::string fpath = "/frames/" + std::to_string(f);
        int frame = static_cast<int>(need_num(frames[f], "frame", fpath));
        const Json& cams = need(frames[f], "observations", fpath);
        if (!cams.is_object()) fail(fpath + "/observations", "expected object");
        for (auto it = cams.begin(); it != cams.end(); ++it) {
            std::string cpath = fpath + "/observations/" + it.key();
            if (!it.value().is_array() || it.value().size() != 3)
                fail(cpath, "expected 3 marker centers");
            std::array<Eigen::Vector2d, 3> px;
            for (int m = 0; m < 3; ++m) {
                const Json& jp = it.value()[m];
                if (!jp.is_array() || jp.size() != 2)
                    fail(cpath + "/" + std::to_string(m), "expected [u,v]");
                px[m] = {jp[0].get<double>(), jp[1].get<double>()};
            }
            out.frames[frame][it.key()] = px;
        }
    }
    return out;
}

Json report_to_json(const EvalReport& report) {
    Json metrics = Json::object(), counts = Json::object();
    for (const auto& [k, v] : report.metrics) metrics[k] = v;
    for (const auto& [k, v] : report.counts) counts[k] = v;
    return Json{{"metrics", metrics}, {"counts", counts}};
}

EvalReport report_from_json(const Json& j) {
    EvalReport r;
    const Json& metrics = need(j, "metrics", "");
    for (auto it = metrics.begin(); it != metrics.end(); ++it) {
        if (it.value().is_string()) {
            std::string s = it.value().get<std::string>();
            r.metrics[it.key()] = s == "inf" ? std::numeric_limits<double>::infinity()
                                             : std::nan("");
        } else {
            r.metrics[it.key()] = it.value().get<double>();
        }
    }
    if (j.contains("counts"))
        for (auto it = j["counts"].begin(); it != j["counts"].end(); ++it)
            r.counts[it.key()] = it.value().get<long>();
    return r;
}

Json registration_to_json(const RegistrationResult& result) {
    Json j = pose_to_json(result.pose);
    j["fitness"] = result.fitness;
    j["inlier_rmse"] = result.inlier_rmse;
    j["converged"] = result.converged;
    return j;
}

RegistrationResult registration_from_json(const Json& j) {
    RegistrationResult r;
    r.pose = pose_from_json(j, "");
    r.fitness = need_num(j, "fitness", "");
    r.inlier_rmse = need_num(j, "inlier_rmse", "");
    const Json& c = need(j, "converged", "");
    if (!c.is_boolean()) fail("/converged", "expected bool");
    r.converged = c.get<bool>();
    return r;
}

Json tracks_to_json(const std::vector<Track>& tracks) {
    Json arr = Json::array();
    for (const auto& tr : tracks) {
        Json frames = Json::array();
        for (const auto& [frame, skel] : tr.frames) {
            Json joints = Json::array();
            for (const auto& jt : skel.joints) {
                joints.push_back(Json{
                    {"xyz", {jt.position.x(), jt.position.y(), jt.position.z()}},
                    {"valid", jt.valid},
                    {"inferred", jt.inferred}});
            }
            frames.push_back(Json{{"frame", frame}, {"joints", joints}});
        }
        arr.push_back(Json{{"person_id", tr.person_id}, {"frames", frames}});
    }
    return Json{{"tracks", arr}};
}

std::vector<Track> tracks_from_json(const Json& j) {
    const Json& arr = need(j, "tracks", "");
    if (!arr.is_array()) fail("/tracks", "expected array");
    std::vector<Track> tracks;
    for (size_t i = 0; i < arr.size(); ++i) {
        std::string tpath = "/tracks/" + std::to_string(i);
        Track tr;
        tr.person_id = static_cast<int>(need_num(arr[i], "person_id", tpath));
        const Json& frames = need(arr[i], "frames", tpath);
        if (!frames.is_array()) fail(tpath + "/frames", "expected array");
        for (size_t f = 0; f < frames.size(); ++f) {
            std::string fpath = tpath + "/frames/" + std::to_string(f);
            int frame = static_cast<int>(need_num(frames[f], "frame", fpath));
            const Json& joints = need(frames[f], "joints", fpath);
            if (!joints.is_array() || joints.size() != kNumJoints)
                fail(fpath + "/joints", "expected 17 joints");
            Skeleton3D skel;
            for (int k = 0; k < kNumJoints; ++k) {
                auto xyz = need_vec(joints[k], "xyz",
                                    fpath + "/joints/" + std::to_string(k), 3);
                skel.joints[k].position = {xyz[0], xyz[1], xyz[2]};
                skel.joints[k].valid = need(joints[k], "valid", fpath).get<bool>();
                skel.joints[k].inferred =
                    need(joints[k], "inferred", fpath).get<bool>();
            }
            tr.frames[frame] = skel;
        }
        tracks.push_back(std::move(tr));
    }
    return tracks;
}

Json calibration_to_json(const CalibrationResult& result,
                         const std::vector<PinholeCamera>& intrinsics) {
    CameraSet set;
    set.ids = result.camera_ids;
    set.cameras = intrinsics;
    for (size_t i = 0; i < set.cameras.size(); ++i)
        set.cameras[i].extrinsic = result.extrinsics[i];
    Json j = cameras_to_json(set);
    Json per_cam = Json::object();
    for (const auto& [id, v] : result.per_camera_reprojection_px) per_cam[id] = v;
    j["report"] = Json{{"mean_reproj_px", result.mean_reprojection_px},
                       {"max_reproj_px", result.max_reprojection_px},
                       {"per_camera", per_cam}};
    return j;
}

}  // namespace twin
