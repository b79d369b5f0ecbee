#include <algorithm>
#include <cmath>

#include <Eigen/Sparse>

#include "roomtwin/track.hpp"

namespace twin {

namespace {

struct RefineProblem {
    std::vector<int> frames;  // sorted frame ids
    std::vector<const Skeleton3D*> input;
    const TrackDetections* detections;
    const std::vector<PinholeCamera>* cameras;
    std::map<std::string, int> camera_index;
    std::array<double, kNumLimbs> bone_lengths;
    RefineWeights weights;

    int var(int t, int j) const { return 3 * (t * kNumJoints + j); }
    int num_vars() const {
        return 3 * static_cast<int>(frames.size()) * kNumJoints;
    }
};

double huber(double e, double delta) {
    return e <= delta ? e * e : delta * (2 * e - delta);
}

double energy(const RefineProblem& pb, const Eigen::VectorXd& x) {
    const int nt = static_cast<int>(pb.frames.size());
    const RefineWeights& w = pb.weights;
    double e = 0;
    for (int t = 0; t < nt; ++t) {
        for (int j = 0; j < kNumJoints; ++j) {
            const Joint3D& in = pb.input[t]->joints[j];
            Eigen::Vector3d p = x.segment<3>(pb.var(t, j));
            if (in.valid) e += (p - in.position).squaredNorm();
        }
        auto det_it = pb.detections->find(pb.frames[t]);
        if (det_it != pb.detections->end()) {
            for (const Keypoints2D& det : det_it->second) {
                auto cam_it = pb.camera_index.find(det.camera);
                if (cam_it == pb.camera_index.end()) continue;
                const PinholeCamera& cam = (*pb.cameras)[cam_it->second];
                for (int j = 0; j < kNumJoints; ++j) {
                    if (det.joints[j].conf < 0.3) continue;
                    Eigen::Vector3d pc =
                        cam.extrinsic.apply(x.segment<3>(pb.var(t, j)));
                    if (pc.z() <= 1e-9) continue;
                    Eigen::Vector2d uv(cam.fx * pc.x() / pc.z() + cam.cx,
                                       cam.fy * pc.y() / pc.z() + cam.cy);
                    e += w.w_2d *
                         huber((uv - det.joints[j].uv).norm(), w.huber_px);
                }
            }
        }
        for (int l = 0; l < kNumLimbs; ++l) {
            if (pb.bone_lengths[l] <= 0) continue;
            auto [pj, cj] = kLimbs[l];
            double len = (x.segment<3>(pb.var(t, pj)) -
                          x.segment<3>(pb.var(t, cj)))
                             .norm();
            double r = len - pb.bone_lengths[l];
            e += w.w_bone * r * r;
        }
    }
    for (int t = 1; t + 1 < nt; ++t)
        for (int j = 0; j < kNumJoints; ++j) {
            Eigen::Vector3d acc = x.segment<3>(pb.var(t - 1, j)) -
                                  2 * x.segment<3>(pb.var(t, j)) +
                                  x.segment<3>(pb.var(t + 1, j));
            e += w.w_acc * acc.squaredNorm();
        }
    return e;
}

}  // namespace

Track refine_tracks(const Track& track, const TrackDetections& detections2d,
                    const std::vector<PinholeCamera>& cameras,
                    const std::vector<std::string>& camera_ids,
                    const RefineWeights& weights) {
    if (track.frames.size() < 3)
        throw TrackTooShort("refinement needs >= 3 frames, got " +
                            std::to_string(track.frames.size()));

    RefineProblem pb;
    pb.detections = &detections2d;
    pb.cameras = &cameras;
    pb.weights = weights;
    pb.bone_lengths = median_bone_lengths(track);
    for (size_t k = 0; k < camera_ids.size() && k < cameras.size(); ++k)
        pb.camera_index[camera_ids[k]] = static_cast<int>(k);
    for (const auto& [frame, skel] : track.frames) {
        pb.frames.push_back(frame);
        pb.input.push_back(&skel);
    }
    const int nt = static_cast<int>(pb.frames.size());

    // Initial state: valid joints as-is; invalid joints interpolated along
    // time from the joint's valid frames, falling back to the frame centroid.
    Eigen::VectorXd x(pb.num_vars());
    for (int j = 0; j < kNumJoints; ++j) {
        std::vector<int> valid_ts;
        for (int t = 0; t < nt; ++t)
            if (pb.input[t]->joints[j].valid) valid_ts.push_back(t);
        for (int t = 0; t < nt; ++t) {
            const Joint3D& in = pb.input[t]->joints[j];
            Eigen::Vector3d p;
            if (in.valid) {
                p = in.position;
            } else if (!valid_ts.empty()) {
                auto next = std::lower_bound(valid_ts.begin(), valid_ts.end(), t);
                if (next == valid_ts.begin()) {
                    p = pb.input[valid_ts.front()]->joints[j].position;
                } else if (next == valid_ts.end()) {
                    p = pb.input[valid_ts.back()]->joints[j].position;
                } else {
                    int t1 = *next, t0 = *(next - 1);
                    double a = double(t - t0) / double(t1 - t0);
                    p = (1 - a) * pb.input[t0]->joints[j].position +
                        a * pb.input[t1]->joints[j].position;
                }
            } else {
                Eigen::Vector3d sum = Eigen::Vector3d::Zero();
                int n = 0;
                for (int jj = 0; jj < kNumJoints; ++jj)
                    if (pb.input[t]->joints[jj].valid) {
                        sum += pb.input[t]->joints[jj].position;
                        ++n;
                    }
                p = n > 0 ? Eigen::Vector3d(sum / n) : Eigen::Vector3d::Zero();
            }
            x.segment<3>(pb.var(t, j)) = p;
        }
    }

    double e = energy(pb, x);
    const int nv = pb.num_vars();
    for (int iter = 0; iter < weights.max_iterations; ++iter) {
        std::vector<Eigen::Triplet<double>> trips;
        Eigen::VectorXd g = Eigen::VectorXd::Zero(nv);
        auto add_block = [&](int va, int vb, const Eigen::Matrix3d& m) {
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                    trips.emplace_back(va + r, vb + c, m(r, c));
        };

        for (int t = 0; t < nt; ++t) {
            for (int j = 0; j < kNumJoints; ++j) {
                const Joint3D& in = pb.input[t]->joints[j];
                if (!in.valid) continue;
                Eigen::Vector3d r = x.segment<3>(pb.var(t, j)) - in.position;
                add_block(pb.var(t, j), pb.var(t, j), Eigen::Matrix3d::Identity());
                g.segment<3>(pb.var(t, j)) += r;
            }
            auto det_it = detections2d.find(pb.frames[t]);
            if (det_it != detections2d.end()) {
                for (const Keypoints2D& det : det_it->second) {
                    auto cam_it = pb.camera_index.find(det.camera);
                    if (cam_it == pb.camera_index.end()) continue;
                    const PinholeCamera& cam = cameras[cam_it->second];
                    for (int j = 0; j < kNumJoints; ++j) {
                        if (det.joints[j].conf < 0.3) continue;
                        Eigen::Vector3d pc =
                            cam.extrinsic.apply(x.segment<3>(pb.var(t, j)));
                        if (pc.z() <= 1e-9) continue;
                        double iz = 1.0 / pc.z();
                        Eigen::Vector2d r(
                            cam.fx * pc.x() * iz + cam.cx - det.joints[j].uv.x(),
                            cam.fy * pc.y() * iz + cam.cy - det.joints[j].uv.y());
                        double en = r.norm();
                        double wj = weights.w_2d *
                                    (en <= weights.huber_px
                                         ? 1.0
                                         : weights.huber_px / en);
                        Eigen::Matrix<double, 2, 3> duv;
                        duv << cam.fx * iz, 0, -cam.fx * pc.x() * iz * iz,
                               0, cam.fy * iz, -cam.fy * pc.y() * iz * iz;
                        Eigen::Matrix<double, 2, 3> jrow =
                            duv * cam.extrinsic.rotation();
                        add_block(pb.var(t, j), pb.var(t, j),
                                  wj * jrow.transpose() * jrow);
                        g.segment<3>(pb.var(t, j)) += wj * jrow.transpose() * r;
                    }
                }
            }
            for (int l = 0; l < kNumLimbs; ++l) {
                if (pb.bone_lengths[l] <= 0) continue;
                auto [pj, cj] = kLimbs[l];
                Eigen::Vector3d d = x.segment<3>(pb.var(t, pj)) -
                                    x.segment<3>(pb.var(t, cj));
                double len = d.norm();
                if (len < 1e-12) continue;
                double r = len - pb.bone_lengths[l];
                Eigen::Vector3d grad = d / len;
                Eigen::Matrix3d gg =
                    weights.w_bone * grad * grad.transpose();
                add_block(pb.var(t, pj), pb.var(t, pj), gg);
                add_block(pb.var(t, cj), pb.var(t, cj), gg);
                add_block(pb.var(t, pj), pb.var(t, cj), -gg);
                add_block(pb.var(t, cj), pb.var(t, pj), -gg);
                g.segment<3>(pb.var(t, pj)) += weights.w_bone * r * grad;
                g.segment<3>(pb.var(t, cj)) -= weights.w_bone * r * grad;
            }
        }
        for (int t = 1; t + 1 < nt; ++t)
            for (int j = 0; j < kNumJoints; ++j) {
                int v0 = pb.var(t - 1, j), v1 = pb.var(t, j), v2 = pb.var(t + 1, j);
                Eigen::Vector3d r = x.segment<3>(v0) - 2 * x.segment<3>(v1) +
                                    x.segment<3>(v2);
                const double w = weights.w_acc;
                Eigen::Matrix3d id = Eigen::Matrix3d::Identity();
                add_block(v0, v0, w * id);
                add_block(v1, v1, 4 * w * id);
                add_block(v2, v2, w * id);
                add_block(v0, v1, -2 * w * id);
                add_block(v1, v0, -2 * w * id);
                add_block(v1, v2, -2 * w * id);
                add_block(v2, v1, -2 * w * id);
                add_block(v0, v2, w * id);
                add_block(v2, v0, w * id);
                g.segment<3>(v0) += w * r;
                g.segment<3>(v1) -= 2 * w * r;
                g.segment<3>(v2) += w * r;
            }

        Eigen::SparseMatrix<double> h(nv, nv);
        h.setFromTriplets(trips.begin(), trips.end());
        for (int i = 0; i < nv; ++i) h.coeffRef(i, i) += 1e-9;
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(h);
        if (solver.info() != Eigen::Success) break;
        Eigen::VectorXd step = solver.solve(-g);
        if (!step.allFinite()) throw NonFiniteResidual("refinement step");

        // Backtracking keeps the objective monotone.
        double alpha = 1.0;
        bool accepted = false;
        for (int bt = 0; bt < 8; ++bt, alpha *= 0.5) {
            Eigen::VectorXd trial = x + alpha * step;
            double te = energy(pb, trial);
            if (std::isfinite(te) && te <= e) {
                double rel = (e - te) / std::max(e, 1e-300);
                x = std::move(trial);
                e = te;
                accepted = true;
                if (rel < 1e-12) iter = weights.max_iterations;
                break;
            }
        }
        if (!accepted) break;
    }

    Track out;
    out.person_id = track.person_id;
    out.missed_frames = track.missed_frames;
    for (int t = 0; t < nt; ++t) {
        Skeleton3D skel = *pb.input[t];
        for (int j = 0; j < kNumJoints; ++j) {
            skel.joints[j].position = x.segment<3>(pb.var(t, j));
            if (!pb.input[t]->joints[j].valid) {
                skel.joints[j].valid = true;
                skel.joints[j].inferred = true;
            }
        }
        out.frames[pb.frames[t]] = skel;
    }
    out.bone_lengths = median_bone_lengths(out);
    return out;
}

}  // namespace twin
