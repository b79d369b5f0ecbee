#include <cmath>
#include <map>

#include "roomtwin/calib.hpp"

namespace twin {

namespace {

struct Problem {
    const std::vector<PinholeCamera>* intrinsics;
    const std::vector<BundleObservation>* observations;
    const WandGeometry* wand;
    const BundleOptions* opts;
    std::vector<int> frames;              // sorted frame ids
    std::map<int, int> frame_index;
    int num_cams = 0;

    int cam_params() const { return 6 * (num_cams - 1); }
};

struct State {
    std::vector<Pose> extrinsics;
    std::vector<Eigen::Matrix<double, 9, 1>> points;  // 3 markers per frame
};

double robust_cost(const Problem& pb, const State& st) {
    const double delta = pb.opts->huber_delta_px;
    double cost = 0;
    for (const auto& ob : *pb.observations) {
        const PinholeCamera& intr = (*pb.intrinsics)[ob.camera];
        int fi = pb.frame_index.at(ob.frame);
        Eigen::Vector3d pw = st.points[fi].segment<3>(3 * ob.marker);
        Eigen::Vector3d pc = st.extrinsics[ob.camera].apply(pw);
        double e;
        if (pc.z() <= 1e-9) {
            e = 1e4;  // behind the camera: large finite penalty, recoverable
        } else {
            Eigen::Vector2d uv(intr.fx * pc.x() / pc.z() + intr.cx,
                               intr.fy * pc.y() / pc.z() + intr.cy);
            e = (uv - ob.pixel).norm();
        }
        if (!std::isfinite(e)) throw NonFiniteResidual("reprojection");
        cost += e <= delta ? e * e : delta * (2 * e - delta);
    }
    const double d[3] = {pb.wand->d12, pb.wand->d13, pb.wand->d23};
    const int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (const auto& pt : st.points) {
        for (int k = 0; k < 3; ++k) {
            double len = (pt.segment<3>(3 * pairs[k][0]) -
                          pt.segment<3>(3 * pairs[k][1]))
                             .norm();
            double r = len - d[k];
            cost += pb.opts->wand_distance_weight * r * r;
        }
    }
    return cost;
}

}  // namespace

void fill_reprojection_stats(CalibrationResult& result,
                             const std::vector<PinholeCamera>& intrinsics,
                             const std::vector<BundleObservation>& observations) {
    double sum = 0, mx = 0;
    long n = 0;
    std::map<std::string, std::pair<double, long>> per_cam;
    for (const auto& ob : observations) {
        const PinholeCamera& intr = intrinsics[ob.camera];
        Eigen::Vector3d xc = result.extrinsics[ob.camera].apply(
            result.wand_points.at(ob.frame)[ob.marker]);
        double e = 1e4;  // behind-camera sentinel
        if (xc.z() > 1e-9) {
            Eigen::Vector2d uv(intr.fx * xc.x() / xc.z() + intr.cx,
                               intr.fy * xc.y() / xc.z() + intr.cy);
            e = (uv - ob.pixel).norm();
        }
        sum += e;
        mx = std::max(mx, e);
        ++n;
        auto& pc = per_cam[result.camera_ids[ob.camera]];
        pc.first += e;
        pc.second += 1;
    }
    result.mean_reprojection_px = n ? sum / static_cast<double>(n) : 0;
    result.max_reprojection_px = mx;
    result.per_camera_reprojection_px.clear();
    for (const auto& [id, acc] : per_cam)
        result.per_camera_reprojection_px[id] = acc.first / static_cast<double>(acc.second);
}

CalibrationResult bundle_adjust(const CalibrationResult& initial,
                                const std::vector<PinholeCamera>& intrinsics,
                                const std::vector<BundleObservation>& observations,
                                const WandGeometry& wand, const BundleOptions& opts) {
    Problem pb;
    pb.intrinsics = &intrinsics;
    pb.observations = &observations;
    pb.wand = &wand;
    pb.opts = &opts;
    pb.num_cams = static_cast<int>(initial.extrinsics.size());
    for (const auto& [frame, pts] : initial.wand_points) {
        pb.frame_index[frame] = static_cast<int>(pb.frames.size());
        pb.frames.push_back(frame);
    }

    State st;
    st.extrinsics = initial.extrinsics;
    for (const auto& [frame, pts] : initial.wand_points) {
        Eigen::Matrix<double, 9, 1> v;
        v << pts[0], pts[1], pts[2];
        st.points.push_back(v);
    }

    const int nc = pb.cam_params();
    const int nf = static_cast<int>(pb.frames.size());
    const double delta = opts.huber_delta_px;
    const double sqrt_wd = std::sqrt(opts.wand_distance_weight);
    const int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    const double dists[3] = {wand.d12, wand.d13, wand.d23};

    double cost = robust_cost(pb, st);
    if (!std::isfinite(cost)) throw NonFiniteResidual("initial estimate");
    const double initial_cost = cost;

    double lambda = opts.init_lambda;
    int consecutive_rejects = 0;

    for (int iter = 0; iter < opts.max_iterations; ++iter) {
        // Accumulate the normal equations with points kept in per-frame blocks.
        Eigen::MatrixXd b = Eigen::MatrixXd::Zero(nc, nc);
        Eigen::VectorXd gc = Eigen::VectorXd::Zero(nc);
        std::vector<Eigen::Matrix<double, 9, 9>> c(
            nf, Eigen::Matrix<double, 9, 9>::Zero());
        std::vector<Eigen::Matrix<double, 9, 1>> gp(
            nf, Eigen::Matrix<double, 9, 1>::Zero());
        // E blocks dense over (camera, frame); nc is small.
        std::vector<Eigen::MatrixXd> e(nf, Eigen::MatrixXd::Zero(nc, 9));

        for (const auto& ob : *pb.observations) {
            const PinholeCamera& intr = intrinsics[ob.camera];
            const Pose& ext = st.extrinsics[ob.camera];
            int fi = pb.frame_index.at(ob.frame);
            Eigen::Vector3d pw = st.points[fi].segment<3>(3 * ob.marker);
            Eigen::Vector3d pc = ext.apply(pw);
            if (pc.z() <= 1e-9) continue;
            double iz = 1.0 / pc.z();
            Eigen::Vector2d r(intr.fx * pc.x() * iz + intr.cx - ob.pixel.x(),
                              intr.fy * pc.y() * iz + intr.cy - ob.pixel.y());
            double en = r.norm();
            double w = en <= delta ? 1.0 : delta / en;  // IRLS huber weight
            Eigen::Matrix<double, 2, 3> duv;
            duv << intr.fx * iz, 0, -intr.fx * pc.x() * iz * iz,
                   0, intr.fy * iz, -intr.fy * pc.y() * iz * iz;
            Eigen::Matrix<double, 2, 3> jp = duv * ext.rotation();

            int ci = ob.camera - 1;  // camera 0 fixed
            Eigen::Matrix<double, 2, 6> jc;
            if (ci >= 0) {
                Eigen::Matrix<double, 3, 6> dx;
                dx.block<3, 3>(0, 0) = -skew(ext.q * pw);
                dx.block<3, 3>(0, 3) = Eigen::Matrix3d::Identity();
                jc = duv * dx;
            }
            int ps = 3 * ob.marker;
            c[fi].block<3, 3>(ps, ps) += w * jp.transpose() * jp;
            gp[fi].segment<3>(ps) += w * jp.transpose() * r;
            if (ci >= 0) {
                b.block<6, 6>(6 * ci, 6 * ci) += w * jc.transpose() * jc;
                gc.segment<6>(6 * ci) += w * jc.transpose() * r;
                e[fi].block<6, 3>(6 * ci, ps) += w * jc.transpose() * jp;
            }
        }
        for (int fi = 0; fi < nf; ++fi) {
            for (int k = 0; k < 3; ++k) {
                int ia = 3 * pairs[k][0], ib = 3 * pairs[k][1];
                Eigen::Vector3d dvec =
                    st.points[fi].segment<3>(ia) - st.points[fi].segment<3>(ib);
                double len = dvec.norm();
                if (len < 1e-12) continue;
                double r = sqrt_wd * (len - dists[k]);
                Eigen::Vector3d grad = sqrt_wd * dvec / len;
                Eigen::Matrix<double, 9, 1> j = Eigen::Matrix<double, 9, 1>::Zero();
                j.segment<3>(ia) = grad;
                j.segment<3>(ib) = -grad;
                c[fi] += j * j.transpose();
                gp[fi] += j * r;
            }
        }

        // Damped Schur complement over the camera block.
        bool accepted = false;
        for (int attempt = 0; attempt < 10 && !accepted; ++attempt) {
            Eigen::MatrixXd s = b;
            for (int i = 0; i < nc; ++i)
                s(i, i) += lambda * std::max(b(i, i), 1e-12);
            Eigen::VectorXd rhs = -gc;
            std::vector<Eigen::Matrix<double, 9, 9>> c_damped(nf);
            for (int fi = 0; fi < nf; ++fi) {
                c_damped[fi] = c[fi];
                for (int i = 0; i < 9; ++i)
                    c_damped[fi](i, i) += lambda * std::max(c[fi](i, i), 1e-12);
                Eigen::Matrix<double, 9, 9> cinv = c_damped[fi].inverse();
                s -= e[fi] * cinv * e[fi].transpose();
                rhs += e[fi] * (cinv * gp[fi]);
            }
            Eigen::VectorXd dc =
                nc > 0 ? Eigen::VectorXd(s.ldlt().solve(rhs)) : Eigen::VectorXd();
            State trial = st;
            for (int ci = 0; ci + 1 < pb.num_cams; ++ci)
                trial.extrinsics[ci + 1] =
                    se3_retract(dc.segment<6>(6 * ci), st.extrinsics[ci + 1]);
            for (int fi = 0; fi < nf; ++fi) {
                Eigen::Matrix<double, 9, 1> rp = -gp[fi];
                if (nc > 0) rp -= e[fi].transpose() * dc;
                trial.points[fi] += c_damped[fi].ldlt().solve(rp);
            }

            double trial_cost = robust_cost(pb, trial);
            if (std::isfinite(trial_cost) && trial_cost <= cost) {
                double rel = (cost - trial_cost) / std::max(cost, 1e-300);
                st = std::move(trial);
                cost = trial_cost;
                lambda = std::max(lambda / 3.0, 1e-12);
                consecutive_rejects = 0;
                accepted = true;
                if (rel < opts.rel_cost_tol) iter = opts.max_iterations;  // converged
            } else {
                lambda *= 2.0;
                ++consecutive_rejects;
                if (consecutive_rejects >= 10) {
                    if (cost > initial_cost)
                        throw DivergedOptimization();
                    iter = opts.max_iterations;  // stalled at a minimum
                    break;
                }
            }
        }
        if (!accepted && consecutive_rejects >= 10) break;
    }

    CalibrationResult out;
    out.camera_ids = initial.camera_ids;
    out.extrinsics = st.extrinsics;
    for (int fi = 0; fi < nf; ++fi)
        out.wand_points[pb.frames[fi]] = {st.points[fi].segment<3>(0),
                                          st.points[fi].segment<3>(3),
                                          st.points[fi].segment<3>(6)};
    fill_reprojection_stats(out, intrinsics, observations);
    return out;
}

}  // namespace twin
