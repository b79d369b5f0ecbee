#include <cmath>

#include "roomtwin/calib.hpp"

namespace twin {

namespace {

Pose gauss_newton_pnp(Pose pose,
                      const std::vector<std::pair<Eigen::Vector3d, Eigen::Vector2d>>& corr,
                      const PinholeCamera& cam) {
    for (int iter = 0; iter < 10; ++iter) {
        Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
        for (const auto& [pw, px] : corr) {
            Eigen::Vector3d pc = pose.apply(pw);
            if (pc.z() <= 1e-9) continue;
            double iz = 1.0 / pc.z();
            Eigen::Vector2d r(cam.fx * pc.x() * iz + cam.cx - px.x(),
                              cam.fy * pc.y() * iz + cam.cy - px.y());
            Eigen::Matrix<double, 2, 3> duv;
            duv << cam.fx * iz, 0, -cam.fx * pc.x() * iz * iz,
                   0, cam.fy * iz, -cam.fy * pc.y() * iz * iz;
            Eigen::Matrix<double, 3, 6> dx;
            dx.block<3, 3>(0, 0) = -skew(pose.q * pw);
            dx.block<3, 3>(0, 3) = Eigen::Matrix3d::Identity();
            Eigen::Matrix<double, 2, 6> j = duv * dx;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        Eigen::Matrix<double, 6, 1> step =
            (jtj + 1e-12 * Eigen::Matrix<double, 6, 6>::Identity()).ldlt().solve(-jtr);
        if (!step.allFinite()) throw NonFiniteResidual("PnP refinement");
        pose = se3_retract(step, pose);
        if (step.norm() < 1e-15) break;
    }
    return pose;
}

}  // namespace

Pose pnp_dlt(const std::vector<std::pair<Eigen::Vector3d, Eigen::Vector2d>>& corr,
             const PinholeCamera& cam) {
    if (corr.size() < 6)
        throw TooFewPoints("need >= 6 correspondences, got " +
                           std::to_string(corr.size()));

    // Non-coplanarity: smallest/largest covariance eigenvalue ratio.
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& [pw, px] : corr) mean += pw;
    mean /= static_cast<double>(corr.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& [pw, px] : corr) {
        Eigen::Vector3d d = pw - mean;
        cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    if (eig.eigenvalues()(0) <= 1e-6 * eig.eigenvalues()(2))
        throw CoplanarPoints();

    // Linear DLT on normalized image coordinates.
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * corr.size(), 12);
    for (size_t i = 0; i < corr.size(); ++i) {
        const auto& pw = corr[i].first;
        double xn = (corr[i].second.x() - cam.cx) / cam.fx;
        double yn = (corr[i].second.y() - cam.cy) / cam.fy;
        Eigen::Vector4d xh(pw.x(), pw.y(), pw.z(), 1);
        a.block<1, 4>(2 * i, 0) = xh.transpose();
        a.block<1, 4>(2 * i, 8) = -xn * xh.transpose();
        a.block<1, 4>(2 * i + 1, 4) = xh.transpose();
        a.block<1, 4>(2 * i + 1, 8) = -yn * xh.transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(10) <= 0 || sv(0) / sv(10) > 1e12)
        throw IllConditioned("DLT design matrix condition " +
                             std::to_string(sv(0) / std::max(sv(10), 1e-300)));
    Eigen::Matrix<double, 12, 1> p = svd.matrixV().col(11);
    Eigen::Matrix<double, 3, 4> proj;
    proj.row(0) = p.segment<4>(0).transpose();
    proj.row(1) = p.segment<4>(4).transpose();
    proj.row(2) = p.segment<4>(8).transpose();

    // Fix the projective sign by requiring positive depths on average.
    double depth_sum = 0;
    for (const auto& [pw, px] : corr)
        depth_sum += proj.row(2).dot(Eigen::Vector4d(pw.x(), pw.y(), pw.z(), 1));
    if (depth_sum < 0) proj = -proj;

    Eigen::Matrix3d m = proj.block<3, 3>(0, 0);
    Eigen::JacobiSVD<Eigen::Matrix3d> msvd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    double scale = msvd.singularValues().mean();
    if (scale < 1e-15) throw IllConditioned("vanishing rotation block");
    Eigen::Vector3d d = Eigen::Vector3d::Ones();
    if ((msvd.matrixU() * msvd.matrixV().transpose()).determinant() < 0) d(2) = -1;
    Eigen::Matrix3d r = msvd.matrixU() * d.asDiagonal() * msvd.matrixV().transpose();
    Eigen::Vector3d t = proj.col(3) / scale;

    return gauss_newton_pnp(Pose::from_rt(r, t), corr, cam);
}

}  // namespace twin
