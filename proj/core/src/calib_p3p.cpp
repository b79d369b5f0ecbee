#include <cmath>

#include "roomtwin/calib.hpp"

namespace twin {

std::array<Eigen::Vector3d, 3> WandGeometry::local_points() const {
    // m1 at origin, m2 on +x, m3 in the xy-plane.
    double x3 = (d12 * d12 + d13 * d13 - d23 * d23) / (2 * d12);
    double y3sq = d13 * d13 - x3 * x3;
    double y3 = y3sq > 0 ? std::sqrt(y3sq) : 0;
    return {Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(d12, 0, 0),
            Eigen::Vector3d(x3, y3, 0)};
}

std::array<int, 3> label_markers(const std::array<Eigen::Vector3d, 3>& points,
                                 const WandGeometry& wand, double tol_rel) {
    const double targets[3] = {wand.d12, wand.d13, wand.d23};
    static const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                    {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    std::vector<std::array<int, 3>> matches;
    for (const auto& p : perms) {
        double d01 = (points[p[0]] - points[p[1]]).norm();
        double d02 = (points[p[0]] - points[p[2]]).norm();
        double d12d = (points[p[1]] - points[p[2]]).norm();
        double got[3] = {d01, d02, d12d};
        bool ok = true;
        for (int k = 0; k < 3; ++k)
            if (std::abs(got[k] - targets[k]) > tol_rel * targets[k]) ok = false;
        if (ok) matches.push_back({p[0], p[1], p[2]});
    }
    if (matches.empty()) throw NoConsistentLabeling();
    if (matches.size() > 1)
        throw AmbiguousLabeling(std::to_string(matches.size()) + " assignments match");
    return matches[0];
}

namespace {

// Real roots of a polynomial (coefficients high to low) via the companion
// matrix, polished with a few Newton steps.
std::vector<double> real_roots(std::vector<double> coef) {
    // Trim leading near-zeros relative to the largest coefficient.
    double scale = 0;
    for (double c : coef) scale = std::max(scale, std::abs(c));
    if (scale == 0) return {};
    size_t lead = 0;
    while (lead + 1 < coef.size() && std::abs(coef[lead]) < 1e-12 * scale) ++lead;
    coef.erase(coef.begin(), coef.begin() + static_cast<long>(lead));
    int n = static_cast<int>(coef.size()) - 1;
    if (n < 1) return {};
    if (n == 1) return {-coef[1] / coef[0]};

    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) comp(0, i) = -coef[i + 1] / coef[0];
    for (int i = 1; i < n; ++i) comp(i, i - 1) = 1;
    Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);

    auto eval = [&](double x, double& f, double& df) {
        f = 0;
        df = 0;
        for (double c : coef) {
            df = df * x + f;
            f = f * x + c;
        }
    };
    std::vector<double> roots;
    for (int i = 0; i < n; ++i) {
        std::complex<double> z = es.eigenvalues()(i);
        if (std::abs(z.imag()) > 1e-6 * (1 + std::abs(z.real()))) continue;
        double x = z.real();
        for (int it = 0; it < 8; ++it) {
            double f, df;
            eval(x, f, df);
            if (std::abs(df) < 1e-300) break;
            double step = f / df;
            x -= step;
            if (std::abs(step) < 1e-15 * (1 + std::abs(x))) break;
        }
        roots.push_back(x);
    }
    return roots;
}

// One Gauss-Newton pass of the 3-point reprojection (6 residuals, 6 dof).
Pose polish_pose(Pose pose, const std::array<Eigen::Vector3d, 3>& object_points,
                 const std::array<Eigen::Vector2d, 3>& pixels,
                 const PinholeCamera& cam) {
    for (int iter = 0; iter < 15; ++iter) {
        Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
        double err = 0;
        for (int i = 0; i < 3; ++i) {
            Eigen::Vector3d pc = pose.apply(object_points[i]);
            if (pc.z() <= 1e-9) return pose;
            double iz = 1.0 / pc.z();
            Eigen::Vector2d uv(cam.fx * pc.x() * iz + cam.cx,
                               cam.fy * pc.y() * iz + cam.cy);
            Eigen::Vector2d r = uv - pixels[i];
            err += r.squaredNorm();
            Eigen::Matrix<double, 2, 3> duv;
            duv << cam.fx * iz, 0, -cam.fx * pc.x() * iz * iz,
                   0, cam.fy * iz, -cam.fy * pc.y() * iz * iz;
            Eigen::Matrix<double, 3, 6> dx;
            dx.block<3, 3>(0, 0) = -skew(pose.q * object_points[i]);
            dx.block<3, 3>(0, 3) = Eigen::Matrix3d::Identity();
            Eigen::Matrix<double, 2, 6> j = duv * dx;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        if (err < 1e-24) break;
        Eigen::Matrix<double, 6, 1> step =
            (jtj + 1e-12 * Eigen::Matrix<double, 6, 6>::Identity()).ldlt().solve(-jtr);
        if (!step.allFinite() || step.norm() < 1e-16) break;
        pose = se3_retract(step, pose);
    }
    return pose;
}

}  // namespace

std::vector<Pose> p3p(const std::array<Eigen::Vector3d, 3>& object_points,
                      const std::array<Eigen::Vector2d, 3>& pixels,
                      const PinholeCamera& cam) {
    const Eigen::Vector3d& p1 = object_points[0];
    const Eigen::Vector3d& p2 = object_points[1];
    const Eigen::Vector3d& p3 = object_points[2];
    double area2 = (p2 - p1).cross(p3 - p1).norm();
    double longest = std::max({(p2 - p1).norm(), (p3 - p1).norm(), (p3 - p2).norm()});
    if (area2 < 1e-10 * longest * longest) throw CollinearPoints();

    std::array<Eigen::Vector3d, 3> f;
    for (int i = 0; i < 3; ++i)
        f[i] = Eigen::Vector3d((pixels[i].x() - cam.cx) / cam.fx,
                               (pixels[i].y() - cam.cy) / cam.fy, 1)
                   .normalized();

    // Grunert's formulation: distances along the three rays.
    double a = (p2 - p3).norm(), b = (p1 - p3).norm(), c = (p1 - p2).norm();
    double ca = f[1].dot(f[2]);  // angle between rays 2,3
    double cb = f[0].dot(f[2]);  // rays 1,3
    double cg = f[0].dot(f[1]);  // rays 1,2

    double a2 = a * a, b2 = b * b, c2 = c * c;
    double q1 = (a2 - c2) / b2;
    double q2 = (a2 + c2) / b2;
    double q3 = (b2 - c2) / b2;
    double q4 = (b2 - a2) / b2;

    std::vector<double> coef(5);
    coef[0] = (q1 - 1) * (q1 - 1) - 4 * c2 / b2 * ca * ca;
    coef[1] = 4 * (q1 * (1 - q1) * cb - (1 - q2) * ca * cg + 2 * c2 / b2 * ca * ca * cb);
    coef[2] = 2 * (q1 * q1 - 1 + 2 * q1 * q1 * cb * cb + 2 * q3 * ca * ca -
                   4 * q2 * ca * cb * cg + 2 * q4 * cg * cg);
    coef[3] = 4 * (-q1 * (1 + q1) * cb + 2 * a2 / b2 * cg * cg * cb - (1 - q2) * ca * cg);
    coef[4] = (1 + q1) * (1 + q1) - 4 * a2 / b2 * cg * cg;

    std::vector<Pose> candidates;
    for (double v : real_roots(coef)) {
        if (!(v > 0)) continue;
        double denom = 1 + v * v - 2 * v * cb;
        if (denom <= 0) continue;
        double s1 = std::sqrt(b2 / denom);
        double u_den = 2 * (cg - v * ca);
        if (std::abs(u_den) < 1e-12) continue;
        double u = ((-1 + q1) * v * v - 2 * q1 * cb * v + 1 + q1) / u_den;
        if (!(u > 0)) continue;
        double s2 = u * s1, s3 = v * s1;

        std::array<Eigen::Vector3d, 3> cam_pts = {s1 * f[0], s2 * f[1], s3 * f[2]};
        Pose pose;
        try {
            pose = umeyama_align({p1, p2, p3},
                                 {cam_pts[0], cam_pts[1], cam_pts[2]})
                       .pose;
        } catch (const DegenerateInput&) {
            continue;
        }
        pose = polish_pose(pose, object_points, pixels, cam);

        bool ok = true;
        double reproj = 0;
        for (int i = 0; i < 3; ++i) {
            Eigen::Vector3d pc = pose.apply(object_points[i]);
            if (pc.z() <= 1e-9) {
                ok = false;
                break;
            }
            Eigen::Vector2d uv(cam.fx * pc.x() / pc.z() + cam.cx,
                               cam.fy * pc.y() / pc.z() + cam.cy);
            reproj = std::max(reproj, (uv - pixels[i]).norm());
        }
        if (!ok || reproj > 1e-3) continue;  // px; true roots polish to ~0

        bool duplicate = false;
        for (const auto& prev : candidates)
            if ((prev.matrix() - pose.matrix()).cwiseAbs().maxCoeff() < 1e-6)
                duplicate = true;
        if (!duplicate) candidates.push_back(pose);
    }
    if (candidates.empty()) throw NoRealSolution();
    return candidates;
}

}  // namespace twin
