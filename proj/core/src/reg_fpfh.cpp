#include <cmath>

#include "roomtwin/reg.hpp"

namespace twin {

namespace {

// Darboux-frame angular features (alpha, phi, theta) for an ordered pair.
// Returns false for degenerate pairs (d parallel to the source normal, or
// exactly opposed normals) whose frame or theta bin is undefined; skipping
// them keeps the descriptor rotation-invariant on exact synthetic geometry.
bool pair_features(const Eigen::Vector3d& ps, const Eigen::Vector3d& ns,
                   const Eigen::Vector3d& pt, const Eigen::Vector3d& nt,
                   double* alpha, double* phi, double* theta) {
    Eigen::Vector3d d = pt - ps;
    double dist = d.norm();
    d /= dist;
    Eigen::Vector3d u = ns;
    Eigen::Vector3d v = u.cross(d);
    double vlen = v.norm();
    if (vlen < 1e-8 || u.dot(nt) < -1 + 1e-12) return false;
    v /= vlen;
    Eigen::Vector3d w = u.cross(v);
    double wt = w.dot(nt), ut = u.dot(nt);
    if (std::hypot(wt, ut) < 1e-8) return false;  // nt parallel to v: no theta
    *alpha = v.dot(nt);
    *phi = u.dot(d);
    *theta = std::atan2(wt, ut);
    return true;
}

int bin11(double value, double lo, double hi) {
    int b = static_cast<int>(11.0 * (value - lo) / (hi - lo));
    return std::clamp(b, 0, 10);
}

void add_spfh(std::array<double, 33>& hist, const Eigen::Vector3d& ps,
              const Eigen::Vector3d& ns, const Eigen::Vector3d& pt,
              const Eigen::Vector3d& nt) {
    double alpha, phi, theta;
    if (!pair_features(ps, ns, pt, nt, &alpha, &phi, &theta)) return;
    hist[bin11(alpha, -1, 1)] += 1;
    hist[11 + bin11(phi, -1, 1)] += 1;
    hist[22 + bin11(theta, -M_PI, M_PI)] += 1;
}

}  // namespace

std::vector<FpfhFeature> compute_fpfh(const PointCloud& cloud, double radius_m) {
    if (!cloud.has_normals()) throw DegenerateInput("FPFH requires normals");
    if (radius_m <= 0) throw DegenerateInput("FPFH radius must be positive");
    const size_t n = cloud.size();
    KdTree tree(cloud.positions);

    std::vector<std::vector<Neighbor>> neighborhoods(n);
    std::vector<std::array<double, 33>> spfh(n);
    for (size_t i = 0; i < n; ++i) {
        spfh[i].fill(0);
        auto nbrs = tree.radius(cloud.positions[i], radius_m);
        for (const Neighbor& nb : nbrs) {
            if (nb.index == static_cast<int>(i) || nb.distance < 1e-12) continue;
            neighborhoods[i].push_back(nb);
            add_spfh(spfh[i], cloud.positions[i], cloud.normals[i],
                     cloud.positions[nb.index], cloud.normals[nb.index]);
        }
    }

    std::vector<FpfhFeature> features(n);
    for (size_t i = 0; i < n; ++i) {
        if (neighborhoods[i].empty()) continue;  // isolated: zero, invalid
        std::array<double, 33> acc = spfh[i];
        double k = static_cast<double>(neighborhoods[i].size());
        for (const Neighbor& nb : neighborhoods[i])
            for (int b = 0; b < 33; ++b)
                acc[b] += spfh[nb.index][b] / (k * nb.distance);
        // Percent-normalize each 11-bin angular sub-histogram.
        for (int s = 0; s < 3; ++s) {
            double sum = 0;
            for (int b = 0; b < 11; ++b) sum += acc[11 * s + b];
            if (sum > 0)
                for (int b = 0; b < 11; ++b) acc[11 * s + b] *= 100.0 / sum;
        }
        features[i].bins = acc;
        features[i].valid = true;
    }
    return features;
}

}  // namespace twin
