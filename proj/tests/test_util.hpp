#pragma once

#include <random>

#include "roomtwin/geom.hpp"

namespace twin::test {

inline std::mt19937_64 rng(uint64_t seed) { return std::mt19937_64(seed); }

inline Eigen::Vector3d random_vec(std::mt19937_64& g, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> d(lo, hi);
    return {d(g), d(g), d(g)};
}

inline Eigen::Quaterniond random_quat(std::mt19937_64& g) {
    std::normal_distribution<double> d(0, 1);
    Eigen::Quaterniond q(d(g), d(g), d(g), d(g));
    q.normalize();
    return q;
}

inline Pose random_pose(std::mt19937_64& g, double t_scale = 1.0) {
    return Pose(random_quat(g), random_vec(g, -t_scale, t_scale));
}

inline PinholeCamera test_camera(const Pose& extrinsic = Pose::identity()) {
    PinholeCamera c;
    c.fx = c.fy = 1000;
    c.cx = 960;
    c.cy = 540;
    c.width = 1920;
    c.height = 1080;
    c.extrinsic = extrinsic;
    return c;
}

}  // namespace twin::test
