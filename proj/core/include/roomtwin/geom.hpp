#pragma once

#include <Eigen/Dense>
#include <optional>
#include <utility>
#include <vector>

#include "roomtwin/errors.hpp"

namespace twin {

// Rigid transform, unit quaternion (w,x,y,z) + translation in meters.
// Quaternion sign is canonicalized to w >= 0 on construction.
struct Pose {
    Eigen::Quaterniond q{1, 0, 0, 0};
    Eigen::Vector3d t{0, 0, 0};

    Pose() = default;
    Pose(const Eigen::Quaterniond& q_in, const Eigen::Vector3d& t_in) : q(q_in), t(t_in) {
        q.normalize();
        canonicalize();
    }

    static Pose identity() { return {}; }
    static Pose from_matrix(const Eigen::Matrix4d& m) {
        return Pose(Eigen::Quaterniond(Eigen::Matrix3d(m.block<3, 3>(0, 0))),
                    m.block<3, 1>(0, 3));
    }
    static Pose from_rt(const Eigen::Matrix3d& r, const Eigen::Vector3d& t_in) {
        return Pose(Eigen::Quaterniond(r), t_in);
    }

    Eigen::Matrix3d rotation() const { return q.toRotationMatrix(); }
    Eigen::Matrix4d matrix() const {
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m.block<3, 3>(0, 0) = rotation();
        m.block<3, 1>(0, 3) = t;
        return m;
    }

    Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return q * x + t; }

    Pose inverse() const {
        Eigen::Quaterniond qi = q.conjugate();
        return Pose(qi, qi * (-t));
    }

    void canonicalize() {
        if (q.w() < 0) q.coeffs() = -q.coeffs();
    }
};

inline Pose se3_compose(const Pose& a, const Pose& b) {
    return Pose(a.q * b.q, a.q * b.t + a.t);
}
inline Pose se3_inverse(const Pose& a) { return a.inverse(); }
inline Pose operator*(const Pose& a, const Pose& b) { return se3_compose(a, b); }

// so(3)/se(3) helpers used by the iterative solvers.
Eigen::Matrix3d skew(const Eigen::Vector3d& w);
Eigen::Matrix3d so3_exp(const Eigen::Vector3d& w);
// Left-multiplied increment: pose' = (exp(w), dt) * pose.
Pose se3_retract(const Eigen::Matrix<double, 6, 1>& delta, const Pose& pose);

// Pinhole camera, no distortion. extrinsic maps world -> camera.
struct PinholeCamera {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    Pose extrinsic;  // camera-from-world

    Eigen::Vector3d center() const { return extrinsic.inverse().t; }
    bool in_bounds(const Eigen::Vector2d& px) const {
        return px.x() >= 0 && px.x() < width && px.y() >= 0 && px.y() < height;
    }
};

// Rectified stereo head: right camera at +baseline along the left camera x-axis,
// identical intrinsics. Disparity d = fx * baseline / Z.
struct StereoRig {
    PinholeCamera left;
    double baseline = 0;  // meters

    PinholeCamera right() const {
        PinholeCamera r = left;
        // right-from-world = right-from-left * left-from-world
        Pose right_from_left(Eigen::Quaterniond::Identity(),
                             Eigen::Vector3d(-baseline, 0, 0));
        r.extrinsic = se3_compose(right_from_left, left.extrinsic);
        return r;
    }
};

struct PointCloud {
    std::vector<Eigen::Vector3d> positions;
    std::vector<Eigen::Vector3d> normals;  // empty or size() == positions.size()
    std::vector<Eigen::Vector3d> colors;   // rgb in [0,1]; empty or same size

    size_t size() const { return positions.size(); }
    bool has_normals() const { return !normals.empty(); }
    bool has_colors() const { return !colors.empty(); }
};

// u = fx*x/z + cx, v = fy*y/z + cy on the camera-frame point.
// Throws BehindCamera when the camera-frame depth z <= 1e-9.
Eigen::Vector2d project(const PinholeCamera& cam, const Eigen::Vector3d& point_world);

struct Observation {
    PinholeCamera camera;
    Eigen::Vector2d pixel;
    double weight = 1.0;
};

struct TriangulationResult {
    Eigen::Vector3d point;
    double mean_reprojection_px = 0;
};

// Weighted DLT followed by <=10 Gauss-Newton steps on reprojection error.
TriangulationResult triangulate(const std::vector<Observation>& observations);

struct AlignmentResult {
    Pose pose;     // dst approx s * R * src + t
    double scale = 1.0;
};

// Closed-form least-squares rigid (or similarity) alignment of corresponding
// point sets, with reflection correction.
AlignmentResult umeyama_align(const std::vector<Eigen::Vector3d>& src,
                              const std::vector<Eigen::Vector3d>& dst,
                              bool with_scale = false);

struct Neighbor {
    int index;
    double distance;
};

// Exact nearest-neighbor queries over a fixed point set.
// Results are sorted by (distance, index); ties are deterministic.
class KdTree {
public:
    explicit KdTree(const std::vector<Eigen::Vector3d>& points);

    std::vector<Neighbor> knn(const Eigen::Vector3d& query, int k) const;
    std::vector<Neighbor> radius(const Eigen::Vector3d& query, double r) const;
    Neighbor nearest(const Eigen::Vector3d& query) const { return knn(query, 1)[0]; }
    size_t size() const { return points_.size(); }

private:
    struct Node {
        int axis = -1;       // -1 marks a leaf
        double split = 0;
        int left = -1, right = -1;
        int begin = 0, end = 0;  // leaf range into order_
    };
    int build(int begin, int end, int depth);
    void search_knn(int node, const Eigen::Vector3d& q, int k,
                    std::vector<Neighbor>& heap) const;
    void search_radius(int node, const Eigen::Vector3d& q, double r2,
                       std::vector<Neighbor>& out) const;

    std::vector<Eigen::Vector3d> points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

}  // namespace twin
