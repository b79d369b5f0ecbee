#include "roomtwin/geom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace twin {

Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
    Eigen::Matrix3d s;
    s << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
    return s;
}

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& w) {
    double theta = w.norm();
    if (theta < 1e-12) return Eigen::Matrix3d::Identity() + skew(w);
    Eigen::Matrix3d k = skew(w / theta);
    return Eigen::Matrix3d::Identity() + std::sin(theta) * k +
           (1 - std::cos(theta)) * k * k;
}

Pose se3_retract(const Eigen::Matrix<double, 6, 1>& delta, const Pose& pose) {
    Eigen::Matrix3d r = so3_exp(delta.head<3>()) * pose.rotation();
    return Pose::from_rt(r, pose.t + delta.tail<3>());
}

Eigen::Vector2d project(const PinholeCamera& cam, const Eigen::Vector3d& point_world) {
    Eigen::Vector3d pc = cam.extrinsic.apply(point_world);
    if (pc.z() <= 1e-9) throw BehindCamera("camera-frame depth " + std::to_string(pc.z()));
    return {cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy};
}

namespace {

double mean_reprojection(const std::vector<Observation>& obs, const Eigen::Vector3d& x) {
    double sum = 0;
    for (const auto& o : obs) {
        Eigen::Vector3d pc = o.camera.extrinsic.apply(x);
        double z = std::max(pc.z(), 1e-12);
        Eigen::Vector2d uv(o.camera.fx * pc.x() / z + o.camera.cx,
                           o.camera.fy * pc.y() / z + o.camera.cy);
        sum += (uv - o.pixel).norm();
    }
    return sum / static_cast<double>(obs.size());
}

}  // namespace

TriangulationResult triangulate(const std::vector<Observation>& observations) {
    if (observations.size() < 2)
        throw DegenerateGeometry("need >= 2 observations, got " +
                                 std::to_string(observations.size()));

    // Distinct camera centers.
    bool distinct = false;
    Eigen::Vector3d c0 = observations[0].camera.center();
    for (size_t i = 1; i < observations.size(); ++i)
        if ((observations[i].camera.center() - c0).norm() > 1e-12) distinct = true;
    if (!distinct) throw DegenerateGeometry("all camera centers coincide");

    // DLT on normalized image coordinates; rows scaled by weight.
    Eigen::MatrixXd a(2 * observations.size(), 4);
    for (size_t i = 0; i < observations.size(); ++i) {
        const auto& o = observations[i];
        Eigen::Matrix<double, 3, 4> p = Eigen::Matrix<double, 3, 4>::Zero();
        p.block<3, 3>(0, 0) = o.camera.extrinsic.rotation();
        p.block<3, 1>(0, 3) = o.camera.extrinsic.t;
        double xn = (o.pixel.x() - o.camera.cx) / o.camera.fx;
        double yn = (o.pixel.y() - o.camera.cy) / o.camera.fy;
        a.row(2 * i) = o.weight * (xn * p.row(2) - p.row(0));
        a.row(2 * i + 1) = o.weight * (yn * p.row(2) - p.row(1));
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(2) <= 0 || sv(0) / sv(2) > 1e10)
        throw DegenerateGeometry("rank-deficient design matrix");
    Eigen::Vector4d h = svd.matrixV().col(3);
    if (std::abs(h(3)) < 1e-15) throw DegenerateGeometry("point at infinity");
    Eigen::Vector3d x = h.head<3>() / h(3);

    // Gauss-Newton on weighted pixel residuals.
    for (int iter = 0; iter < 10; ++iter) {
        Eigen::Matrix3d jtj = Eigen::Matrix3d::Zero();
        Eigen::Vector3d jtr = Eigen::Vector3d::Zero();
        for (const auto& o : observations) {
            Eigen::Vector3d pc = o.camera.extrinsic.apply(x);
            if (pc.z() <= 1e-9) continue;
            double iz = 1.0 / pc.z();
            Eigen::Vector2d uv(o.camera.fx * pc.x() * iz + o.camera.cx,
                               o.camera.fy * pc.y() * iz + o.camera.cy);
            Eigen::Vector2d r = o.weight * (uv - o.pixel);
            Eigen::Matrix<double, 2, 3> duv;
            duv << o.camera.fx * iz, 0, -o.camera.fx * pc.x() * iz * iz,
                   0, o.camera.fy * iz, -o.camera.fy * pc.y() * iz * iz;
            Eigen::Matrix<double, 2, 3> j = o.weight * duv * o.camera.extrinsic.rotation();
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        Eigen::Vector3d step = jtj.ldlt().solve(-jtr);
        if (!step.allFinite()) break;
        x += step;
        if (step.norm() < 1e-14) break;
    }
    return {x, mean_reprojection(observations, x)};
}

AlignmentResult umeyama_align(const std::vector<Eigen::Vector3d>& src,
                              const std::vector<Eigen::Vector3d>& dst,
                              bool with_scale) {
    if (src.size() != dst.size() || src.size() < 3)
        throw DegenerateInput("need >= 3 matched points");
    const double n = static_cast<double>(src.size());

    Eigen::Vector3d mu_s = Eigen::Vector3d::Zero(), mu_d = Eigen::Vector3d::Zero();
    for (size_t i = 0; i < src.size(); ++i) {
        mu_s += src[i];
        mu_d += dst[i];
    }
    mu_s /= n;
    mu_d /= n;

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    double var_s = 0;
    for (size_t i = 0; i < src.size(); ++i) {
        Eigen::Vector3d ps = src[i] - mu_s;
        Eigen::Vector3d pd = dst[i] - mu_d;
        cov += pd * ps.transpose();
        var_s += ps.squaredNorm();
    }
    cov /= n;
    var_s /= n;

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(1) < 1e-12 * std::max(1.0, sv(0)))
        throw DegenerateInput("rank-deficient cross-covariance (collinear points)");

    Eigen::Vector3d d = Eigen::Vector3d::Ones();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2) = -1;
    Eigen::Matrix3d r = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();

    double scale = 1.0;
    if (with_scale) {
        if (var_s < 1e-30) throw DegenerateInput("zero-variance source");
        scale = (sv.head<3>().cwiseProduct(d)).sum() / var_s;
    }
    Eigen::Vector3d t = mu_d - scale * (r * mu_s);
    return {Pose::from_rt(r, t), scale};
}

// ---------------------------------------------------------------------------
// KdTree

namespace {
constexpr int kLeafSize = 16;
}

KdTree::KdTree(const std::vector<Eigen::Vector3d>& points) : points_(points) {
    if (points_.empty()) throw EmptyCloud("KdTree over empty point set");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(2 * points_.size() / kLeafSize + 4);
    root_ = build(0, static_cast<int>(points_.size()), 0);
}

int KdTree::build(int begin, int end, int depth) {
    int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    if (end - begin <= kLeafSize) {
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }
    // Split on the widest axis.
    Eigen::Vector3d lo = points_[order_[begin]], hi = lo;
    for (int i = begin; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis;
    (hi - lo).maxCoeff(&axis);
    int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) { return points_[a](axis) < points_[b](axis); });
    nodes_[id].axis = axis;
    nodes_[id].split = points_[order_[mid]](axis);
    int l = build(begin, mid, depth + 1);
    int r = build(mid, end, depth + 1);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
}

namespace {
bool neighbor_less(const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
}
}  // namespace

void KdTree::search_knn(int node, const Eigen::Vector3d& q, int k,
                        std::vector<Neighbor>& heap) const {
    const Node& n = nodes_[node];
    if (n.axis < 0) {
        for (int i = n.begin; i < n.end; ++i) {
            int idx = order_[i];
            Neighbor cand{idx, (points_[idx] - q).norm()};
            if (static_cast<int>(heap.size()) < k) {
                heap.push_back(cand);
                std::push_heap(heap.begin(), heap.end(), neighbor_less);
            } else if (neighbor_less(cand, heap.front())) {
                std::pop_heap(heap.begin(), heap.end(), neighbor_less);
                heap.back() = cand;
                std::push_heap(heap.begin(), heap.end(), neighbor_less);
            }
        }
        return;
    }
    double delta = q(n.axis) - n.split;
    int near = delta <= 0 ? n.left : n.right;
    int far = delta <= 0 ? n.right : n.left;
    search_knn(near, q, k, heap);
    if (static_cast<int>(heap.size()) < k || std::abs(delta) <= heap.front().distance)
        search_knn(far, q, k, heap);
}

void KdTree::search_radius(int node, const Eigen::Vector3d& q, double r,
                           std::vector<Neighbor>& out) const {
    const Node& n = nodes_[node];
    if (n.axis < 0) {
        for (int i = n.begin; i < n.end; ++i) {
            int idx = order_[i];
            double d = (points_[idx] - q).norm();
            if (d <= r) out.push_back({idx, d});
        }
        return;
    }
    double delta = q(n.axis) - n.split;
    if (delta <= r) search_radius(n.left, q, r, out);
    if (-delta <= r) search_radius(n.right, q, r, out);
}

std::vector<Neighbor> KdTree::knn(const Eigen::Vector3d& query, int k) const {
    k = std::min<int>(k, static_cast<int>(points_.size()));
    std::vector<Neighbor> heap;
    heap.reserve(k + 1);
    search_knn(root_, query, k, heap);
    std::sort(heap.begin(), heap.end(), neighbor_less);
    return heap;
}

std::vector<Neighbor> KdTree::radius(const Eigen::Vector3d& query, double r) const {
    std::vector<Neighbor> out;
    search_radius(root_, query, r, out);
    std::sort(out.begin(), out.end(), neighbor_less);
    return out;
}

}  // namespace twin
