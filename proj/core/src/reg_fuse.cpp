#include <algorithm>
#include <map>
#include <tuple>

#include "roomtwin/reg.hpp"

namespace twin {

PointCloud fuse_masked_depth(const std::vector<FusionView>& views, double z_min,
                             double z_max) {
    PointCloud cloud;
    for (size_t v = 0; v < views.size(); ++v) {
        const FusionView& view = views[v];
        const PinholeCamera& cam = view.camera;
        if (view.depth.width != cam.width || view.depth.height != cam.height ||
            view.mask.width != cam.width || view.mask.height != cam.height ||
            view.color.width != cam.width || view.color.height != cam.height ||
            view.color.channels != 3)
            throw DimensionMismatch("view " + std::to_string(v));
        Pose world_from_cam = cam.extrinsic.inverse();
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x) {
                if (view.mask.at(x, y) == 0) continue;
                double z = view.depth.at(x, y);
                if (!(z > z_min && z <= z_max)) continue;
                Eigen::Vector3d p_cam(z * (x - cam.cx) / cam.fx,
                                      z * (y - cam.cy) / cam.fy, z);
                cloud.positions.push_back(world_from_cam.apply(p_cam));
                cloud.colors.emplace_back(view.color.at(x, y, 0) / 255.0,
                                          view.color.at(x, y, 1) / 255.0,
                                          view.color.at(x, y, 2) / 255.0);
            }
    }
    if (cloud.positions.empty())
        throw EmptyFusion("no masked pixels with depth in range");
    return cloud;
}

PointCloud voxel_downsample(const PointCloud& cloud, double voxel_m) {
    if (voxel_m <= 0) throw DegenerateInput("voxel size must be positive");
    struct Acc {
        Eigen::Vector3d pos = Eigen::Vector3d::Zero();
        Eigen::Vector3d normal = Eigen::Vector3d::Zero();
        Eigen::Vector3d color = Eigen::Vector3d::Zero();
        int n = 0;
    };
    // Ordered map keeps the output deterministic regardless of input order.
    std::map<std::tuple<long, long, long>, Acc> voxels;
    for (size_t i = 0; i < cloud.size(); ++i) {
        const Eigen::Vector3d& p = cloud.positions[i];
        auto key = std::make_tuple(static_cast<long>(std::floor(p.x() / voxel_m)),
                                   static_cast<long>(std::floor(p.y() / voxel_m)),
                                   static_cast<long>(std::floor(p.z() / voxel_m)));
        Acc& acc = voxels[key];
        acc.pos += p;
        if (cloud.has_normals()) acc.normal += cloud.normals[i];
        if (cloud.has_colors()) acc.color += cloud.colors[i];
        ++acc.n;
    }
    PointCloud out;
    for (const auto& [key, acc] : voxels) {
        out.positions.push_back(acc.pos / acc.n);
        if (cloud.has_normals()) {
            Eigen::Vector3d n = acc.normal;
            double len = n.norm();
            out.normals.push_back(len > 1e-12 ? Eigen::Vector3d(n / len)
                                              : Eigen::Vector3d::UnitZ());
        }
        if (cloud.has_colors()) out.colors.push_back(acc.color / acc.n);
    }
    return out;
}

PointCloud estimate_normals(const PointCloud& cloud, int k,
                            const Eigen::Vector3d& viewpoint) {
    if (static_cast<int>(cloud.size()) < k)
        throw TooFewPoints("normal estimation needs >= " + std::to_string(k) +
                           " points");
    KdTree tree(cloud.positions);
    PointCloud out = cloud;
    out.normals.resize(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i) {
        auto nbrs = tree.knn(cloud.positions[i], k);
        Eigen::Vector3d mean = Eigen::Vector3d::Zero();
        for (const Neighbor& nb : nbrs) mean += cloud.positions[nb.index];
        mean /= static_cast<double>(nbrs.size());
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        for (const Neighbor& nb : nbrs) {
            Eigen::Vector3d d = cloud.positions[nb.index] - mean;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        Eigen::Vector3d n = eig.eigenvectors().col(0);
        if (n.dot(viewpoint - cloud.positions[i]) < 0) n = -n;
        out.normals[i] = n;
    }
    return out;
}

}  // namespace twin
