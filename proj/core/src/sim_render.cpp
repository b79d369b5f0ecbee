#include <algorithm>
#include <cmath>
#include <numeric>

#include "roomtwin/sim.hpp"

namespace twin {

namespace {

constexpr int kLeafSize = 4;

struct TriRef {
    Eigen::Vector3d v0, e1, e2;
};

bool slab_hit(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi,
              const Eigen::Vector3d& o, const Eigen::Vector3d& inv_d,
              double t_max) {
    double t0 = 0, t1 = t_max;
    for (int a = 0; a < 3; ++a) {
        double ta = (lo[a] - o[a]) * inv_d[a];
        double tb = (hi[a] - o[a]) * inv_d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
    }
    return true;
}

}  // namespace

Bvh::Bvh(const TriMesh& mesh) : mesh_(&mesh) {
    int n = static_cast<int>(mesh.faces.size());
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), 0);
    centroids_.resize(n);
    for (int i = 0; i < n; ++i) {
        const auto& f = mesh.faces[i];
        centroids_[i] = (mesh.vertices[f.x()] + mesh.vertices[f.y()] +
                         mesh.vertices[f.z()]) /
                        3.0;
    }
    if (n > 0) root_ = build(0, n);
}

int Bvh::build(int begin, int end) {
    Node node;
    node.lo = Eigen::Vector3d::Constant(1e30);
    node.hi = -node.lo;
    for (int i = begin; i < end; ++i) {
        const auto& f = mesh_->faces[order_[i]];
        for (int v : {f.x(), f.y(), f.z()}) {
            node.lo = node.lo.cwiseMin(mesh_->vertices[v]);
            node.hi = node.hi.cwiseMax(mesh_->vertices[v]);
        }
    }
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= kLeafSize) {
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }
    Eigen::Vector3d extent = node.hi - node.lo;
    int axis = 0;
    extent.maxCoeff(&axis);
    int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end, [&](int a, int b) {
                         return centroids_[a][axis] < centroids_[b][axis];
                     });
    int left = build(begin, mid);
    int right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

Bvh::Hit Bvh::intersect(const Eigen::Vector3d& origin,
                        const Eigen::Vector3d& dir, double t_max) const {
    Hit best;
    if (root_ < 0) return best;
    Eigen::Vector3d inv_d;
    for (int a = 0; a < 3; ++a)
        inv_d[a] = 1.0 / (dir[a] != 0 ? dir[a] : 1e-300);
    double closest = t_max;
    int stack[64];
    int top = 0;
    stack[top++] = root_;
    while (top > 0) {
        const Node& node = nodes_[stack[--top]];
        if (!slab_hit(node.lo, node.hi, origin, inv_d, closest)) continue;
        if (node.left < 0) {
            for (int i = node.begin; i < node.end; ++i) {
                int face = order_[i];
                const auto& f = mesh_->faces[face];
                // Moller-Trumbore, double precision.
                Eigen::Vector3d v0 = mesh_->vertices[f.x()];
                Eigen::Vector3d e1 = mesh_->vertices[f.y()] - v0;
                Eigen::Vector3d e2 = mesh_->vertices[f.z()] - v0;
                Eigen::Vector3d p = dir.cross(e2);
                double det = e1.dot(p);
                if (std::abs(det) < 1e-14) continue;
                double inv = 1.0 / det;
                Eigen::Vector3d s = origin - v0;
                double u = s.dot(p) * inv;
                if (u < -1e-12 || u > 1 + 1e-12) continue;
                Eigen::Vector3d q = s.cross(e1);
                double v = dir.dot(q) * inv;
                if (v < -1e-12 || u + v > 1 + 1e-12) continue;
                double t = e2.dot(q) * inv;
                if (t > 1e-9 && t < closest) {
                    closest = t;
                    best.t = t;
                    best.face = face;
                    best.u = std::clamp(u, 0.0, 1.0);
                    best.v = std::clamp(v, 0.0, 1.0);
                }
            }
        } else {
            stack[top++] = node.left;
            stack[top++] = node.right;
        }
    }
    return best;
}

bool Bvh::occluded(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                   double eps) const {
    Eigen::Vector3d d = b - a;
    double len = d.norm();
    if (len < 2 * eps) return false;
    Eigen::Vector3d dir = d / len;
    Hit h = intersect(a + eps * dir, dir, len - 2 * eps);
    return h.t >= 0;
}

RenderOutput raycast_render(const Scene& scene, const PinholeCamera& cam,
                            double t) {
    RenderOutput out;
    out.depth = RasterF32(cam.width, cam.height, 0.f);
    out.mask = Image8(cam.width, cam.height, 1, 0);
    out.color = Image8(cam.width, cam.height, 3, 0);

    struct Instance {
        const TriMesh* mesh;
        Bvh bvh;
        Pose world_from_local;
        uint8_t id;
    };
    std::vector<Instance> instances;
    instances.push_back({&scene.room_mesh(), Bvh(scene.room_mesh()),
                         Pose::identity(), 1});
    for (int i = 0; i < static_cast<int>(scene.config().equipment.size()); ++i)
        instances.push_back({&scene.equipment_mesh(i),
                             Bvh(scene.equipment_mesh(i)),
                             scene.equipment_pose(i, t),
                             static_cast<uint8_t>(2 + i)});

    Pose world_from_cam = cam.extrinsic.inverse();
    Eigen::Vector3d origin_w = world_from_cam.t;

    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            // Camera-frame direction with z = 1: the ray parameter equals the
            // camera-frame depth.
            Eigen::Vector3d dir_cam((x + 0.5 - cam.cx) / cam.fx,
                                    (y + 0.5 - cam.cy) / cam.fy, 1.0);
            Eigen::Vector3d dir_w = world_from_cam.q * dir_cam;
            double best_t = 1e30;
            const Instance* best_inst = nullptr;
            Bvh::Hit best_hit;
            for (const Instance& inst : instances) {
                Pose local_from_world = inst.world_from_local.inverse();
                Bvh::Hit h = inst.bvh.intersect(
                    local_from_world.apply(origin_w),
                    local_from_world.q * dir_w, best_t);
                if (h.t > 0 && h.t < best_t) {
                    best_t = h.t;
                    best_inst = &inst;
                    best_hit = h;
                }
            }
            if (!best_inst) continue;
            out.depth.at(x, y) = static_cast<float>(best_t);
            out.mask.at(x, y) = best_inst->id;
            const auto& f = best_inst->mesh->faces[best_hit.face];
            Eigen::Vector3d c =
                (1 - best_hit.u - best_hit.v) *
                    best_inst->mesh->vertex_colors[f.x()] +
                best_hit.u * best_inst->mesh->vertex_colors[f.y()] +
                best_hit.v * best_inst->mesh->vertex_colors[f.z()];
            for (int ch = 0; ch < 3; ++ch)
                out.color.at(x, y, ch) = static_cast<uint8_t>(
                    std::clamp(c[ch], 0.0, 1.0) * 255.0 + 0.5);
        }
    return out;
}

}  // namespace twin
