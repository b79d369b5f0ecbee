#include <cmath>
#include <random>

#include "roomtwin/sim.hpp"

namespace twin {

void TriMesh::append(const TriMesh& other) {
    int base = static_cast<int>(vertices.size());
    vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
    vertex_colors.insert(vertex_colors.end(), other.vertex_colors.begin(),
                         other.vertex_colors.end());
    for (const auto& f : other.faces)
        faces.emplace_back(f.x() + base, f.y() + base, f.z() + base);
}

void TriMesh::transform(const Pose& pose) {
    for (auto& v : vertices) v = pose.apply(v);
}

namespace {

// 3D checker over the vertex position plus a mild positional gradient so every
// surface carries photometric signal for color-aware alignment.
Eigen::Vector3d checker_color(const Eigen::Vector3d& p, double cell,
                              const Eigen::Vector3d& tint) {
    const double eps = 1e-7;  // keep grid-aligned vertices off the boundary
    // Unequal axis weights keep the parity from being invariant under a
    // 180-degree flip (which negates two axes and would otherwise shift it by
    // an even amount), so near-symmetric shapes stay photometrically distinct
    // from their flipped twin.
    long parity = static_cast<long>(std::floor(p.x() / cell + eps)) +
                  2 * static_cast<long>(std::floor(p.y() / cell + eps)) +
                  static_cast<long>(std::floor(p.z() / cell + eps));
    double base = (parity & 1) ? 0.85 : 0.35;
    double grad = 0.08 * std::sin(p.x() * 1.7 + p.y() * 2.3 + p.z() * 3.1);
    Eigen::Vector3d c = (base + grad) * tint;
    return c.cwiseMax(0.0).cwiseMin(1.0);
}

// Gridded quad: origin + u*eu + v*ev, subdivided so cells are ~max_cell wide.
// flip reverses the winding (for inward-facing surfaces).
void add_quad(TriMesh& mesh, const Eigen::Vector3d& origin,
              const Eigen::Vector3d& eu, const Eigen::Vector3d& ev,
              double max_cell, double checker, const Eigen::Vector3d& tint,
              bool flip = false) {
    int nu = std::max(1, static_cast<int>(std::ceil(eu.norm() / max_cell)));
    int nv = std::max(1, static_cast<int>(std::ceil(ev.norm() / max_cell)));
    int base = static_cast<int>(mesh.vertices.size());
    for (int j = 0; j <= nv; ++j)
        for (int i = 0; i <= nu; ++i) {
            Eigen::Vector3d p = origin + eu * (static_cast<double>(i) / nu) +
                                ev * (static_cast<double>(j) / nv);
            mesh.vertices.push_back(p);
            mesh.vertex_colors.push_back(checker_color(p, checker, tint));
        }
    auto idx = [&](int i, int j) { return base + j * (nu + 1) + i; };
    for (int j = 0; j < nv; ++j)
        for (int i = 0; i < nu; ++i) {
            int a = idx(i, j), b = idx(i + 1, j);
            int c = idx(i + 1, j + 1), d = idx(i, j + 1);
            if (!flip) {
                mesh.faces.emplace_back(a, b, c);
                mesh.faces.emplace_back(a, c, d);
            } else {
                mesh.faces.emplace_back(a, c, b);
                mesh.faces.emplace_back(a, d, c);
            }
        }
}

void add_box_shell(TriMesh& mesh, const Eigen::Vector3d& lo,
                   const Eigen::Vector3d& hi, double checker,
                   const Eigen::Vector3d& tint, bool inward) {
    Eigen::Vector3d d = hi - lo;
    Eigen::Vector3d ex(d.x(), 0, 0), ey(0, d.y(), 0), ez(0, 0, d.z());
    double cell = std::max(0.01, checker);
    // Outward winding per face; `inward` flips all of them.
    add_quad(mesh, lo, ey, ex, cell, checker, tint, inward);              // z-
    add_quad(mesh, lo + ez, ex, ey, cell, checker, tint, inward);         // z+
    add_quad(mesh, lo, ex, ez, cell, checker, tint, inward);              // y-
    add_quad(mesh, lo + ey, ez, ex, cell, checker, tint, inward);         // y+
    add_quad(mesh, lo, ez, ey, cell, checker, tint, inward);              // x-
    add_quad(mesh, lo + ex, ey, ez, cell, checker, tint, inward);         // x+
}

const Eigen::Vector3d kWarmTint(0.95, 0.85, 0.75);
const Eigen::Vector3d kCoolTint(0.75, 0.85, 0.95);
const Eigen::Vector3d kNeutralTint(0.9, 0.9, 0.9);

}  // namespace

TriMesh make_box(const Eigen::Vector3d& half_extents, double checker_m) {
    TriMesh mesh;
    add_box_shell(mesh, -half_extents, half_extents, checker_m, kWarmTint,
                  false);
    return mesh;
}

TriMesh make_room(const Eigen::Vector3d& dims, double checker_m) {
    TriMesh mesh;
    add_box_shell(mesh, Eigen::Vector3d::Zero(), dims, checker_m, kNeutralTint,
                  true);
    return mesh;
}

TriMesh make_cylinder(double radius, double length, int segments,
                      double checker_m) {
    TriMesh mesh;
    int base = 0;
    double h = length / 2;
    // Side: rings of shared vertices, one strip per segment.
    int nz = std::max(1, static_cast<int>(std::ceil(length / checker_m)));
    for (int j = 0; j <= nz; ++j)
        for (int i = 0; i < segments; ++i) {
            double a = 2 * M_PI * i / segments;
            Eigen::Vector3d p(radius * std::cos(a), radius * std::sin(a),
                              -h + length * j / nz);
            mesh.vertices.push_back(p);
            mesh.vertex_colors.push_back(checker_color(p, checker_m, kCoolTint));
        }
    auto idx = [&](int i, int j) { return base + j * segments + (i % segments); };
    for (int j = 0; j < nz; ++j)
        for (int i = 0; i < segments; ++i) {
            mesh.faces.emplace_back(idx(i, j), idx(i + 1, j), idx(i + 1, j + 1));
            mesh.faces.emplace_back(idx(i, j), idx(i + 1, j + 1), idx(i, j + 1));
        }
    // Caps: triangle fans around center vertices.
    for (int s : {-1, 1}) {
        int center = static_cast<int>(mesh.vertices.size());
        Eigen::Vector3d c(0, 0, s * h);
        mesh.vertices.push_back(c);
        mesh.vertex_colors.push_back(checker_color(c, checker_m, kCoolTint));
        int ring = static_cast<int>(mesh.vertices.size());
        for (int i = 0; i < segments; ++i) {
            double a = 2 * M_PI * i / segments;
            Eigen::Vector3d p(radius * std::cos(a), radius * std::sin(a), s * h);
            mesh.vertices.push_back(p);
            mesh.vertex_colors.push_back(checker_color(p, checker_m, kCoolTint));
        }
        for (int i = 0; i < segments; ++i) {
            int a = ring + i, b = ring + (i + 1) % segments;
            if (s > 0)
                mesh.faces.emplace_back(center, a, b);
            else
                mesh.faces.emplace_back(center, b, a);
        }
    }
    return mesh;
}

TriMesh make_uv_sphere(double radius, int rings, int segments) {
    TriMesh mesh;
    double checker = std::max(0.02, radius / 2);
    for (int j = 0; j <= rings; ++j) {
        double phi = M_PI * j / rings;
        for (int i = 0; i < segments; ++i) {
            double th = 2 * M_PI * i / segments;
            Eigen::Vector3d p(radius * std::sin(phi) * std::cos(th),
                              radius * std::sin(phi) * std::sin(th),
                              radius * std::cos(phi));
            mesh.vertices.push_back(p);
            mesh.vertex_colors.push_back(checker_color(p, checker, kWarmTint));
        }
    }
    auto idx = [&](int i, int j) { return j * segments + (i % segments); };
    for (int j = 0; j < rings; ++j)
        for (int i = 0; i < segments; ++i) {
            if (j > 0)
                mesh.faces.emplace_back(idx(i, j), idx(i + 1, j + 1), idx(i + 1, j));
            if (j < rings - 1)
                mesh.faces.emplace_back(idx(i, j), idx(i, j + 1), idx(i + 1, j + 1));
        }
    return mesh;
}

namespace {

TriMesh box_at(const Eigen::Vector3d& half, const Eigen::Vector3d& center,
               double checker = 0.08) {
    TriMesh b = make_box(half, checker);
    b.transform(Pose(Eigen::Quaterniond::Identity(), center));
    return b;
}

TriMesh cylinder_at(double radius, double length, const Pose& pose,
                    double checker = 0.06) {
    TriMesh c = make_cylinder(radius, length, 20, checker);
    c.transform(pose);
    return c;
}

}  // namespace

TriMesh make_table() {
    // Operating-table stand-in: top slab, column, floor base. Canonical frame:
    // origin at the floor under the center.
    TriMesh mesh;
    mesh.append(box_at({1.0, 0.35, 0.04}, {0, 0, 0.90}));
    mesh.append(box_at({0.14, 0.14, 0.35}, {0, 0, 0.51}));
    mesh.append(box_at({0.45, 0.30, 0.08}, {0, 0, 0.08}));
    return mesh;
}

TriMesh make_carm() {
    // Mobile C-arm stand-in: base cart, vertical column, and a C of short
    // cylinder segments in the xz-plane with detector/source boxes.
    TriMesh mesh;
    mesh.append(box_at({0.35, 0.25, 0.15}, {-0.35, 0, 0.15}));
    mesh.append(box_at({0.08, 0.08, 0.45}, {-0.35, 0, 0.75}));
    const double r = 0.45;
    const Eigen::Vector3d hub(0.15, 0, 1.1);
    const int segs = 9;
    for (int i = 0; i < segs; ++i) {
        double a0 = -M_PI / 2 + (1.5 * M_PI) * i / segs;
        double a1 = -M_PI / 2 + (1.5 * M_PI) * (i + 1) / segs;
        Eigen::Vector3d p0 = hub + r * Eigen::Vector3d(std::cos(a0), 0, std::sin(a0));
        Eigen::Vector3d p1 = hub + r * Eigen::Vector3d(std::cos(a1), 0, std::sin(a1));
        Eigen::Vector3d mid = 0.5 * (p0 + p1);
        Eigen::Vector3d dir = (p1 - p0).normalized();
        Eigen::Quaterniond q =
            Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), dir);
        mesh.append(cylinder_at(0.045, (p1 - p0).norm() * 1.05, Pose(q, mid)));
    }
    mesh.append(box_at({0.10, 0.10, 0.05}, hub + Eigen::Vector3d(0, 0, r + 0.1)));
    mesh.append(box_at({0.08, 0.08, 0.06}, hub - Eigen::Vector3d(0, 0, r + 0.1)));
    return mesh;
}

TriMesh make_stretcher() {
    // Platform, four legs, two side rails.
    TriMesh mesh;
    mesh.append(box_at({0.95, 0.30, 0.03}, {0, 0, 0.80}));
    for (int sx : {-1, 1})
        for (int sy : {-1, 1})
            mesh.append(cylinder_at(
                0.025, 0.77,
                Pose(Eigen::Quaterniond::Identity(),
                     {0.80 * sx, 0.22 * sy, 0.385})));
    for (int sy : {-1, 1}) {
        Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(
            Eigen::Vector3d::UnitZ(), Eigen::Vector3d::UnitX());
        mesh.append(cylinder_at(0.02, 1.6, Pose(q, {0, 0.30 * sy, 0.95})));
    }
    return mesh;
}

PointCloud sample_surface(const TriMesh& mesh, int count, uint64_t seed) {
    std::vector<double> cumulative;
    cumulative.reserve(mesh.faces.size());
    double total = 0;
    std::vector<Eigen::Vector3d> face_normals(mesh.faces.size());
    for (size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& tri = mesh.faces[f];
        Eigen::Vector3d e1 = mesh.vertices[tri.y()] - mesh.vertices[tri.x()];
        Eigen::Vector3d e2 = mesh.vertices[tri.z()] - mesh.vertices[tri.x()];
        Eigen::Vector3d cr = e1.cross(e2);
        total += 0.5 * cr.norm();
        cumulative.push_back(total);
        face_normals[f] = cr.normalized();
    }
    if (total <= 0) throw DegenerateInput("mesh has no area");
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> u(0, 1);
    PointCloud cloud;
    for (int i = 0; i < count; ++i) {
        double pick = u(g) * total;
        size_t f = std::lower_bound(cumulative.begin(), cumulative.end(), pick) -
                   cumulative.begin();
        f = std::min(f, mesh.faces.size() - 1);
        double a = u(g), b = u(g);
        if (a + b > 1) {
            a = 1 - a;
            b = 1 - b;
        }
        const auto& tri = mesh.faces[f];
        const Eigen::Vector3d& v0 = mesh.vertices[tri.x()];
        const Eigen::Vector3d& v1 = mesh.vertices[tri.y()];
        const Eigen::Vector3d& v2 = mesh.vertices[tri.z()];
        cloud.positions.push_back((1 - a - b) * v0 + a * v1 + b * v2);
        cloud.normals.push_back(face_normals[f]);
        cloud.colors.push_back((1 - a - b) * mesh.vertex_colors[tri.x()] +
                               a * mesh.vertex_colors[tri.y()] +
                               b * mesh.vertex_colors[tri.z()]);
    }
    return cloud;
}

}  // namespace twin
