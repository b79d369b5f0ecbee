#include <cmath>
#include <numeric>

#include "roomtwin/reg.hpp"

namespace twin {

namespace {

double intensity(const Eigen::Vector3d& rgb) { return rgb.mean(); }

// Per-point color gradient on the tangent plane, weighted least squares over
// radius neighbors. Zero gradient where the neighborhood carries no signal.
std::vector<Eigen::Vector3d> color_gradients(const PointCloud& cloud,
                                             const KdTree& tree,
                                             double radius) {
    std::vector<Eigen::Vector3d> grads(cloud.size(), Eigen::Vector3d::Zero());
    for (size_t i = 0; i < cloud.size(); ++i) {
        const Eigen::Vector3d& p = cloud.positions[i];
        const Eigen::Vector3d& n = cloud.normals[i];
        double ci = intensity(cloud.colors[i]);
        Eigen::Matrix3d m = n * n.transpose();
        Eigen::Vector3d b = Eigen::Vector3d::Zero();
        int count = 0;
        for (const Neighbor& nb : tree.radius(p, radius)) {
            if (nb.index == static_cast<int>(i)) continue;
            Eigen::Vector3d d = cloud.positions[nb.index] - p;
            d -= d.dot(n) * n;  // tangent-plane projection
            m += d * d.transpose();
            b += d * (intensity(cloud.colors[nb.index]) - ci);
            ++count;
        }
        if (count < 3) continue;
        Eigen::Vector3d g = m.ldlt().solve(b);
        if (g.allFinite()) grads[i] = g - g.dot(n) * n;
    }
    return grads;
}

struct LevelEval {
    double rmse = 0;  // combined sqrt(mean(delta*r_geo^2 + (1-delta)*r_col^2))
    double geo_rmse = 0;
    int correspondences = 0;
};

}  // namespace

RegistrationResult colored_icp(const PointCloud& source, const PointCloud& target,
                               const Pose& init, const ColoredIcpOptions& opts) {
    if (!target.has_normals())
        throw DegenerateInput("colored_icp target needs normals");
    const double delta = opts.geometric_weight;
    const bool use_color =
        delta < 1.0 && target.has_colors() && source.has_colors();

    std::vector<IcpLevel> levels = opts.levels;
    if (levels.empty()) levels = {{opts.base_voxel_m, 30}};

    Pose pose = init;
    RegistrationResult result;
    result.pose = pose;

    // The level schedule only widens/narrows the correspondence cap; the
    // clouds themselves are used as given so an exact alignment stays an
    // exact fixed point.
    const PointCloud& src = source;
    const PointCloud& tgt = target;
    KdTree tree(tgt.positions);
    // With a full model against a partial scan, hidden-surface points grab
    // nearby front-surface correspondences with opposed normals and drag the
    // solve; requiring front-facing normal agreement removes them.
    const bool gate_normals = src.has_normals();

    for (size_t lvl = 0; lvl < levels.size(); ++lvl) {
        const double voxel = levels[lvl].voxel_m;
        const double max_dist = 2.0 * voxel;
        std::vector<Eigen::Vector3d> grads;
        if (use_color) grads = color_gradients(tgt, tree, max_dist);

        auto evaluate = [&](const Pose& t) {
            LevelEval ev;
            double sum = 0, geo_sum = 0;
            for (size_t i = 0; i < src.size(); ++i) {
                Eigen::Vector3d p = t.apply(src.positions[i]);
                Neighbor nb = tree.nearest(p);
                if (nb.distance > max_dist) continue;
                const Eigen::Vector3d& q = tgt.positions[nb.index];
                const Eigen::Vector3d& n = tgt.normals[nb.index];
                if (gate_normals && (t.q * src.normals[i]).dot(n) <= 0) continue;
                double r_geo = (p - q).dot(n);
                double r_col = 0;
                if (use_color) {
                    Eigen::Vector3d proj = p - (p - q).dot(n) * n;
                    r_col = intensity(tgt.colors[nb.index]) +
                            grads[nb.index].dot(proj - q) -
                            intensity(src.colors[i]);
                }
                sum += delta * r_geo * r_geo + (1 - delta) * r_col * r_col;
                geo_sum += (p - q).squaredNorm();
                ++ev.correspondences;
            }
            if (ev.correspondences > 0) {
                ev.rmse = std::sqrt(sum / ev.correspondences);
                ev.geo_rmse = std::sqrt(geo_sum / ev.correspondences);
            }
            return ev;
        };

        LevelEval ev = evaluate(pose);
        if (ev.correspondences < opts.min_correspondences)
            throw NoOverlap("level " + std::to_string(lvl) + ": " +
                            std::to_string(ev.correspondences) +
                            " correspondences");
        Pose level_best_pose = pose;
        LevelEval level_best = ev;
        bool level_converged = false;

        for (int iter = 0; iter < levels[lvl].max_iterations; ++iter) {
            Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
            Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
            int count = 0;
            for (size_t i = 0; i < src.size(); ++i) {
                Eigen::Vector3d p = pose.apply(src.positions[i]);
                Neighbor nb = tree.nearest(p);
                if (nb.distance > max_dist) continue;
                const Eigen::Vector3d& q = tgt.positions[nb.index];
                const Eigen::Vector3d& n = tgt.normals[nb.index];
                if (gate_normals && (pose.q * src.normals[i]).dot(n) <= 0)
                    continue;
                Eigen::Matrix<double, 3, 6> dp;
                dp.block<3, 3>(0, 0) = -skew(p);
                dp.block<3, 3>(0, 3) = Eigen::Matrix3d::Identity();

                Eigen::Matrix<double, 1, 6> j_geo = n.transpose() * dp;
                double r_geo = (p - q).dot(n);
                h += delta * j_geo.transpose() * j_geo;
                g += delta * j_geo.transpose() * r_geo;
                if (use_color) {
                    Eigen::Vector3d proj = p - (p - q).dot(n) * n;
                    double r_col = intensity(tgt.colors[nb.index]) +
                                   grads[nb.index].dot(proj - q) -
                                   intensity(src.colors[i]);
                    // d(proj)/dp = I - n n^T; the gradient already lies in the
                    // tangent plane.
                    Eigen::Matrix<double, 1, 6> j_col =
                        grads[nb.index].transpose() * dp;
                    h += (1 - delta) * j_col.transpose() * j_col;
                    g += (1 - delta) * j_col.transpose() * r_col;
                }
                ++count;
            }
            if (count < opts.min_correspondences)
                throw NoOverlap("level " + std::to_string(lvl));
            h += 1e-12 * Eigen::Matrix<double, 6, 6>::Identity();
            Eigen::Matrix<double, 6, 1> step = h.ldlt().solve(-g);
            if (!step.allFinite()) throw NonFiniteUpdate("colored_icp");

            Pose trial = se3_retract(step, pose);
            LevelEval trial_ev = evaluate(trial);
            if (trial_ev.correspondences < opts.min_correspondences) break;
            // A mean residual over a shrinking gated set can fall while the
            // alignment worsens; a step that sheds correspondences is a slide
            // off the overlap, not progress.
            if (trial_ev.correspondences < 0.9 * ev.correspondences) break;
            double rel = std::abs(ev.rmse - trial_ev.rmse) /
                         std::max(ev.rmse, 1e-30);
            pose = trial;
            ev = trial_ev;
            if (ev.rmse <= level_best.rmse &&
                ev.correspondences >= 0.9 * level_best.correspondences) {
                level_best = ev;
                level_best_pose = pose;
            }
            if (rel < opts.rel_rmse_tol) {
                level_converged = true;
                break;
            }
        }
        // The best visited state bounds the level output: RMSE never ends
        // above its starting value.
        pose = level_best_pose;
        result.pose = pose;
        result.inlier_rmse = level_best.geo_rmse;
        result.fitness =
            static_cast<double>(level_best.correspondences) / src.size();
        if (lvl + 1 == levels.size()) result.converged = level_converged;
    }
    return result;
}

RegistrationResult estimate_equipment_pose(const std::vector<FusionView>& views,
                                           const EquipmentModel& model,
                                           const EquipmentPoseParams& params) {
    // Fuse and orient per view so each point's normal flips toward the camera
    // that actually observed it, then merge.
    PointCloud scene;
    for (const FusionView& view : views) {
        PointCloud part;
        try {
            part = fuse_masked_depth({view}, params.z_min, params.z_max);
        } catch (const EmptyFusion&) {
            continue;
        }
        part = voxel_downsample(part, params.voxel_m);
        if (static_cast<int>(part.size()) >= 30)
            part = estimate_normals(part, 30, view.camera.center());
        else
            continue;
        scene.positions.insert(scene.positions.end(), part.positions.begin(),
                               part.positions.end());
        scene.normals.insert(scene.normals.end(), part.normals.begin(),
                             part.normals.end());
        scene.colors.insert(scene.colors.end(), part.colors.begin(),
                            part.colors.end());
    }
    if (scene.positions.empty())
        throw EmptyFusion("no masked pixels with depth in range");
    scene = voxel_downsample(scene, params.voxel_m);

    // Model normals come from the same estimator as the scene's so the FPFH
    // descriptor statistics match; any supplied normals only fix orientation
    // (otherwise: outward from the centroid).
    PointCloud model_cloud = voxel_downsample(model.model_cloud, params.voxel_m);
    std::vector<Eigen::Vector3d> reference = model_cloud.normals;
    if (reference.empty()) {
        Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
        for (const auto& p : model_cloud.positions) centroid += p;
        centroid /= static_cast<double>(model_cloud.size());
        for (const auto& p : model_cloud.positions)
            reference.push_back(p - centroid);
    }
    model_cloud.normals.clear();
    model_cloud = estimate_normals(model_cloud, 30, Eigen::Vector3d::Zero());
    for (size_t i = 0; i < model_cloud.size(); ++i)
        if (model_cloud.normals[i].dot(reference[i]) < 0)
            model_cloud.normals[i] = -model_cloud.normals[i];

    double fpfh_radius = params.fpfh_radius_factor * params.voxel_m;
    auto model_features = compute_fpfh(model_cloud, fpfh_radius);
    auto scene_features = compute_fpfh(scene, fpfh_radius);

    RansacOptions ransac;
    ransac.dist_thresh_m = params.ransac_dist_factor * params.voxel_m;
    ransac.seed = params.seed;
    ransac.num_candidates = 5;
    std::vector<RegistrationResult> coarse = ransac_feature_candidates(
        model_cloud, model_features, scene, scene_features, ransac);

    // Refine every coarse basin and keep the pose that both covers the scan
    // and matches its colors; geometry alone cannot separate a near-symmetric
    // shape from its flipped twin.
    ColoredIcpOptions icp = ColoredIcpOptions::defaults(params.voxel_m);
    icp.geometric_weight = params.geometric_weight;
    KdTree scene_tree(scene.positions);
    const double max_dist = 2.0 * params.voxel_m;
    const bool have_colors = model_cloud.has_colors() && scene.has_colors();
    auto color_rmse = [&](const Pose& pose) {
        if (!have_colors) return 0.0;
        double sq = 0;
        int n = 0;
        for (size_t i = 0; i < model_cloud.size(); ++i) {
            Eigen::Vector3d p = pose.apply(model_cloud.positions[i]);
            Neighbor nb = scene_tree.nearest(p);
            if (nb.distance > max_dist) continue;
            if ((pose.q * model_cloud.normals[i]).dot(scene.normals[nb.index]) <= 0)
                continue;
            double d = model_cloud.colors[i].mean() - scene.colors[nb.index].mean();
            sq += d * d;
            ++n;
        }
        return n > 0 ? std::sqrt(sq / n) : 1.0;
    };
    RegistrationResult best;
    double best_score = -1e30;
    std::string failure;
    for (const RegistrationResult& cand : coarse) {
        RegistrationResult refined;
        try {
            refined = colored_icp(model_cloud, scene, cand.pose, icp);
        } catch (const Error& e) {
            failure = e.what();
            continue;
        }
        double score = refined.fitness - color_rmse(refined.pose);
        if (score > best_score) {
            best_score = score;
            best = refined;
        }
    }
    if (best_score == -1e30)
        throw NoAcceptableModel("all coarse hypotheses failed: " + failure);
    return best;
}

}  // namespace twin
