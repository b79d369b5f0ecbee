#include <algorithm>
#include <cmath>
#include <random>

#include "roomtwin/reg.hpp"

namespace twin {

namespace {

double feature_dist2(const FpfhFeature& a, const FpfhFeature& b) {
    double d2 = 0;
    for (int i = 0; i < 33; ++i) {
        double d = a.bins[i] - b.bins[i];
        d2 += d * d;
    }
    return d2;
}

}  // namespace

std::vector<RegistrationResult> ransac_feature_candidates(
    const PointCloud& source, const std::vector<FpfhFeature>& source_features,
    const PointCloud& target, const std::vector<FpfhFeature>& target_features,
    const RansacOptions& opts) {
    const int ns = static_cast<int>(source.size());
    const int nt = static_cast<int>(target.size());

    // Mutual nearest neighbors in descriptor space, with an intensity term
    // when colors are available.
    const bool use_color = opts.color_weight > 0 && source.has_colors() &&
                           target.has_colors();
    std::vector<int> s2t(ns, -1), t2s(nt, -1);
    std::vector<double> s_best(ns, std::numeric_limits<double>::infinity());
    std::vector<double> t_best(nt, std::numeric_limits<double>::infinity());
    for (int i = 0; i < ns; ++i) {
        if (!source_features[i].valid) continue;
        for (int j = 0; j < nt; ++j) {
            if (!target_features[j].valid) continue;
            double d2 = feature_dist2(source_features[i], target_features[j]);
            if (use_color) {
                double dc = opts.color_weight *
                            (source.colors[i].mean() - target.colors[j].mean());
                d2 += dc * dc;
            }
            if (d2 < s_best[i]) {
                s_best[i] = d2;
                s2t[i] = j;
            }
            if (d2 < t_best[j]) {
                t_best[j] = d2;
                t2s[j] = i;
            }
        }
    }
    std::vector<std::pair<int, int>> corr;
    for (int i = 0; i < ns; ++i)
        if (s2t[i] >= 0 && t2s[s2t[i]] == i) corr.emplace_back(i, s2t[i]);
    if (corr.empty()) throw NoCorrespondences("no mutual feature matches");

    KdTree target_tree(target.positions);
    std::mt19937_64 rng(opts.seed);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(corr.size()) - 1);

    // Distinct pose basins, best fitness first.
    std::vector<RegistrationResult> candidates;
    const bool gate_normals = source.has_normals() && target.has_normals();
    auto evaluate = [&](const Pose& pose, double* rmse) {
        int inliers = 0;
        double sq = 0;
        for (int i = 0; i < ns; ++i) {
            Neighbor nb = target_tree.nearest(pose.apply(source.positions[i]));
            if (nb.distance > opts.dist_thresh_m) continue;
            if (gate_normals &&
                (pose.q * source.normals[i]).dot(target.normals[nb.index]) <= 0)
                continue;
            ++inliers;
            sq += nb.distance * nb.distance;
        }
        *rmse = inliers > 0 ? std::sqrt(sq / inliers) : 0;
        return static_cast<double>(inliers) / ns;
    };
    auto same_basin = [&](const Pose& a, const Pose& b) {
        double rot = Eigen::AngleAxisd(a.q.conjugate() * b.q).angle();
        return rot < 15.0 * M_PI / 180 &&
               (a.t - b.t).norm() < 5.0 * opts.dist_thresh_m;
    };

    long needed = opts.max_iterations;
    for (long iter = 0; iter < needed && iter < opts.max_iterations; ++iter) {
        int a = pick(rng), b = pick(rng), c = pick(rng);
        if (a == b || b == c || a == c) continue;
        std::vector<Eigen::Vector3d> src = {source.positions[corr[a].first],
                                            source.positions[corr[b].first],
                                            source.positions[corr[c].first]};
        std::vector<Eigen::Vector3d> dst = {target.positions[corr[a].second],
                                            target.positions[corr[b].second],
                                            target.positions[corr[c].second]};
        // Rigidity pre-check: corresponding edge lengths must agree.
        bool ok = true;
        for (int e = 0; e < 3 && ok; ++e) {
            double ls = (src[e] - src[(e + 1) % 3]).norm();
            double lt = (dst[e] - dst[(e + 1) % 3]).norm();
            double lo = std::min(ls, lt), hi = std::max(ls, lt);
            if (hi < 1e-9 || lo / hi < opts.edge_similarity) ok = false;
        }
        if (!ok) continue;

        Pose pose;
        try {
            pose = umeyama_align(src, dst).pose;
        } catch (const Error&) {
            continue;
        }
        // Cheap screen on the sampled correspondences before the full count.
        int quick = 0;
        for (int e = 0; e < 3; ++e)
            if ((pose.apply(src[e]) - dst[e]).norm() <= opts.dist_thresh_m)
                ++quick;
        if (quick < 3) continue;

        double rmse = 0;
        double fitness = evaluate(pose, &rmse);
        RegistrationResult hyp;
        hyp.pose = pose;
        hyp.fitness = fitness;
        hyp.inlier_rmse = rmse;
        bool merged = false;
        for (auto& cand : candidates)
            if (same_basin(cand.pose, pose)) {
                if (fitness > cand.fitness) cand = hyp;
                merged = true;
                break;
            }
        if (!merged) candidates.push_back(hyp);
        std::sort(candidates.begin(), candidates.end(),
                  [](const RegistrationResult& a, const RegistrationResult& b) {
                      return a.fitness > b.fitness;
                  });
        if (static_cast<int>(candidates.size()) > std::max(1, opts.num_candidates))
            candidates.resize(std::max(1, opts.num_candidates));

        if (fitness >= candidates.front().fitness) {
            // Early exit once the confidence bound is met. The sampling
            // success rate is the correspondence-level inlier fraction, not
            // the cloud-level fitness.
            int corr_inliers = 0;
            for (const auto& [si, ti] : corr)
                if ((pose.apply(source.positions[si]) - target.positions[ti])
                        .norm() <= opts.dist_thresh_m)
                    ++corr_inliers;
            double w = static_cast<double>(corr_inliers) / corr.size();
            double w3 = w * w * w;
            if (w3 >= 1.0 - 1e-12) {
                needed = iter + 1;
            } else if (w3 > 0) {
                needed = static_cast<long>(
                    std::ceil(std::log(1.0 - opts.confidence) /
                              std::log(1.0 - w3)));
            }
        }
    }

    if (candidates.empty() || candidates.front().fitness < opts.min_fitness)
        throw NoAcceptableModel(
            "best fitness " +
            std::to_string(candidates.empty() ? 0.0 : candidates.front().fitness));
    for (auto& cand : candidates) cand.converged = true;
    return candidates;
}

RegistrationResult ransac_feature_registration(
    const PointCloud& source, const std::vector<FpfhFeature>& source_features,
    const PointCloud& target, const std::vector<FpfhFeature>& target_features,
    const RansacOptions& opts) {
    return ransac_feature_candidates(source, source_features, target,
                                     target_features, opts)
        .front();
}

}  // namespace twin
