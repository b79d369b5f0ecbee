#include <algorithm>
#include <cmath>
#include <limits>

#include "roomtwin/calib.hpp"

namespace twin {

namespace {

constexpr int kPerms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                              {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};

struct FrameCandidate {
    std::array<Eigen::Vector3d, 3> markers;  // labeled, reference-camera frame
    std::array<int, 3> pixel_of_marker;      // observation pixel index per marker
};

double reproj_or_large(const PinholeCamera& cam, const Eigen::Vector3d& pw,
                       const Eigen::Vector2d& px) {
    Eigen::Vector3d pc = cam.extrinsic.apply(pw);
    if (pc.z() <= 1e-9) return 1e6;
    Eigen::Vector2d uv(cam.fx * pc.x() / pc.z() + cam.cx,
                       cam.fy * pc.y() / pc.z() + cam.cy);
    return (uv - px).norm();
}

// Best marker->pixel assignment under a pose hypothesis; returns summed
// residual and the chosen permutation.
std::pair<double, std::array<int, 3>> best_assignment(
    const PinholeCamera& cam, const std::array<Eigen::Vector3d, 3>& markers,
    const std::array<Eigen::Vector2d, 3>& pixels) {
    double best = std::numeric_limits<double>::infinity();
    std::array<int, 3> best_perm{0, 1, 2};
    for (const auto& p : kPerms) {
        double sum = 0;
        for (int m = 0; m < 3; ++m)
            sum += reproj_or_large(cam, markers[m], pixels[p[m]]);
        if (sum < best) {
            best = sum;
            best_perm = {p[0], p[1], p[2]};
        }
    }
    return {best, best_perm};
}

using LabeledFrames =
    std::vector<std::pair<const std::array<Eigen::Vector3d, 3>*,
                          const std::array<Eigen::Vector2d, 3>*>>;

// Huber-weighted Gauss-Newton pose polish over labeled correspondences.
Pose gn_pose(const PinholeCamera& intr, Pose pose,
             const std::vector<std::pair<Eigen::Vector3d, Eigen::Vector2d>>& corr,
             double huber_px) {
    for (int iter = 0; iter < 15; ++iter) {
        Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
        for (const auto& [pw, px] : corr) {
            Eigen::Vector3d pc = pose.apply(pw);
            if (pc.z() <= 1e-9) continue;
            double iz = 1.0 / pc.z();
            Eigen::Vector2d r(intr.fx * pc.x() * iz + intr.cx - px.x(),
                              intr.fy * pc.y() * iz + intr.cy - px.y());
            double w = std::min(1.0, huber_px / std::max(r.norm(), 1e-12));
            Eigen::Matrix<double, 2, 3> duv;
            duv << intr.fx * iz, 0, -intr.fx * pc.x() * iz * iz,
                   0, intr.fy * iz, -intr.fy * pc.y() * iz * iz;
            Eigen::Matrix<double, 2, 6> j;
            j.block<2, 3>(0, 0) = duv * -skew(pose.q * pw);
            j.block<2, 3>(0, 3) = duv;
            jtj += w * j.transpose() * j;
            jtr += w * j.transpose() * r;
        }
        Eigen::Matrix<double, 6, 1> step =
            (jtj + 1e-9 * Eigen::Matrix<double, 6, 6>::Identity()).ldlt().solve(-jtr);
        if (!step.allFinite() || step.norm() < 1e-14) break;
        pose = se3_retract(step, pose);
    }
    return pose;
}

double capped_score(const PinholeCamera& intr, const Pose& pose,
                    const LabeledFrames& frames, double cap) {
    PinholeCamera cam = intr;
    cam.extrinsic = pose;
    double total = 0;
    for (const auto& [mk, px] : frames)
        total += std::min(best_assignment(cam, *mk, *px).first, cap);
    return total;
}

// Alternate labeling and robust pose polish with a shrinking inlier
// threshold; a pose hypothesis from just three noisy markers starts tens of
// pixels off, so one labeling pass is not enough. Rounds that make the
// capped residual worse are reverted.
Pose refine_with_labels(const PinholeCamera& intr, Pose pose,
                        const LabeledFrames& frames) {
    double score = capped_score(intr, pose, frames, 300.0);
    for (double thresh : {300.0, 150.0, 60.0}) {
        PinholeCamera cam = intr;
        cam.extrinsic = pose;
        std::vector<std::pair<Eigen::Vector3d, Eigen::Vector2d>> corr;
        for (const auto& [mk, px] : frames) {
            auto [res, perm] = best_assignment(cam, *mk, *px);
            if (res > thresh) continue;
            for (int m = 0; m < 3; ++m) corr.emplace_back((*mk)[m], (*px)[perm[m]]);
        }
        if (corr.size() < 6) continue;
        Pose trial = gn_pose(intr, pose, corr, 15.0);
        double trial_score = capped_score(intr, trial, frames, 300.0);
        if (trial_score <= score) {
            pose = trial;
            score = trial_score;
        }
    }
    return pose;
}

}  // namespace

CalibrationResult calibrate_rig(const WandSequence& wand_obs,
                                const std::vector<std::string>& camera_ids,
                                const std::vector<PinholeCamera>& intrinsics,
                                const WandGeometry& wand,
                                const CalibrateOptions& opts) {
    if (camera_ids.empty() || camera_ids.size() != intrinsics.size())
        throw BadConfig("camera id / intrinsics mismatch");
    const std::string& ref_id = camera_ids[0];
    const PinholeCamera& ref_intr = intrinsics[0];
    auto wand_local = wand.local_points();

    // (a) P3P bootstrap in the reference camera: per-frame candidates from all
    // marker-to-pixel assignments, disambiguated by temporal continuity.
    std::vector<int> ref_frames;
    std::vector<std::vector<FrameCandidate>> candidates;
    for (const auto& [frame, by_cam] : wand_obs.frames) {
        auto it = by_cam.find(ref_id);
        if (it == by_cam.end()) continue;
        const auto& pixels = it->second;
        std::vector<FrameCandidate> cands;
        for (const auto& p : kPerms) {
            std::array<Eigen::Vector2d, 3> permuted = {pixels[p[0]], pixels[p[1]],
                                                       pixels[p[2]]};
            try {
                for (const Pose& pose : p3p(wand_local, permuted, ref_intr)) {
                    FrameCandidate fc;
                    for (int m = 0; m < 3; ++m) fc.markers[m] = pose.apply(wand_local[m]);
                    fc.pixel_of_marker = {p[0], p[1], p[2]};
                    cands.push_back(fc);
                }
            } catch (const Error&) {
                // this assignment has no solution; others may
            }
        }
        if (!cands.empty()) {
            ref_frames.push_back(frame);
            candidates.push_back(std::move(cands));
        }
    }
    if (ref_frames.size() < 2)
        throw BootstrapFailed("only " + std::to_string(ref_frames.size()) +
                              " reference-camera frames with P3P solutions");

    // Pick the surviving candidate per frame. A lone camera can only use
    // temporal continuity; otherwise a partner camera breaks the P3P branch
    // ambiguity, because mirrored branches do not form a rigidly consistent
    // trajectory any second viewpoint can explain.
    std::vector<int> chosen(ref_frames.size(), -1);
    if (camera_ids.size() == 1) {
        // First two frames minimize per-marker velocity, later frames
        // per-marker acceleration.
        double best = std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < candidates[0].size(); ++i)
            for (size_t j = 0; j < candidates[1].size(); ++j) {
                double sum = 0;
                for (int m = 0; m < 3; ++m)
                    sum += (candidates[1][j].markers[m] - candidates[0][i].markers[m])
                               .squaredNorm();
                if (sum < best) {
                    best = sum;
                    chosen[0] = static_cast<int>(i);
                    chosen[1] = static_cast<int>(j);
                }
            }
        for (size_t f = 2; f < ref_frames.size(); ++f) {
            const auto& prev1 = candidates[f - 1][chosen[f - 1]].markers;
            const auto& prev2 = candidates[f - 2][chosen[f - 2]].markers;
            best = std::numeric_limits<double>::infinity();
            for (size_t i = 0; i < candidates[f].size(); ++i) {
                double sum = 0;
                for (int m = 0; m < 3; ++m)
                    sum += (candidates[f][i].markers[m] - 2 * prev1[m] + prev2[m])
                               .squaredNorm();
                if (sum < best) {
                    best = sum;
                    chosen[f] = static_cast<int>(i);
                }
            }
        }
    } else {
        // Partner camera: the one sharing the most reference frames.
        size_t partner = 1;
        std::vector<size_t> shared;  // indices into ref_frames
        for (size_t k = 1; k < camera_ids.size(); ++k) {
            std::vector<size_t> s;
            for (size_t f = 0; f < ref_frames.size(); ++f)
                if (wand_obs.frames.at(ref_frames[f]).count(camera_ids[k]))
                    s.push_back(f);
            if (s.size() > shared.size()) {
                shared = std::move(s);
                partner = k;
            }
        }
        if (static_cast<int>(shared.size()) < opts.min_shared_frames)
            throw InsufficientOverlap(
                "no camera shares enough frames with " + ref_id);

        // Hypothesize the partner pose from every (candidate, assignment)
        // pair at a few spread-out frames, then score a hypothesis by how
        // well *some* candidate per sampled frame explains the partner
        // pixels. Mirror branches fail this for almost every frame.
        std::vector<Pose> hyps;
        for (int s = 0; s < 3; ++s) {
            size_t f = shared[s * (shared.size() - 1) / 2];
            const auto& pixels =
                wand_obs.frames.at(ref_frames[f]).at(camera_ids[partner]);
            for (const FrameCandidate& cand : candidates[f])
                for (const auto& p : kPerms) {
                    std::array<Eigen::Vector2d, 3> permuted = {
                        pixels[p[0]], pixels[p[1]], pixels[p[2]]};
                    try {
                        auto sols = p3p(cand.markers, permuted, intrinsics[partner]);
                        hyps.insert(hyps.end(), sols.begin(), sols.end());
                    } catch (const Error&) {
                    }
                }
        }
        if (hyps.empty())
            throw BootstrapFailed("no partner pose hypotheses for " +
                                  camera_ids[partner]);

        size_t stride = std::max<size_t>(1, shared.size() / 25);
        double best_score = std::numeric_limits<double>::infinity();
        Pose best_pose;
        for (const Pose& hyp : hyps) {
            PinholeCamera cam = intrinsics[partner];
            cam.extrinsic = hyp;
            double score = 0;
            for (size_t i = 0; i < shared.size() && score < best_score;
                 i += stride) {
                size_t f = shared[i];
                const auto& pixels =
                    wand_obs.frames.at(ref_frames[f]).at(camera_ids[partner]);
                double frame_best = 300.0;
                for (const FrameCandidate& cand : candidates[f])
                    frame_best = std::min(
                        frame_best,
                        best_assignment(cam, cand.markers, pixels).first);
                score += frame_best;
            }
            if (score < best_score) {
                best_score = score;
                best_pose = hyp;
            }
        }

        // Tighten the winner against every shared frame's best candidate,
        // then choose per-frame candidates under the refined pose; frames
        // the partner missed stay unselected until the multi-view pass.
        {
            PinholeCamera cam = intrinsics[partner];
            cam.extrinsic = best_pose;
            LabeledFrames lf;
            std::vector<const std::array<Eigen::Vector3d, 3>*> frame_best(
                shared.size());
            for (size_t i = 0; i < shared.size(); ++i) {
                size_t f = shared[i];
                const auto& pixels =
                    wand_obs.frames.at(ref_frames[f]).at(camera_ids[partner]);
                double best = std::numeric_limits<double>::infinity();
                for (const FrameCandidate& cand : candidates[f]) {
                    double res =
                        best_assignment(cam, cand.markers, pixels).first;
                    if (res < best) {
                        best = res;
                        frame_best[i] = &cand.markers;
                    }
                }
                if (frame_best[i])
                    lf.emplace_back(frame_best[i],
                                    &wand_obs.frames.at(ref_frames[f])
                                         .at(camera_ids[partner]));
            }
            best_pose = refine_with_labels(intrinsics[partner], best_pose, lf);
        }
        PinholeCamera cam = intrinsics[partner];
        cam.extrinsic = best_pose;
        for (size_t f : shared) {
            const auto& pixels =
                wand_obs.frames.at(ref_frames[f]).at(camera_ids[partner]);
            double best = std::numeric_limits<double>::infinity();
            for (size_t i = 0; i < candidates[f].size(); ++i) {
                double res =
                    best_assignment(cam, candidates[f][i].markers, pixels).first;
                if (res < best) {
                    best = res;
                    chosen[f] = static_cast<int>(i);
                }
            }
            if (best > 150.0) chosen[f] = -1;  // nothing explains this frame
        }
    }

    CalibrationResult result;
    result.camera_ids = camera_ids;
    result.extrinsics.assign(camera_ids.size(), Pose::identity());
    for (size_t f = 0; f < ref_frames.size(); ++f)
        if (chosen[f] >= 0)
            result.wand_points[ref_frames[f]] = candidates[f][chosen[f]].markers;
    if (result.wand_points.size() < 2)
        throw BootstrapFailed("bootstrap selected under 2 frames");

    // (b)/(c) Remaining cameras: P3P pose hypotheses scored over the shared
    // frames fix the marker labels, then a linear DLT PnP over the
    // accumulated marker cloud gives the initial extrinsic.
    for (size_t k = 1; k < camera_ids.size(); ++k) {
        const std::string& cam_id = camera_ids[k];
        std::vector<int> shared;
        for (const auto& [frame, pts] : result.wand_points)
            if (wand_obs.frames.at(frame).count(cam_id)) shared.push_back(frame);
        if (static_cast<int>(shared.size()) < opts.min_shared_frames)
            throw InsufficientOverlap(cam_id + " shares " +
                                      std::to_string(shared.size()) + " frames");

        // Pose hypotheses from a handful of spread-out frames.
        std::vector<Pose> hypotheses;
        for (int s = 0; s < 5; ++s) {
            int frame = shared[s * (shared.size() - 1) / 4];
            const auto& markers = result.wand_points.at(frame);
            const auto& pixels = wand_obs.frames.at(frame).at(cam_id);
            for (const auto& p : kPerms) {
                std::array<Eigen::Vector2d, 3> permuted = {pixels[p[0]], pixels[p[1]],
                                                           pixels[p[2]]};
                try {
                    auto sols = p3p(markers, permuted, intrinsics[k]);
                    hypotheses.insert(hypotheses.end(), sols.begin(), sols.end());
                } catch (const Error&) {
                }
            }
        }
        if (hypotheses.empty()) throw BootstrapFailed("no P3P hypotheses for " + cam_id);

        // Score over (up to) 40 shared frames with per-frame residuals capped.
        double best_score = std::numeric_limits<double>::infinity();
        Pose best_pose;
        size_t stride = std::max<size_t>(1, shared.size() / 40);
        for (const Pose& hyp : hypotheses) {
            PinholeCamera cam = intrinsics[k];
            cam.extrinsic = hyp;
            double score = 0;
            for (size_t i = 0; i < shared.size(); i += stride) {
                auto [res, perm] =
                    best_assignment(cam, result.wand_points.at(shared[i]),
                                    wand_obs.frames.at(shared[i]).at(cam_id));
                score += std::min(res, 300.0);
            }
            if (score < best_score) {
                best_score = score;
                best_pose = hyp;
            }
        }

        // Tighten the hypothesis with label/PnP rounds, then label every
        // shared frame and solve PnP once more. Frames the pose cannot
        // explain (mislabeled bootstrap branches) are left out.
        {
            LabeledFrames lf;
            for (int frame : shared)
                lf.emplace_back(&result.wand_points.at(frame),
                                &wand_obs.frames.at(frame).at(cam_id));
            best_pose = refine_with_labels(intrinsics[k], best_pose, lf);
        }
        PinholeCamera cam = intrinsics[k];
        cam.extrinsic = best_pose;
        std::vector<std::pair<Eigen::Vector3d, Eigen::Vector2d>> corr;
        for (int frame : shared) {
            const auto& markers = result.wand_points.at(frame);
            const auto& pixels = wand_obs.frames.at(frame).at(cam_id);
            auto [res, perm] = best_assignment(cam, markers, pixels);
            if (res > 150.0) continue;
            for (int m = 0; m < 3; ++m) corr.emplace_back(markers[m], pixels[perm[m]]);
        }
        if (corr.size() < 6)
            throw BootstrapFailed("hypothesis for " + cam_id +
                                  " explains too few shared frames");
        result.extrinsics[k] = gn_pose(intrinsics[k], best_pose, corr, 15.0);
    }

    // Temporal continuity alone cannot separate the true P3P branch from a
    // mirrored one; with every camera initialized, re-pick each frame's
    // candidate by total multi-view reprojection and keep the labels that fall
    // out of it. Frames no candidate explains are dropped entirely.
    std::vector<BundleObservation> observations;
    if (camera_ids.size() == 1) {
        // No second view to re-select against; keep the continuity labels.
        for (size_t f = 0; f < ref_frames.size(); ++f) {
            const FrameCandidate& fc = candidates[f][chosen[f]];
            const auto& pixels = wand_obs.frames.at(ref_frames[f]).at(ref_id);
            for (int m = 0; m < 3; ++m)
                observations.push_back(
                    {ref_frames[f], 0, m, pixels[fc.pixel_of_marker[m]]});
        }
        CalibrationResult refined =
            bundle_adjust(result, intrinsics, observations, wand, opts.bundle);
        refined.extrinsics[0] = Pose::identity();
        fill_reprojection_stats(refined, intrinsics, observations);
        return refined;
    }
    // The bootstrap markers carry the reference camera's P3P depth noise, so
    // alternate: re-pick each frame's candidate by capped multi-view
    // residual, replace its markers with multi-view triangulations, refit
    // each extrinsic robustly, and bundle-adjust. Triangulation quality is
    // limited by the current extrinsics, so the cycle runs until the bundle
    // stops improving.
    auto run_round = [&](double gate_px, double huber) {
        observations.clear();
        std::vector<PinholeCamera> posed(camera_ids.size());
        for (size_t k = 0; k < camera_ids.size(); ++k) {
            posed[k] = intrinsics[k];
            posed[k].extrinsic = result.extrinsics[k];
        }
        std::map<int, std::array<Eigen::Vector3d, 3>> kept_points;
        for (size_t f = 0; f < ref_frames.size(); ++f) {
            int frame = ref_frames[f];
            const auto& by_cam = wand_obs.frames.at(frame);
            double best_total = std::numeric_limits<double>::infinity();
            size_t best_ci = 0;
            for (size_t ci = 0; ci < candidates[f].size(); ++ci) {
                double total = 0;
                int n = 0;
                for (size_t k = 0; k < camera_ids.size(); ++k) {
                    auto it = by_cam.find(camera_ids[k]);
                    if (it == by_cam.end()) continue;
                    total += std::min(
                        best_assignment(posed[k], candidates[f][ci].markers,
                                        it->second)
                            .first,
                        300.0);
                    n += 3;
                }
                if (n > 0 && total < best_total) {
                    best_total = total;
                    best_ci = ci;
                }
            }
            if (!std::isfinite(best_total)) continue;
            std::array<Eigen::Vector3d, 3> markers =
                candidates[f][best_ci].markers;

            // Per-camera labels under the candidate, then replace each marker
            // by its multi-view triangulation where two or more views agree.
            std::map<size_t, std::array<int, 3>> perms;
            for (size_t k = 0; k < camera_ids.size(); ++k) {
                auto it = by_cam.find(camera_ids[k]);
                if (it == by_cam.end()) continue;
                perms[k] = best_assignment(posed[k], markers, it->second).second;
            }
            for (int m = 0; m < 3; ++m) {
                std::vector<Observation> views;
                for (const auto& [k, perm] : perms)
                    views.push_back(
                        {posed[k], by_cam.at(camera_ids[k])[perm[m]], 1.0});
                if (views.size() < 2) continue;
                try {
                    markers[m] = triangulate(views).point;
                } catch (const Error&) {
                    // keep the single-view estimate
                }
            }

            // Gate on the triangulated geometry and emit labeled observations.
            double total = 0;
            int n = 0;
            for (auto& [k, perm] : perms) {
                auto [res, p] = best_assignment(posed[k], markers,
                                                by_cam.at(camera_ids[k]));
                perm = p;
                total += res;
                n += 3;
            }
            if (total / n > gate_px) continue;
            kept_points[frame] = markers;
            for (const auto& [k, perm] : perms)
                for (int m = 0; m < 3; ++m)
                    observations.push_back({frame, static_cast<int>(k), m,
                                            by_cam.at(camera_ids[k])[perm[m]]});
        }
        if (kept_points.size() < result.wand_points.size() / 2)
            throw BootstrapFailed("multi-view consistency rejected most frames");
        result.wand_points = std::move(kept_points);

        // Robust extrinsic refit against the triangulated markers.
        for (size_t k = 1; k < camera_ids.size(); ++k) {
            std::vector<std::pair<Eigen::Vector3d, Eigen::Vector2d>> corr;
            for (const auto& ob : observations)
                if (ob.camera == static_cast<int>(k))
                    corr.emplace_back(result.wand_points.at(ob.frame)[ob.marker],
                                      ob.pixel);
            if (corr.size() >= 6)
                result.extrinsics[k] =
                    gn_pose(intrinsics[k], result.extrinsics[k], corr, huber);
        }
    };

    run_round(50.0, 15.0);
    run_round(3.0, 4.0);
    CalibrationResult refined =
        bundle_adjust(result, intrinsics, observations, wand, opts.bundle);
    std::vector<BundleObservation> refined_obs = observations;
    for (int outer = 0; outer < 3; ++outer) {
        double prev = refined.mean_reprojection_px;
        result.extrinsics = refined.extrinsics;
        result.wand_points = refined.wand_points;
        run_round(3.0, 4.0);
        CalibrationResult again =
            bundle_adjust(result, intrinsics, observations, wand, opts.bundle);
        bool improved = again.mean_reprojection_px < prev - 1e-6;
        if (again.mean_reprojection_px < prev) {
            refined = std::move(again);
            refined_obs = observations;
        }
        if (!improved) break;
    }
    observations = std::move(refined_obs);
    refined.extrinsics[0] = Pose::identity();  // gauge, exactly
    fill_reprojection_stats(refined, intrinsics, observations);
    return refined;
}

}  // namespace twin
