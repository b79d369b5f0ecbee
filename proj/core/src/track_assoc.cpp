#include <algorithm>
#include <cmath>
#include <limits>

#include "roomtwin/track.hpp"

namespace twin {

namespace {

// Mean of the valid hip joints; valid-joint centroid when both hips are out.
Eigen::Vector3d pelvis_proxy(const Skeleton3D& skel) {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    int n = 0;
    for (int j : {kLeftHip, kRightHip})
        if (skel.joints[j].valid) {
            sum += skel.joints[j].position;
            ++n;
        }
    if (n > 0) return sum / n;
    for (int j = 0; j < kNumJoints; ++j)
        if (skel.joints[j].valid) {
            sum += skel.joints[j].position;
            ++n;
        }
    return n > 0 ? Eigen::Vector3d(sum / n) : Eigen::Vector3d::Zero();
}

double pair_cost(const Skeleton3D& a, const Skeleton3D& b) {
    double proxy = (pelvis_proxy(a) - pelvis_proxy(b)).norm();
    double sum = 0;
    int n = 0;
    for (int j = 0; j < kNumJoints; ++j)
        if (a.joints[j].valid && b.joints[j].valid) {
            sum += (a.joints[j].position - b.joints[j].position).norm();
            ++n;
        }
    double pose = n > 0 ? sum / n : proxy;
    return 0.5 * proxy + 0.5 * pose;
}

}  // namespace

std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
    // Kuhn-Munkres with potentials; requires rows <= cols, so transpose when
    // needed and invert the mapping at the end.
    const int rows = static_cast<int>(cost.rows());
    const int cols = static_cast<int>(cost.cols());
    if (rows == 0 || cols == 0) return std::vector<int>(rows, -1);
    if (rows > cols) {
        std::vector<int> t = hungarian(cost.transpose());
        std::vector<int> out(rows, -1);
        for (int c = 0; c < cols; ++c)
            if (t[c] >= 0) out[t[c]] = c;
        return out;
    }

    const double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(rows + 1, 0), v(cols + 1, 0);
    std::vector<int> way(cols + 1, 0), match(cols + 1, 0);  // 1-based
    for (int i = 1; i <= rows; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(cols + 1, kInf);
        std::vector<char> used(cols + 1, false);
        do {
            used[j0] = true;
            int i0 = match[j0], j1 = 0;
            double delta = kInf;
            for (int j = 1; j <= cols; ++j) {
                if (used[j]) continue;
                double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= cols; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> out(rows, -1);
    for (int j = 1; j <= cols; ++j)
        if (match[j] > 0) out[match[j] - 1] = j - 1;
    return out;
}

AssociationResult associate_tracks(const std::vector<Track>& tracks,
                                   const std::vector<Skeleton3D>& skeletons,
                                   double gate_m, int max_missed) {
    AssociationResult result;
    std::vector<char> skel_matched(skeletons.size(), false);

    if (!tracks.empty() && !skeletons.empty()) {
        Eigen::MatrixXd cost(tracks.size(), skeletons.size());
        for (size_t t = 0; t < tracks.size(); ++t) {
            const Skeleton3D& last = tracks[t].frames.rbegin()->second;
            for (size_t s = 0; s < skeletons.size(); ++s)
                cost(t, s) = pair_cost(last, skeletons[s]);
        }
        std::vector<int> assign = hungarian(cost);
        for (size_t t = 0; t < tracks.size(); ++t)
            if (assign[t] >= 0 && cost(t, assign[t]) <= gate_m) {
                result.assignments.emplace_back(static_cast<int>(t), assign[t]);
                skel_matched[assign[t]] = true;
            }
    }

    std::vector<char> track_matched(tracks.size(), false);
    for (const auto& [t, s] : result.assignments) track_matched[t] = true;
    for (size_t t = 0; t < tracks.size(); ++t)
        if (!track_matched[t] && tracks[t].missed_frames + 1 >= max_missed)
            result.terminated_tracks.push_back(static_cast<int>(t));
    for (size_t s = 0; s < skeletons.size(); ++s)
        if (!skel_matched[s]) result.new_skeletons.push_back(static_cast<int>(s));
    return result;
}

void advance_tracks(std::vector<Track>& tracks,
                    const std::vector<Skeleton3D>& skeletons, int frame,
                    int* next_person_id, double gate_m, int max_missed) {
    AssociationResult assoc = associate_tracks(tracks, skeletons, gate_m, max_missed);

    std::vector<char> matched(tracks.size(), false);
    for (const auto& [t, s] : assoc.assignments) {
        tracks[t].frames[frame] = skeletons[s];
        tracks[t].missed_frames = 0;
        matched[t] = true;
    }
    for (size_t t = 0; t < tracks.size(); ++t)
        if (!matched[t]) ++tracks[t].missed_frames;

    std::vector<Track> survivors;
    for (size_t t = 0; t < tracks.size(); ++t)
        if (tracks[t].missed_frames < max_missed)
            survivors.push_back(std::move(tracks[t]));
    tracks = std::move(survivors);

    for (int s : assoc.new_skeletons) {
        Track track;
        track.person_id = (*next_person_id)++;
        track.frames[frame] = skeletons[s];
        tracks.push_back(std::move(track));
    }
    for (Track& t : tracks) t.bone_lengths = median_bone_lengths(t);
}

std::array<double, kNumLimbs> median_bone_lengths(const Track& track) {
    std::array<double, kNumLimbs> out{};
    for (int l = 0; l < kNumLimbs; ++l) {
        auto [p, c] = kLimbs[l];
        std::vector<double> lengths;
        for (const auto& [frame, skel] : track.frames)
            if (skel.joints[p].valid && skel.joints[c].valid)
                lengths.push_back(
                    (skel.joints[p].position - skel.joints[c].position).norm());
        if (lengths.empty()) continue;
        std::sort(lengths.begin(), lengths.end());
        size_t n = lengths.size();
        out[l] = n % 2 ? lengths[n / 2]
                       : 0.5 * (lengths[n / 2 - 1] + lengths[n / 2]);
    }
    return out;
}

}  // namespace twin
