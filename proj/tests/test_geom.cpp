#include <doctest.h>

#include <random>

#include "roomtwin/geom.hpp"
#include "test_util.hpp"

using namespace twin;
using namespace twin::test;

TEST_CASE("pose identity composition") {
    Pose id;
    Pose c = se3_compose(id, id);
    CHECK(c.t.norm() == doctest::Approx(0));
    CHECK(std::abs(c.q.w()) == doctest::Approx(1));
}

TEST_CASE("pose inverse gives identity") {
    Pose a(Eigen::Quaterniond::Identity(), {1, 0, 0});
    Pose e = se3_compose(a, se3_inverse(a));
    CHECK(e.t.norm() < 1e-9);
    CHECK(std::abs(e.q.w() - 1) < 1e-9);
}

TEST_CASE("composition matches homogeneous matrix product") {
    auto g = rng(7);
    for (int i = 0; i < 100; ++i) {
        Pose a = random_pose(g), b = random_pose(g);
        Eigen::Matrix4d oracle = a.matrix() * b.matrix();
        CHECK((se3_compose(a, b).matrix() - oracle).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("se3 group laws hold under random composition") {
    auto g = rng(11);
    for (int i = 0; i < 1000; ++i) {
        Pose a = random_pose(g), b = random_pose(g), c = random_pose(g);
        Eigen::Matrix4d lhs = se3_compose(se3_compose(a, b), c).matrix();
        Eigen::Matrix4d rhs = se3_compose(a, se3_compose(b, c)).matrix();
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
        Eigen::Matrix4d inv = se3_compose(a, se3_inverse(a)).matrix();
        CHECK((inv - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("pose invariants: unit quaternion, proper rotation, w >= 0") {
    auto g = rng(13);
    for (int i = 0; i < 200; ++i) {
        Pose p = random_pose(g);
        CHECK(std::abs(p.q.norm() - 1) < 1e-9);
        CHECK(p.q.w() >= 0);
        Eigen::Matrix3d r = p.rotation();
        CHECK((r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <
              1e-9);
        CHECK(r.determinant() == doctest::Approx(1).epsilon(1e-9));
    }
}

TEST_CASE("projection basics") {
    PinholeCamera cam = test_camera();
    Eigen::Vector2d uv = project(cam, {0, 0, 2});
    CHECK(uv.x() == doctest::Approx(960));
    CHECK(uv.y() == doctest::Approx(540));
    uv = project(cam, {0.2, 0, 2});
    CHECK(uv.x() == doctest::Approx(1060));
    CHECK(uv.y() == doctest::Approx(540));
    CHECK_THROWS_AS(project(cam, {0, 0, -1}), BehindCamera);
}

TEST_CASE("triangulation recovers a noiseless point") {
    PinholeCamera cam0 = test_camera();
    // Camera 1 translated to world x = 1 m, same orientation.
    Pose ext1(Eigen::Quaterniond::Identity(), {-1, 0, 0});
    PinholeCamera cam1 = test_camera(ext1);
    Eigen::Vector3d p(0, 0, 2);
    auto res = triangulate({{cam0, project(cam0, p), 1.0},
                            {cam1, project(cam1, p), 1.0}});
    CHECK((res.point - p).norm() < 1e-9);
    CHECK(res.mean_reprojection_px < 1e-9);
}

TEST_CASE("triangulation single observation is degenerate") {
    PinholeCamera cam = test_camera();
    CHECK_THROWS_AS(triangulate({{cam, {960, 540}, 1.0}}), DegenerateGeometry);
}

TEST_CASE("triangulation with coincident centers is degenerate") {
    PinholeCamera cam0 = test_camera();
    PinholeCamera cam1 = test_camera();
    CHECK_THROWS_AS(triangulate({{cam0, {960, 540}, 1.0}, {cam1, {100, 100}, 1.0}}),
                    DegenerateGeometry);
}

TEST_CASE("triangulation error under 1 px noise stays below 5 mm at 3 m") {
    auto g = rng(17);
    std::normal_distribution<double> noise(0, 1.0);
    // 4 cameras in a ring of radius 3 m looking at the origin area.
    std::vector<PinholeCamera> cams;
    for (int i = 0; i < 4; ++i) {
        double a = i * M_PI / 2;
        Eigen::Vector3d c(3 * std::cos(a), 3 * std::sin(a), 0);
        Eigen::Vector3d fwd = -c.normalized();
        Eigen::Vector3d up(0, 0, 1);
        Eigen::Vector3d right = fwd.cross(up).normalized();
        Eigen::Vector3d down = fwd.cross(right).normalized();
        Eigen::Matrix3d r;
        r.row(0) = right;
        r.row(1) = down;
        r.row(2) = fwd;
        cams.push_back(test_camera(Pose::from_rt(r, -r * c)));
    }
    std::vector<double> errors;
    for (int trial = 0; trial < 1000; ++trial) {
        Eigen::Vector3d p = random_vec(g, -0.5, 0.5);
        std::vector<Observation> obs;
        for (const auto& cam : cams) {
            Eigen::Vector2d uv = project(cam, p);
            obs.push_back({cam, uv + Eigen::Vector2d(noise(g), noise(g)), 1.0});
        }
        auto res = triangulate(obs);
        errors.push_back((res.point - p).norm());
    }
    std::sort(errors.begin(), errors.end());
    CHECK(errors[errors.size() / 2] < 0.005);
}

TEST_CASE("projection/triangulation round trip across random camera pairs") {
    auto g = rng(19);
    std::uniform_real_distribution<double> depth(1.0, 10.0);
    for (int trial = 0; trial < 50; ++trial) {
        PinholeCamera cam0 = test_camera();
        Eigen::Vector3d offset = random_vec(g, -1, 1);
        if (offset.norm() < 0.1) offset = {0.5, 0, 0};
        PinholeCamera cam1 = test_camera(Pose(Eigen::Quaterniond::Identity(), -offset));
        Eigen::Vector3d p(0.3 * offset.x(), 0.1, depth(g));
        auto res = triangulate({{cam0, project(cam0, p), 1.0},
                                {cam1, project(cam1, p), 1.0}});
        CHECK((res.point - p).norm() < 1e-6);
    }
}

TEST_CASE("umeyama trivial alignments") {
    std::vector<Eigen::Vector3d> src = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0.3, 0.2, 0.9}};
    auto res = umeyama_align(src, src);
    CHECK(res.pose.t.norm() < 1e-12);
    CHECK(res.scale == doctest::Approx(1));

    std::vector<Eigen::Vector3d> dst;
    for (const auto& p : src) dst.push_back(p + Eigen::Vector3d(1, 0, 0));
    res = umeyama_align(src, dst);
    CHECK((res.pose.t - Eigen::Vector3d(1, 0, 0)).norm() < 1e-12);
    CHECK(std::abs(res.pose.q.w() - 1) < 1e-12);
}

TEST_CASE("umeyama recovers a random rigid transform") {
    auto g = rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        Pose gt = random_pose(g, 2.0);
        std::vector<Eigen::Vector3d> src, dst;
        for (int i = 0; i < 10; ++i) {
            src.push_back(random_vec(g, -2, 2));
            dst.push_back(gt.apply(src.back()));
        }
        auto res = umeyama_align(src, dst);
        CHECK((res.pose.matrix() - gt.matrix()).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(res.scale == doctest::Approx(1));
    }
}

TEST_CASE("umeyama recovers scale when requested") {
    auto g = rng(29);
    Pose gt = random_pose(g, 1.0);
    double s = 1.7;
    std::vector<Eigen::Vector3d> src, dst;
    for (int i = 0; i < 20; ++i) {
        src.push_back(random_vec(g, -2, 2));
        dst.push_back(s * (gt.rotation() * src.back()) + gt.t);
    }
    auto res = umeyama_align(src, dst, true);
    CHECK(res.scale == doctest::Approx(s).epsilon(1e-9));
}

TEST_CASE("umeyama degenerate inputs") {
    std::vector<Eigen::Vector3d> two = {{0, 0, 0}, {1, 0, 0}};
    CHECK_THROWS_AS(umeyama_align(two, two), DegenerateInput);
    std::vector<Eigen::Vector3d> line = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
    CHECK_THROWS_AS(umeyama_align(line, line), DegenerateInput);
}

TEST_CASE("umeyama output beats random rigid perturbations") {
    auto g = rng(31);
    std::vector<Eigen::Vector3d> src, dst;
    std::normal_distribution<double> n(0, 0.05);
    Pose gt = random_pose(g, 1.0);
    for (int i = 0; i < 30; ++i) {
        src.push_back(random_vec(g, -1, 1));
        dst.push_back(gt.apply(src.back()) + Eigen::Vector3d(n(g), n(g), n(g)));
    }
    auto res = umeyama_align(src, dst);
    auto residual = [&](const Pose& p) {
        double sum = 0;
        for (size_t i = 0; i < src.size(); ++i)
            sum += (dst[i] - p.apply(src[i])).squaredNorm();
        return sum;
    };
    double best = residual(res.pose);
    std::normal_distribution<double> tiny(0, 0.01);
    for (int i = 0; i < 1000; ++i) {
        Eigen::Matrix<double, 6, 1> d;
        for (int k = 0; k < 6; ++k) d(k) = tiny(g);
        CHECK(residual(se3_retract(d, res.pose)) >= best - 1e-12);
    }
}

TEST_CASE("kdtree basics") {
    std::vector<Eigen::Vector3d> pts = {{0, 0, 0}, {1, 0, 0}};
    KdTree tree(pts);
    auto nn = tree.knn({0.1, 0, 0}, 1);
    CHECK(nn[0].index == 0);
    CHECK(nn[0].distance == doctest::Approx(0.1));
    auto rad = tree.radius({0.6, 0, 0}, 0.5);
    REQUIRE(rad.size() == 1);
    CHECK(rad[0].index == 1);
}

TEST_CASE("kdtree throws on empty cloud") {
    CHECK_THROWS_AS(KdTree(std::vector<Eigen::Vector3d>{}), EmptyCloud);
}

TEST_CASE("kdtree equals brute force on 10k random points") {
    auto g = rng(37);
    std::vector<Eigen::Vector3d> pts;
    for (int i = 0; i < 10000; ++i) pts.push_back(random_vec(g, -5, 5));
    KdTree tree(pts);

    auto brute_knn = [&](const Eigen::Vector3d& q, int k) {
        std::vector<Neighbor> all;
        for (size_t i = 0; i < pts.size(); ++i)
            all.push_back({static_cast<int>(i), (pts[i] - q).norm()});
        std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
            return a.distance < b.distance ||
                   (a.distance == b.distance && a.index < b.index);
        });
        all.resize(k);
        return all;
    };

    for (int trial = 0; trial < 50; ++trial) {
        Eigen::Vector3d q = random_vec(g, -6, 6);
        auto got = tree.knn(q, 8);
        auto want = brute_knn(q, 8);
        REQUIRE(got.size() == want.size());
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].index == want[i].index);
            CHECK(got[i].distance == doctest::Approx(want[i].distance));
        }

        double r = 0.8;
        auto got_r = tree.radius(q, r);
        std::vector<int> want_r;
        for (size_t i = 0; i < pts.size(); ++i)
            if ((pts[i] - q).norm() <= r) want_r.push_back(static_cast<int>(i));
        REQUIRE(got_r.size() == want_r.size());
        std::vector<int> got_idx;
        for (const auto& nb : got_r) got_idx.push_back(nb.index);
        std::sort(got_idx.begin(), got_idx.end());
        CHECK(got_idx == want_r);
    }
}
