#include <doctest.h>

#include "roomtwin/schemas.hpp"
#include "test_util.hpp"

using namespace twin;
using namespace twin::test;

TEST_CASE("minimal cameras file parses") {
    Json j = Json::parse(R"({"cameras":[{"id":"cam0","fx":1000.0,"fy":1000.0,
        "cx":960.0,"cy":540.0,"width":1920,"height":1080,
        "q_wxyz":[1.0,0.0,0.0,0.0],"t_xyz":[0.0,0.0,0.0]}]})");
    CameraSet set = cameras_from_json(j);
    REQUIRE(set.cameras.size() == 1);
    CHECK(set.ids[0] == "cam0");
    CHECK(set.cameras[0].fx == 1000.0);
}

TEST_CASE("cameras schema violations carry the offending path") {
    Json j = Json::parse(R"({"cameras":[{"id":"cam0","fx":1000.0}]})");
    try {
        cameras_from_json(j);
        FAIL("expected SchemaViolation");
    } catch (const SchemaViolation& e) {
        CHECK(std::string(e.what()).find("/cameras/0") != std::string::npos);
    }
}

TEST_CASE("keypoints entry with 16 joints is rejected") {
    Json joints = Json::array();
    for (int i = 0; i < 16; ++i) joints.push_back({0.0, 0.0, 1.0});
    Json j{{"frames",
            {{{"frame", 0},
              {"detections",
               {{"cam0", {{{"bbox", {0.0, 0.0, 1.0, 1.0}}, {"joints", joints}}}}}}}}}};
    CHECK_THROWS_AS(keypoints_from_json(j), SchemaViolation);
}

TEST_CASE("keypoints round trip through canonical json") {
    KeypointFile kp;
    Keypoints2D det;
    det.camera = "cam1";
    det.bbox = {10, 20, 110, 220};
    for (int i = 0; i < kNumJoints; ++i)
        det.joints[i] = {{100.0 + i, 200.0 - i}, 0.25 + 0.04 * i};
    kp[3]["cam1"].push_back(det);
    Json j = Json::parse(canonical_dump(keypoints_to_json(kp)));
    KeypointFile back = keypoints_from_json(j);
    REQUIRE(back.count(3) == 1);
    CHECK(back[3]["cam1"][0].joints[5].uv.x() == det.joints[5].uv.x());
    CHECK(back[3]["cam1"][0].joints[16].conf == det.joints[16].conf);
}

TEST_CASE("wand file round trip") {
    WandSequence seq;
    seq.frames[0]["cam0"] = {Eigen::Vector2d{1.5, 2.5}, Eigen::Vector2d{3, 4},
                             Eigen::Vector2d{5, 6}};
    Json j = Json::parse(canonical_dump(wand_to_json(seq)));
    WandSequence back = wand_from_json(j);
    CHECK(back.frames[0]["cam0"][0].x() == 1.5);
    CHECK(back.frames[0]["cam0"][2].y() == 6);
}

TEST_CASE("canonical dump: sorted keys, 17 significant digits, newline") {
    Json j{{"b", 0.1}, {"a", 1}};
    std::string s = canonical_dump(j);
    CHECK(s == "{\"a\":1,\"b\":0.10000000000000001}\n");
}

TEST_CASE("canonical dump is stable across insertion orders") {
    Json a, b;
    a["x"] = 1.5;
    a["y"] = 2;
    b["y"] = 2;
    b["x"] = 1.5;
    CHECK(canonical_dump(a) == canonical_dump(b));
}

TEST_CASE("report json carries inf psnr as a string") {
    EvalReport r;
    r.metrics["psnr_db"] = std::numeric_limits<double>::infinity();
    r.counts["pixels"] = 42;
    Json j = Json::parse(canonical_dump(report_to_json(r)));
    EvalReport back = report_from_json(j);
    CHECK(std::isinf(back.metrics["psnr_db"]));
    CHECK(back.counts["pixels"] == 42);
}

TEST_CASE("registration result round trip") {
    auto g = rng(61);
    RegistrationResult res;
    res.pose = random_pose(g, 2.0);
    res.fitness = 0.83;
    res.inlier_rmse = 0.004;
    res.converged = true;
    RegistrationResult back =
        registration_from_json(Json::parse(canonical_dump(registration_to_json(res))));
    CHECK((back.pose.matrix() - res.pose.matrix()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(back.fitness == res.fitness);
    CHECK(back.converged);
}

TEST_CASE("tracks round trip preserves validity flags") {
    Track tr;
    tr.person_id = 2;
    Skeleton3D s;
    s.joints[0] = {{1, 2, 3}, true, false, 0.5};
    s.joints[1] = {{0, 0, 0}, false, false, 0};
    s.joints[2] = {{4, 5, 6}, true, true, 0};
    tr.frames[7] = s;
    auto back = tracks_from_json(Json::parse(canonical_dump(tracks_to_json({tr}))));
    REQUIRE(back.size() == 1);
    CHECK(back[0].frames[7].joints[0].valid);
    CHECK_FALSE(back[0].frames[7].joints[1].valid);
    CHECK(back[0].frames[7].joints[2].inferred);
    CHECK(back[0].frames[7].joints[0].position == Eigen::Vector3d(1, 2, 3));
}
