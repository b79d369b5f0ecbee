#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "roomtwin/io.hpp"
#include "test_util.hpp"

using namespace twin;
using namespace twin::test;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("roomtwin_io_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

}  // namespace

TEST_CASE("ply round trip preserves a 2-point cloud") {
    TempDir dir;
    PointCloud cloud;
    cloud.positions = {{0.125, -3.5, 2.0}, {1e-7, 99.25, -0.0625}};
    cloud.colors = {{1, 0, 0}, {0, 0.5, 1}};
    write_ply(dir.file("a.ply"), cloud);
    PointCloud back = read_ply(dir.file("a.ply"));
    REQUIRE(back.size() == 2);
    for (int i = 0; i < 2; ++i)
        CHECK((back.positions[i] - cloud.positions[i]).norm() == 0);
    CHECK(back.colors[0].x() == doctest::Approx(1));
}

TEST_CASE("ply missing z property fails") {
    TempDir dir;
    write_file(dir.file("bad.ply"),
               "ply\nformat ascii 1.0\nelement vertex 1\n"
               "property double x\nproperty double y\nend_header\n0 0\n");
    CHECK_THROWS_AS(read_ply(dir.file("bad.ply")), PropertyMismatch);
}

TEST_CASE("ply malformed and truncated inputs yield typed errors") {
    TempDir dir;
    write_file(dir.file("m.ply"), "not a ply\n");
    CHECK_THROWS_AS(read_ply(dir.file("m.ply")), MalformedHeader);
    write_file(dir.file("t.ply"),
               "ply\nformat ascii 1.0\nelement vertex 3\nproperty double x\n"
               "property double y\nproperty double z\nend_header\n0 0 0\n");
    CHECK_THROWS_AS(read_ply(dir.file("t.ply")), TruncatedBody);
}

TEST_CASE("ply large random round trip is exact") {
    TempDir dir;
    auto g = rng(41);
    PointCloud cloud;
    for (int i = 0; i < 100000; ++i) cloud.positions.push_back(random_vec(g, -50, 50));
    cloud.normals.resize(cloud.size());
    for (auto& n : cloud.normals) n = random_vec(g).normalized();
    write_ply(dir.file("big.ply"), cloud);
    PointCloud back = read_ply(dir.file("big.ply"));
    REQUIRE(back.size() == cloud.size());
    double max_dev = 0;
    for (size_t i = 0; i < cloud.size(); ++i)
        max_dev = std::max(max_dev, (back.positions[i] - cloud.positions[i]).norm());
    CHECK(max_dev == 0);
}

TEST_CASE("pfm round trip is bit exact") {
    TempDir dir;
    RasterF32 r(2, 2);
    r.at(0, 0) = 1.0f;
    r.at(1, 0) = 2.0f;
    r.at(0, 1) = 3.0f;
    r.at(1, 1) = 4.0f;
    write_pfm(dir.file("r.pfm"), r);
    RasterF32 back = read_pfm(dir.file("r.pfm"));
    REQUIRE(back.width == 2);
    REQUIRE(back.height == 2);
    CHECK(std::memcmp(back.data.data(), r.data.data(), 4 * sizeof(float)) == 0);
}

TEST_CASE("pfm rejects color magic and bad scale") {
    TempDir dir;
    write_file(dir.file("c.pfm"), "PF\n2 2\n-1.0\n");
    CHECK_THROWS_AS(read_pfm(dir.file("c.pfm")), BadMagic);
    write_file(dir.file("s.pfm"), "Pf\n1 1\n1.0\n\0\0\0\0");
    CHECK_THROWS_AS(read_pfm(dir.file("s.pfm")), BadScale);
    write_file(dir.file("short.pfm"), "Pf\n4 4\n-1.0\nxx");
    CHECK_THROWS_AS(read_pfm(dir.file("short.pfm")), SizeMismatch);
}

TEST_CASE("pfm random 640x480 raster round trips bitwise") {
    TempDir dir;
    auto g = rng(43);
    std::uniform_real_distribution<float> d(-1e6f, 1e6f);
    RasterF32 r(640, 480);
    for (auto& v : r.data) v = d(g);
    write_pfm(dir.file("n.pfm"), r);
    RasterF32 back = read_pfm(dir.file("n.pfm"));
    CHECK(std::memcmp(back.data.data(), r.data.data(),
                      r.data.size() * sizeof(float)) == 0);
}

TEST_CASE("pnm round trips and rejects 16-bit maxval") {
    TempDir dir;
    auto g = rng(47);
    std::uniform_int_distribution<int> d(0, 255);
    Image8 img(37, 21, 3);
    for (auto& v : img.data) v = static_cast<uint8_t>(d(g));
    write_pnm(dir.file("i.ppm"), img);
    Image8 back = read_pnm(dir.file("i.ppm"));
    REQUIRE(back.channels == 3);
    CHECK(back.data == img.data);

    Image8 mask(5, 4, 1);
    mask.at(2, 2) = 255;
    write_pnm(dir.file("m.pgm"), mask);
    CHECK(read_pnm(dir.file("m.pgm")).data == mask.data);

    write_file(dir.file("bad.pgm"), "P5\n2 2\n65535\n....");
    CHECK_THROWS_AS(read_pnm(dir.file("bad.pgm")), BadMaxval);
    write_file(dir.file("bad2.pgm"), "P9\n2 2\n255\n....");
    CHECK_THROWS_AS(read_pnm(dir.file("bad2.pgm")), BadMagic);
}

TEST_CASE("tum single identity line") {
    TempDir dir;
    write_file(dir.file("t.tum"), "0.0 0 0 0 0 0 0 1\n");
    Trajectory traj = read_tum(dir.file("t.tum"));
    REQUIRE(traj.size() == 1);
    CHECK(traj.entries[0].first == 0.0);
    CHECK(traj.entries[0].second.t.norm() == 0);
    CHECK(traj.entries[0].second.q.w() == doctest::Approx(1));
}

TEST_CASE("tum rejects swapped timestamps and bad lines") {
    TempDir dir;
    write_file(dir.file("s.tum"), "1.0 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n");
    CHECK_THROWS_AS(read_tum(dir.file("s.tum")), NonMonotonicTime);
    write_file(dir.file("f.tum"), "0.0 0 0 0 0 0 1\n");
    CHECK_THROWS_AS(read_tum(dir.file("f.tum")), BadFieldCount);
    write_file(dir.file("n.tum"), "0.0 nan 0 0 0 0 0 1\n");
    CHECK_THROWS_AS(read_tum(dir.file("n.tum")), NonFiniteValue);
}

TEST_CASE("tum 1000-pose random round trip within 1e-8") {
    TempDir dir;
    auto g = rng(53);
    Trajectory traj;
    for (int i = 0; i < 1000; ++i)
        traj.entries.emplace_back(i / 30.0, random_pose(g, 5.0));
    write_tum(dir.file("r.tum"), traj);
    Trajectory back = read_tum(dir.file("r.tum"));
    REQUIRE(back.size() == traj.size());
    double max_err = 0;
    for (size_t i = 0; i < traj.size(); ++i) {
        max_err = std::max(max_err,
                           (back.entries[i].second.t - traj.entries[i].second.t).norm());
        max_err = std::max(max_err, std::abs(back.entries[i].first - traj.entries[i].first));
        max_err = std::max(max_err, (back.entries[i].second.q.coeffs() -
                                     traj.entries[i].second.q.coeffs()).norm());
    }
    CHECK(max_err < 1e-8);
}

TEST_CASE("fuzzed writer output is always accepted by its reader") {
    TempDir dir;
    auto g = rng(59);
    std::uniform_int_distribution<int> dim(1, 24);
    for (int i = 0; i < 200; ++i) {
        PointCloud cloud;
        int n = dim(g);
        for (int k = 0; k < n; ++k) cloud.positions.push_back(random_vec(g, -10, 10));
        write_ply(dir.file("f.ply"), cloud);
        CHECK(read_ply(dir.file("f.ply")).size() == cloud.size());

        RasterF32 r(dim(g), dim(g));
        std::uniform_real_distribution<float> d(-100.f, 100.f);
        for (auto& v : r.data) v = d(g);
        write_pfm(dir.file("f.pfm"), r);
        CHECK(read_pfm(dir.file("f.pfm")).data == r.data);

        Image8 img(dim(g), dim(g), i % 2 ? 3 : 1);
        std::uniform_int_distribution<int> b(0, 255);
        for (auto& v : img.data) v = static_cast<uint8_t>(b(g));
        write_pnm(dir.file("f.pnm"), img);
        CHECK(read_pnm(dir.file("f.pnm")).data == img.data);
    }
}

TEST_CASE("readers return typed errors on truncated input, never crash") {
    TempDir dir;
    const char* payload = "Pf\n100 100\n-1.0\nabc";
    write_file(dir.file("t.pfm"), payload);
    CHECK_THROWS_AS(read_pfm(dir.file("t.pfm")), SizeMismatch);
    write_file(dir.file("t.ppm"), "P6\n100 100\n255\nab");
    CHECK_THROWS_AS(read_pnm(dir.file("t.ppm")), TruncatedBody);
    write_file(dir.file("t.ply"), "ply\nformat ascii 1.0\n");
    CHECK_THROWS_AS(read_ply(dir.file("t.ply")), MalformedHeader);
}
