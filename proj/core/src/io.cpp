#include "roomtwin/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace twin {

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw TruncatedBody("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw TruncatedBody("cannot open " + path + " for writing");
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// PLY

void write_ply(const std::string& path, const PointCloud& cloud) {
    std::ostringstream out;
    out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n";
    out << "property double x\nproperty double y\nproperty double z\n";
    if (cloud.has_normals())
        out << "property double nx\nproperty double ny\nproperty double nz\n";
    if (cloud.has_colors())
        out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "end_header\n";
    for (size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.positions[i];
        out << format_double(p.x()) << ' ' << format_double(p.y()) << ' '
            << format_double(p.z());
        if (cloud.has_normals()) {
            const auto& n = cloud.normals[i];
            out << ' ' << format_double(n.x()) << ' ' << format_double(n.y()) << ' '
                << format_double(n.z());
        }
        if (cloud.has_colors()) {
            const auto& c = cloud.colors[i];
            for (int k = 0; k < 3; ++k)
                out << ' ' << static_cast<int>(std::lround(
                                std::clamp(c(k), 0.0, 1.0) * 255.0));
        }
        out << '\n';
    }
    write_file(path, out.str());
}

PointCloud read_ply(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line) || line != "ply") throw MalformedHeader("missing 'ply' magic");
    if (!std::getline(in, line) || line != "format ascii 1.0")
        throw MalformedHeader("only ascii 1.0 supported, got '" + line + "'");

    size_t count = 0;
    std::vector<std::string> props;
    bool in_vertex = false, header_done = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "comment") continue;
        if (tok == "element") {
            std::string name;
            ls >> name >> count;
            if (name != "vertex") throw PropertyMismatch("unsupported element '" + name + "'");
            in_vertex = true;
        } else if (tok == "property") {
            if (!in_vertex) throw MalformedHeader("property before element");
            std::string type, name;
            ls >> type >> name;
            props.push_back(name);
        } else if (tok == "end_header") {
            header_done = true;
            break;
        } else {
            throw MalformedHeader("unexpected header line '" + line + "'");
        }
    }
    if (!header_done) throw MalformedHeader("missing end_header");

    auto has = [&](const char* n) {
        return std::find(props.begin(), props.end(), n) != props.end();
    };
    if (!has("x") || !has("y") || !has("z"))
        throw PropertyMismatch("vertex element must carry x y z");
    bool with_normals = has("nx") || has("ny") || has("nz");
    if (with_normals && !(has("nx") && has("ny") && has("nz")))
        throw PropertyMismatch("incomplete normal properties");
    bool with_colors = has("red") || has("green") || has("blue");
    if (with_colors && !(has("red") && has("green") && has("blue")))
        throw PropertyMismatch("incomplete color properties");

    PointCloud cloud;
    cloud.positions.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw TruncatedBody("vertex " + std::to_string(i));
        std::istringstream ls(line);
        double field;
        Eigen::Vector3d pos = Eigen::Vector3d::Zero(), nrm = Eigen::Vector3d::Zero(),
                        col = Eigen::Vector3d::Zero();
        for (const auto& name : props) {
            if (!(ls >> field)) throw TruncatedBody("vertex " + std::to_string(i));
            if (name == "x") pos.x() = field;
            else if (name == "y") pos.y() = field;
            else if (name == "z") pos.z() = field;
            else if (name == "nx") nrm.x() = field;
            else if (name == "ny") nrm.y() = field;
            else if (name == "nz") nrm.z() = field;
            else if (name == "red") col.x() = field / 255.0;
            else if (name == "green") col.y() = field / 255.0;
            else if (name == "blue") col.z() = field / 255.0;
        }
        cloud.positions.push_back(pos);
        if (with_normals) cloud.normals.push_back(nrm);
        if (with_colors) cloud.colors.push_back(col);
    }
    return cloud;
}

// ---------------------------------------------------------------------------
// PFM

void write_pfm(const std::string& path, const RasterF32& raster) {
    std::ostringstream out;
    out << "Pf\n" << raster.width << " " << raster.height << "\n-1.0\n";
    // Bottom-to-top row order per PFM convention.
    for (int y = raster.height - 1; y >= 0; --y)
        out.write(reinterpret_cast<const char*>(&raster.data[static_cast<size_t>(y) *
                                                             raster.width]),
                  static_cast<std::streamsize>(raster.width * sizeof(float)));
    write_file(path, out.str());
}

RasterF32 read_pfm(const std::string& path) {
    std::string blob = read_file(path);
    std::istringstream in(blob);
    std::string magic;
    in >> magic;
    if (magic != "Pf")
        throw BadMagic("expected grayscale 'Pf', got '" + magic + "'");
    int w = 0, h = 0;
    double scale = 0;
    if (!(in >> w >> h >> scale) || w <= 0 || h <= 0)
        throw MalformedHeader("bad PFM dimensions");
    if (!(scale < 0)) throw BadScale("big-endian PFM unsupported (scale >= 0)");
    in.get();  // single whitespace before the binary block
    size_t need = static_cast<size_t>(w) * h * sizeof(float);
    size_t offset = static_cast<size_t>(in.tellg());
    if (blob.size() - offset < need)
        throw SizeMismatch("PFM body holds " + std::to_string(blob.size() - offset) +
                           " bytes, need " + std::to_string(need));
    RasterF32 raster(w, h);
    for (int y = h - 1; y >= 0; --y) {
        std::memcpy(&raster.data[static_cast<size_t>(y) * w], blob.data() + offset,
                    w * sizeof(float));
        offset += w * sizeof(float);
    }
    return raster;
}

// ---------------------------------------------------------------------------
// PNM

namespace {

int pnm_token(std::istringstream& in) {
    // Skips whitespace and '#' comments.
    while (true) {
        int c = in.peek();
        if (c == '#') {
            std::string dummy;
            std::getline(in, dummy);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v;
    if (!(in >> v)) throw MalformedHeader("bad PNM header token");
    return v;
}

}  // namespace

void write_pnm(const std::string& path, const Image8& image) {
    std::ostringstream out;
    out << (image.channels == 3 ? "P6" : "P5") << "\n"
        << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.data.data()),
              static_cast<std::streamsize>(image.data.size()));
    write_file(path, out.str());
}

Image8 read_pnm(const std::string& path) {
    std::string blob = read_file(path);
    std::istringstream in(blob);
    std::string magic;
    in >> magic;
    int channels;
    if (magic == "P5") channels = 1;
    else if (magic == "P6") channels = 3;
    else throw BadMagic("expected P5/P6, got '" + magic + "'");
    int w = pnm_token(in), h = pnm_token(in), maxval = pnm_token(in);
    if (w <= 0 || h <= 0) throw MalformedHeader("bad PNM dimensions");
    if (maxval != 255) throw BadMaxval("maxval " + std::to_string(maxval));
    in.get();  // single whitespace before binary block
    size_t offset = static_cast<size_t>(in.tellg());
    Image8 image(w, h, channels);
    if (blob.size() - offset < image.data.size())
        throw TruncatedBody("PNM body too short");
    std::memcpy(image.data.data(), blob.data() + offset, image.data.size());
    return image;
}

// ---------------------------------------------------------------------------
// TUM

void write_tum(const std::string& path, const Trajectory& traj) {
    std::ostringstream out;
    out << "# timestamp tx ty tz qx qy qz qw\n";
    char buf[256];
    for (const auto& [ts, pose] : traj.entries) {
        std::snprintf(buf, sizeof(buf),
                      "%.9f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", ts, pose.t.x(),
                      pose.t.y(), pose.t.z(), pose.q.x(), pose.q.y(), pose.q.z(),
                      pose.q.w());
        out << buf;
    }
    write_file(path, out.str());
}

Trajectory read_tum(const std::string& path) {
    std::istringstream in(read_file(path));
    Trajectory traj;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::vector<std::string> tokens;
        std::string tok;
        while (ls >> tok) tokens.push_back(tok);
        if (tokens.size() != 8)
            throw BadFieldCount("line " + std::to_string(lineno) + ": expected 8 fields");
        double v[8];
        for (int i = 0; i < 8; ++i) {
            char* end = nullptr;
            v[i] = std::strtod(tokens[i].c_str(), &end);
            if (end == tokens[i].c_str() || *end != '\0' || !std::isfinite(v[i]))
                throw NonFiniteValue("line " + std::to_string(lineno) + " field " +
                                     std::to_string(i));
        }
        if (!traj.entries.empty() && v[0] <= traj.entries.back().first)
            throw NonMonotonicTime("line " + std::to_string(lineno));
        Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
        if (q.norm() < 1e-12) throw NonFiniteValue("zero quaternion at line " +
                                                   std::to_string(lineno));
        traj.entries.emplace_back(v[0], Pose(q, Eigen::Vector3d(v[1], v[2], v[3])));
    }
    return traj;
}

}  // namespace twin
