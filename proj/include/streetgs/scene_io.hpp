// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "streetgs/binary_io.hpp"
#include "streetgs/error.hpp"
#include "streetgs/gaussians.hpp"
#include "streetgs/geometry.hpp"
#include "streetgs/image.hpp"
#include "streetgs/lidar.hpp"
#include "streetgs/rng.hpp"

namespace streetgs {

namespace fs = std::filesystem;

struct TrainingFrame {
    std::int64_t frame_id = 0;
    Image image;
    RigidPose pose;       ///< camera-to-world
    fs::path lidar_path;  ///< empty when the frame has no sweep
    std::shared_ptr<const std::vector<Vec3>> lidar_points;  ///< in-memory sweep (LiDAR frame), used before lidar_path
};

struct Split {
    std::vector<std::int64_t> train;
    std::vector<std::int64_t> test;
    bool operator==(const Split&) const = default;
};

enum class SplitScheme { alternating, random };

/// Partition of frame indices [0, n) with |test| = round(drop_rate * n).
/// Alternating places test frames at floor((j + 1/2) n / |test|), i.e. every
/// (n / |test|)-th frame; random draws them with a seeded shuffle.
inline Split make_split(std::size_t n_frames, double drop_rate, SplitScheme scheme, std::uint64_t seed = 0) {
    if (!(drop_rate > 0.0 && drop_rate < 1.0)) throw InvalidRate("drop rate must lie in (0, 1)");
    const auto n_test = static_cast<std::size_t>(std::llround(drop_rate * static_cast<double>(n_frames)));
    if (n_frames > 0 && n_test >= n_frames) throw InvalidRate("drop rate leaves no training frame");
    std::vector<std::uint8_t> is_test(n_frames, 0);
    if (scheme == SplitScheme::alternating) {
        for (std::size_t j = 0; j < n_test; ++j) {
            const auto idx = static_cast<std::size_t>(std::floor((j + 0.5) * double(n_frames) / double(n_test)));
            is_test[idx] = 1;
        }
    } else {
        std::vector<std::size_t> idx(n_frames);
        for (std::size_t i = 0; i < n_frames; ++i) idx[i] = i;
        Rng rng(seed);
        for (std::size_t i = n_frames; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
        for (std::size_t j = 0; j < n_test; ++j) is_test[idx[j]] = 1;
    }
    Split split;
    for (std::size_t i = 0; i < n_frames; ++i)
        (is_test[i] ? split.test : split.train).push_back(static_cast<std::int64_t>(i));
    return split;
}

inline SplitScheme parse_split_scheme(const std::string& s) {
    if (s == "alternating") return SplitScheme::alternating;
    if (s == "random") return SplitScheme::random;
    throw ConfigError("unknown split scheme '" + s + "'");
}

struct DatasetManifest {
    fs::path root;
    Intrinsics intrinsics;
    std::vector<TrainingFrame> frames;  ///< strictly increasing frame_id
    Split split;                        ///< frame ids
    double drop_rate = 0.0;
    Eigen::Matrix4d lidar_to_camera = Eigen::Matrix4d::Identity();

    CameraView view(const TrainingFrame& f) const { return CameraView(intrinsics, f.pose); }

    const TrainingFrame& frame(std::int64_t id) const {
        auto it = std::lower_bound(frames.begin(), frames.end(), id,
                                   [](const TrainingFrame& f, std::int64_t v) { return f.frame_id < v; });
        if (it == frames.end() || it->frame_id != id) throw DimensionMismatch("unknown frame id " + std::to_string(id));
        return *it;
    }
};

/// Default LiDAR (x fwd, y left, z up) to camera (x right, y down, z fwd) axis change.
inline Eigen::Matrix4d default_lidar_to_camera() {
    Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
    m(0, 1) = -1.0;
    m(1, 2) = -1.0;
    m(2, 0) = 1.0;
    m(3, 3) = 1.0;
    return m;
}

inline std::string frame_stem(std::int64_t id) {
    std::ostringstream os;
    os << std::setw(6) << std::setfill('0') << id;
    return os.str();
}

namespace detail {

inline std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile(path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        lines.push_back(line);
    }
    return lines;
}

inline std::vector<double> parse_numbers(const std::string& line, const fs::path& source) {
    std::istringstream is(line);
    std::vector<double> v;
    double x;
    while (is >> x) v.push_back(x);
    if (!is.eof()) throw IoError("unparsable line in " + source.string() + ": " + line);
    return v;
}

}  // namespace detail

/// Reads a packed little-endian f32 (x y z intensity) sweep.
inline std::vector<Vec3> read_lidar_bin(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile(path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % 16 != 0) throw IoError("LiDAR file size is not a multiple of 16 bytes: " + path.string());
    binio::Reader r(bytes);
    std::vector<Vec3> pts(bytes.size() / 16);
    for (auto& p : pts) {
        const float x = r.read<float>(), y = r.read<float>(), z = r.read<float>();
        (void)r.read<float>();
        p = Vec3(x, y, z);
    }
    return pts;
}

inline void write_lidar_bin(const fs::path& path, const std::vector<Vec3>& points) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& p : points) {
        binio::write<float>(out, static_cast<float>(p.x()));
        binio::write<float>(out, static_cast<float>(p.y()));
        binio::write<float>(out, static_cast<float>(p.z()));
        binio::write<float>(out, 0.0f);
    }
}

/// Loads a frame's sweep and moves it into the world frame.
inline PointSweep load_sweep(const DatasetManifest& m, const TrainingFrame& f) {
    PointSweep sweep;
    sweep.source_frame = f.frame_id;
    if (f.lidar_path.empty() && !f.lidar_points) return sweep;
    Eigen::Matrix4d cam_to_world = Eigen::Matrix4d::Identity();
    cam_to_world.topLeftCorner<3, 3>() = f.pose.rotation_matrix();
    cam_to_world.topRightCorner<3, 1>() = f.pose.translation;
    const Eigen::Matrix4d lidar_to_world = cam_to_world * m.lidar_to_camera;
    const std::vector<Vec3> local = f.lidar_points ? *f.lidar_points : read_lidar_bin(f.lidar_path);
    for (const auto& p : local)
        sweep.points.push_back(lidar_to_world.topLeftCorner<3, 3>() * p + lidar_to_world.topRightCorner<3, 1>());
    return sweep;
}

inline Split read_split_file(const fs::path& path, const std::vector<TrainingFrame>& frames) {
    std::set<std::int64_t> known;
    for (const auto& f : frames) known.insert(f.frame_id);
    std::map<std::int64_t, std::string> assigned;
    for (const auto& line : detail::read_lines(path)) {
        std::istringstream is(line);
        std::int64_t id;
        std::string which;
        if (!(is >> id >> which) || (which != "train" && which != "test"))
            throw IoError("bad split line: " + line);
        if (!known.count(id)) throw DimensionMismatch("split names unknown frame " + std::to_string(id));
        auto [it, inserted] = assigned.emplace(id, which);
        if (!inserted && it->second != which)
            throw DimensionMismatch("frame " + std::to_string(id) + " is in both train and test");
    }
    Split split;
    for (const auto& f : frames) {
        auto it = assigned.find(f.frame_id);
        if (it == assigned.end()) throw DimensionMismatch("frame " + std::to_string(f.frame_id) + " is not in the split");
        (it->second == "train" ? split.train : split.test).push_back(f.frame_id);
    }
    return split;
}

/// Loads images/, poses.txt, intrinsics.txt, optional lidar/ and
/// lidar_to_camera.txt, and split.txt from `root`.
inline DatasetManifest load_dataset(const fs::path& root) {
    DatasetManifest m;
    m.root = root;
    if (!fs::is_directory(root)) throw MissingFile("dataset directory " + root.string());

    const auto k_lines = detail::read_lines(root / "intrinsics.txt");
    const auto k = detail::parse_numbers(k_lines.at(0), root / "intrinsics.txt");
    if (k.size() != 6) throw IoError("intrinsics.txt must hold fx fy cx cy width height");
    m.intrinsics = {k[0], k[1], k[2], k[3], static_cast<int>(k[4]), static_cast<int>(k[5])};
    m.intrinsics.validate();

    if (fs::exists(root / "lidar_to_camera.txt")) {
        const auto v = detail::parse_numbers(detail::read_lines(root / "lidar_to_camera.txt").at(0),
                                             root / "lidar_to_camera.txt");
        if (v.size() != 12) throw IoError("lidar_to_camera.txt must hold 12 numbers");
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) m.lidar_to_camera(r, c) = v[4 * r + c];
    } else {
        m.lidar_to_camera = default_lidar_to_camera();
    }

    for (const auto& line : detail::read_lines(root / "poses.txt")) {
        const auto v = detail::parse_numbers(line, root / "poses.txt");
        if (v.size() != 13) throw MalformedPose("pose line needs frame id + 12 numbers: " + line);
        TrainingFrame f;
        f.frame_id = static_cast<std::int64_t>(v[0]);
        Mat3 r;
        Vec3 t;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) r(i, j) = v[1 + 4 * i + j];
            t[i] = v[1 + 4 * i + 3];
        }
        f.pose = RigidPose::from_matrix(r, t);
        m.frames.push_back(std::move(f));
    }
    std::sort(m.frames.begin(), m.frames.end(),
              [](const TrainingFrame& a, const TrainingFrame& b) { return a.frame_id < b.frame_id; });
    for (std::size_t i = 1; i < m.frames.size(); ++i)
        if (m.frames[i].frame_id == m.frames[i - 1].frame_id)
            throw DimensionMismatch("duplicate frame id " + std::to_string(m.frames[i].frame_id));

    for (auto& f : m.frames) {
        const auto stem = frame_stem(f.frame_id);
        const fs::path img = root / "images" / (stem + ".png");
        if (!fs::exists(img)) throw MissingFile(img.string());
        f.image = read_png(img);
        if (f.image.width() != m.intrinsics.width || f.image.height() != m.intrinsics.height)
            throw DimensionMismatch(img.string() + " does not match intrinsics");
        const fs::path lidar = root / "lidar" / (stem + ".bin");
        if (fs::exists(lidar)) f.lidar_path = lidar;
    }

    m.split = read_split_file(root / "split.txt", m.frames);
    m.drop_rate = m.frames.empty() ? 0.0 : double(m.split.test.size()) / double(m.frames.size());
    return m;
}

/// Replaces the manifest's split with a generated one over its frame order.
inline void apply_split(DatasetManifest& m, double drop_rate, SplitScheme scheme, std::uint64_t seed) {
    const Split idx = make_split(m.frames.size(), drop_rate, scheme, seed);
    m.split = {};
    for (auto i : idx.train) m.split.train.push_back(m.frames[i].frame_id);
    for (auto i : idx.test) m.split.test.push_back(m.frames[i].frame_id);
    m.drop_rate = drop_rate;
}

/// Writes a dataset directory in the layout `load_dataset` reads.
/// Sweeps are taken from each frame's in-memory `lidar_points`.
inline void write_dataset(const fs::path& root, const Intrinsics& k, const std::vector<TrainingFrame>& frames,
                          const Split& split) {
    fs::create_directories(root / "images");
    fs::create_directories(root / "lidar");
    {
        std::ofstream o(root / "intrinsics.txt");
        o << std::setprecision(17) << k.fx << ' ' << k.fy << ' ' << k.cx << ' ' << k.cy << ' ' << k.width << ' '
          << k.height << '\n';
    }
    std::ofstream poses(root / "poses.txt");
    poses << std::setprecision(17);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto& f = frames[i];
        const Mat3 r = f.pose.rotation_matrix();
        poses << f.frame_id;
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) poses << ' ' << r(a, b);
            poses << ' ' << f.pose.translation[a];
        }
        poses << '\n';
        const auto stem = frame_stem(f.frame_id);
        write_png(root / "images" / (stem + ".png"), f.image);
        if (f.lidar_points && !f.lidar_points->empty())
            write_lidar_bin(root / "lidar" / (stem + ".bin"), *f.lidar_points);
    }
    std::ofstream s(root / "split.txt");
    for (auto id : split.train) s << id << " train\n";
    for (auto id : split.test) s << id << " test\n";
}

// ---------------------------------------------------------------------------
// Checkpoints: "SGDC" | u32 version | u64 count | u32 sh_degree | u32 active
// degree | u64 iteration | means | log_scales | rotations | opacities | sh
// (contiguous little-endian f32 columns).

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    GaussianCloud cloud;
    std::uint64_t iteration = 0;
};

namespace detail {

inline void atomic_write(const fs::path& path, const std::string& bytes) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline std::string read_all(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void check_magic(binio::Reader& r, std::string_view magic, std::uint32_t version, const fs::path& path) {
    if (r.remaining() < 8) throw IoError("truncated header in " + path.string());
    if (r.take(4) != magic) throw IoError("bad magic in " + path.string());
    const auto v = r.read<std::uint32_t>();
    if (v != version)
        throw VersionMismatch(path.string() + " has version " + std::to_string(v) + ", expected " +
                              std::to_string(version));
}

}  // namespace detail

inline std::string encode_cloud_columns(const GaussianCloud& c) {
    std::string out;
    binio::append_span<float>(out, c.means);
    binio::append_span<float>(out, c.log_scales);
    binio::append_span<float>(out, c.rotations);
    binio::append_span<float>(out, c.opacities);
    binio::append_span<float>(out, c.sh);
    return out;
}

inline void save_checkpoint(const GaussianCloud& cloud, std::uint64_t iteration, const fs::path& path) {
    if (!cloud.consistent()) throw ShapeMismatch("refusing to save an inconsistent cloud");
    std::string bytes = "SGDC";
    binio::append<std::uint32_t>(bytes, kCheckpointVersion);
    binio::append<std::uint64_t>(bytes, cloud.size());
    binio::append<std::uint32_t>(bytes, static_cast<std::uint32_t>(cloud.sh_degree));
    binio::append<std::uint32_t>(bytes, static_cast<std::uint32_t>(cloud.active_sh_degree));
    binio::append<std::uint64_t>(bytes, iteration);
    bytes += encode_cloud_columns(cloud);
    detail::atomic_write(path, bytes);
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const fs::path& source = "<memory>") {
    binio::Reader r(bytes);
    detail::check_magic(r, "SGDC", kCheckpointVersion, source);
    const auto n = r.read<std::uint64_t>();
    const auto degree = r.read<std::uint32_t>();
    const auto active = r.read<std::uint32_t>();
    Checkpoint ck;
    ck.iteration = r.read<std::uint64_t>();
    if (degree > static_cast<std::uint32_t>(sh::kMaxDegree) || active > degree)
        throw IoError("bad SH degree in " + source.string());
    const std::size_t floats_per = 3 + 3 + 4 + 1 + 3 * sh::coeff_count(int(degree));
    if (n > r.remaining() / (4 * floats_per)) throw IoError("truncated checkpoint " + source.string());
    ck.cloud = GaussianCloud(static_cast<int>(degree), n);
    ck.cloud.active_sh_degree = static_cast<int>(active);
    r.read_into<float>(ck.cloud.means);
    r.read_into<float>(ck.cloud.log_scales);
    r.read_into<float>(ck.cloud.rotations);
    r.read_into<float>(ck.cloud.opacities);
    r.read_into<float>(ck.cloud.sh);
    if (r.remaining() != 0) throw IoError("trailing bytes in checkpoint " + source.string());
    return ck;
}

inline Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(detail::read_all(path), path); }

// Colored point clouds: "SGDP" | u32 version | u64 count | positions | colors (f32).

inline constexpr std::uint32_t kPointCloudVersion = 1;

inline void save_point_cloud(const ColoredPointCloud& cloud, const fs::path& path) {
    std::string bytes = "SGDP";
    binio::append<std::uint32_t>(bytes, kPointCloudVersion);
    binio::append<std::uint64_t>(bytes, cloud.size());
    std::vector<float> buf;
    buf.reserve(3 * cloud.size());
    for (const auto& p : cloud.positions)
        for (int a = 0; a < 3; ++a) buf.push_back(static_cast<float>(p[a]));
    binio::append_span<float>(bytes, buf);
    buf.clear();
    for (const auto& c : cloud.colors)
        for (int a = 0; a < 3; ++a) buf.push_back(static_cast<float>(c[a]));
    binio::append_span<float>(bytes, buf);
    detail::atomic_write(path, bytes);
}

inline ColoredPointCloud load_point_cloud(const fs::path& path) {
    const std::string bytes = detail::read_all(path);
    binio::Reader r(bytes);
    detail::check_magic(r, "SGDP", kPointCloudVersion, path);
    const auto n = r.read<std::uint64_t>();
    if (n > r.remaining() / 24) throw IoError("truncated point cloud " + path.string());
    std::vector<float> pos(3 * n), col(3 * n);
    r.read_into<float>(pos);
    r.read_into<float>(col);
    ColoredPointCloud out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(Vec3(pos[3 * i], pos[3 * i + 1], pos[3 * i + 2]), Vec3(col[3 * i], col[3 * i + 1], col[3 * i + 2]));
    return out;
}

/// ASCII PLY of Gaussian means with their view-independent (DC) color.
inline void write_ply(const fs::path& path, const GaussianCloud& cloud) {
    std::ofstream o(path);
    if (!o) throw IoError("cannot write " + path.string());
    o << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto rgb = sh::eval(cloud.sh_coeffs(i), 0, Vec3::UnitZ());
        o << cloud.means[3 * i] << ' ' << cloud.means[3 * i + 1] << ' ' << cloud.means[3 * i + 2];
        for (int c = 0; c < 3; ++c) o << ' ' << std::lround(rgb[c] * 255.0);
        o << '\n';
    }
}

}  // namespace streetgs
