#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pmsfm/backend.h"
#include "pmsfm/geometry.h"

namespace pmsfm {

// LPMF: "LPMF", u32 version (1), u32 H, u32 W, u32 flags (bit0 confidence,
// bit1 mask), then little-endian row-major H*W*3 float32 points,
// [H*W float32 confidences], [H*W u8 mask]. NaN points only where mask == 0.
inline constexpr std::uint32_t kLpmfVersion = 1;
inline constexpr std::uint32_t kLpmfHasConfidence = 1u << 0;
inline constexpr std::uint32_t kLpmfHasMask = 1u << 1;

struct LpmfRecord {
  Pointmap points;
  std::optional<ConfidenceMap> confidence;
};

void write_lpmf(std::ostream& os, const Pointmap& points, const ConfidenceMap* confidence);
LpmfRecord read_lpmf(std::istream& is);

void write_lpmf_file(const std::filesystem::path& path, const Pointmap& points, const ConfidenceMap* confidence);
LpmfRecord read_lpmf_file(const std::filesystem::path& path);

/// An edge file is two consecutive LPMF records: image i then image j, both
/// in frame i, each with confidence and mask.
void write_edge_file(const std::filesystem::path& path, const EdgeDecode& decode);
EdgeDecode read_edge_file(const std::filesystem::path& path);
/// Reads only the two headers: {(H_i, W_i), (H_j, W_j)}.
std::pair<std::pair<int, int>, std::pair<int, int>> read_edge_shapes(const std::filesystem::path& path);

// LEMB: "LEMB", u32 version (1), u32 n, u32 d, n*d float32.
void write_embeddings(const std::filesystem::path& path, std::span<const Eigen::VectorXd> embeddings);
std::vector<Eigen::VectorXd> read_embeddings(const std::filesystem::path& path);

/// One line of a poses file: `id qw qx qy qz tx ty tz f`, camera-to-world,
/// Hamilton quaternion.
struct PoseRecord {
  int id = 0;
  RigidTransform pose;
  double focal = 0.0;
};

void write_poses(std::ostream& os, std::span<const PoseRecord> poses);
/// Throws FormatError on malformed lines or quaternions off unit norm by
/// more than 1e-6.
std::vector<PoseRecord> read_poses(std::istream& is);
void write_poses_file(const std::filesystem::path& path, std::span<const PoseRecord> poses);
std::vector<PoseRecord> read_poses_file(const std::filesystem::path& path);

/// Binary little-endian PLY with float x, y, z, confidence vertex properties.
void write_ply(const std::filesystem::path& path, std::span<const Vec3> points, std::span<const double> confidence);

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<double> confidence;  // empty if the file carries none
};
/// Reads ascii or binary_little_endian vertex clouds with scalar properties.
PointCloud read_ply(const std::filesystem::path& path);

}  // namespace pmsfm
