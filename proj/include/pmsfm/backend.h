#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pmsfm/geometry.h"

namespace pmsfm {

enum class Trajectory { kOrbit, kForward, kRandomWander };

Trajectory parse_trajectory(const std::string& name);
std::string to_string(Trajectory t);

struct SynthConfig {
  Trajectory trajectory = Trajectory::kOrbit;
  int n = 8;
  int height = 48;
  int width = 64;
  std::uint64_t seed = 0;
  double fov_deg = 60.0;
  double orbit_radius = 1.5;
  /// Angular span covered by the orbit, in degrees.
  double orbit_arc_deg = 360.0;
  /// Share of each image masked out as a smooth invalid blob.
  double invalid_fraction = 0.05;
};

/// One ground-truth view: world-frame pointmap, camera-to-world pose and
/// intrinsics.
struct GroundTruthView {
  Pointmap points;
  RigidTransform pose;
  Intrinsics intrinsics;
};

struct GroundTruthScene {
  std::vector<GroundTruthView> images;
  /// RMS distance of camera centers from their centroid (falls back to the
  /// RMS spread of the valid points when all cameras coincide).
  double scale = 1.0;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(images.size()); }
};

/// Renders a closed, smoothly perturbed star-shaped surface from every camera
/// of the requested trajectory. Deterministic in the seed.
GroundTruthScene synth_scene(const SynthConfig& cfg);

/// RMS distance of camera centers from their centroid.
double camera_spread(std::span<const RigidTransform> poses);

/// Pairwise decode of edge (i, j): the pointmaps of image i and image j, both
/// expressed in camera i's frame, with their confidences.
struct EdgeDecode {
  Pointmap ref_points;       // image i in frame i
  Pointmap other_points;     // image j in frame i
  ConfidenceMap ref_conf;
  ConfidenceMap other_conf;
};

class DecoderBackend {
 public:
  virtual ~DecoderBackend() = default;
  virtual int size() const = 0;
  /// (height, width) of image i.
  virtual std::pair<int, int> shape(int i) const = 0;
  /// Must be deterministic and safe to call concurrently for distinct edges.
  virtual EdgeDecode decode(int i, int j) const = 0;
};

struct OracleNoise {
  /// Noise standard deviation as a fraction of the scene scale.
  double sigma = 0.0;
  /// Confidence peak above the floor of 1.
  double kappa = 10.0;
  std::uint64_t seed = 0;
};

/// Serves ground-truth decodes with additive Gaussian noise and confidences
/// that shrink as the sampled noise grows.
class OracleBackend final : public DecoderBackend {
 public:
  OracleBackend(std::shared_ptr<const GroundTruthScene> scene, OracleNoise noise);

  int size() const override { return scene_->size(); }
  std::pair<int, int> shape(int i) const override;
  EdgeDecode decode(int i, int j) const override;

  const GroundTruthScene& scene() const { return *scene_; }

 private:
  std::shared_ptr<const GroundTruthScene> scene_;
  OracleNoise noise_;
  std::vector<RigidTransform> world_to_cam_;
};

EdgeDecode oracle_decode(const GroundTruthScene& scene, int i, int j, const OracleNoise& noise);

/// Serves decodes stored as `edge_<i>_<j>.lpmf` files.
class FileBackend final : public DecoderBackend {
 public:
  explicit FileBackend(std::filesystem::path dir);

  int size() const override { return static_cast<int>(shapes_.size()); }
  std::pair<int, int> shape(int i) const override { return shapes_.at(i); }
  /// Throws MissingEdge if the file is absent, FormatError if it is corrupt.
  EdgeDecode decode(int i, int j) const override;

 private:
  std::filesystem::path dir_;
  std::vector<std::pair<int, int>> shapes_;
};

std::unique_ptr<DecoderBackend> load_pointmaps(const std::filesystem::path& dir);

std::string edge_filename(int i, int j);

}  // namespace pmsfm
