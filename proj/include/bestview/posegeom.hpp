#pragma once

#include "bestview/corpus.hpp"

#include <Eigen/Core>

#include <array>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bestview::pose {

class PoseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kSameCenterTolerance = 1e-9;

/// Camera j relative to camera i. direction is the unit vector from c_i to
/// c_j in camera i's frame, zero when the centers coincide.
struct RelativePose {
  Eigen::Matrix3d rotation_rel = Eigen::Matrix3d::Identity();
  Eigen::Vector3d direction = Eigen::Vector3d::Zero();
  bool same_center = true;
};

RelativePose relative_pose(const CameraExtrinsics& ext_i, const CameraExtrinsics& ext_j);

/// Intrinsic Z-Y-X angles in degrees: R = Rz(yaw) * Ry(pitch) * Rx(roll).
struct EulerZYX {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
};

/// At |pitch| = 90 the decomposition is not unique; roll is set to 0 there.
EulerZYX euler_zyx(const Eigen::Matrix3d& r);
Eigen::Matrix3d rotation_from_euler(const EulerZYX& e);

/// Azimuth atan2(y, x) in [-180, 180) and elevation asin(z) in [-90, 90].
struct DirectionAngles {
  double azimuth = 0.0;
  double elevation = 0.0;
};
DirectionAngles direction_angles(const Eigen::Vector3d& unit_dir);

enum class Head { yaw = 0, pitch, roll, azimuth, elevation };
inline constexpr std::size_t kHeadCount = 5;

/// Class counts per head for a bin size. The two direction heads carry one
/// extra class for coincident camera centers.
class BinLayout {
 public:
  explicit BinLayout(int beta_deg = 30);

  int beta() const { return beta_; }
  int classes(Head h) const { return classes_[static_cast<std::size_t>(h)]; }
  const std::array<int, kHeadCount>& classes() const { return classes_; }
  int total_classes() const;
  /// Offset of a head's block inside the concatenated logit vector.
  int offset(Head h) const;
  int same_center_class(Head h) const;
  bool is_full_circle(Head h) const { return h == Head::yaw || h == Head::roll || h == Head::azimuth; }

  int bin_of(Head h, double angle_deg) const;
  double center_of(Head h, int bin) const;

 private:
  int beta_;
  std::array<int, kHeadCount> classes_{};
};

struct PoseLabel {
  int yaw = 0;
  int pitch = 0;
  int roll = 0;
  int az = 0;
  int el = 0;
  bool same_center = false;

  int head(Head h) const;
  bool operator==(const PoseLabel&) const = default;
};

PoseLabel discretize_pose(const RelativePose& pose, const BinLayout& layout);
PoseLabel discretize_pose(const RelativePose& pose, int beta_deg = 30);

/// Labels for all N*N ordered view pairs, including the diagonal.
struct PoseLabelTable {
  std::string clip_id;
  int beta_deg = 30;
  std::size_t n_views = 0;
  std::vector<PoseLabel> labels;  // row-major, index i * n_views + j

  const PoseLabel& at(std::size_t i, std::size_t j) const;
  bool operator==(const PoseLabelTable&) const = default;
};

PoseLabelTable pose_label_table(const Clip& clip, int beta_deg = 30);
std::vector<PoseLabelTable> pose_label_tables(const Corpus& corpus, int beta_deg = 30, int jobs = 1);

void write_pose_labels(std::ostream& out, std::span<const PoseLabelTable> tables,
                       const nlohmann::json* meta = nullptr);
std::vector<PoseLabelTable> read_pose_labels(std::istream& in);
std::vector<PoseLabelTable> load_pose_labels(const std::filesystem::path& path);

}  // namespace bestview::pose
