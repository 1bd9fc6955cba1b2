#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace bestview {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for malformed manifest text; carries the 1-based line number.
class ManifestError : public CorpusError {
 public:
  ManifestError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// World-to-camera transform: x_cam = rotation * x_world + translation.
struct CameraExtrinsics {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
  bool operator==(const CameraExtrinsics&) const = default;
};

inline constexpr double kRotationTolerance = 1e-6;

/// True when the matrix is orthonormal with determinant +1 within tolerance.
bool is_proper_rotation(const Eigen::Matrix3d& r, double tol = kRotationTolerance);

struct ViewRecord {
  std::string view_id;
  bool is_ego = false;
  std::vector<double> feature;
  CameraExtrinsics extrinsics;
  std::map<std::string, std::string> captions;  // captioner_id -> predicted narration

  bool operator==(const ViewRecord&) const = default;
};

struct Clip {
  std::string clip_id;
  std::vector<ViewRecord> views;
  std::string narration;  // view-agnostic ground truth

  std::size_t view_count() const { return views.size(); }
  std::size_t ego_index() const;
  bool operator==(const Clip&) const = default;
};

enum class SplitTag { train, val, test };

std::string to_string(SplitTag tag);

/// An immutable, validated multi-view clip collection. Every constructor
/// path runs the full invariant check, so a Corpus value is always valid.
class Corpus {
 public:
  Corpus(std::vector<std::string> captioner_ids, std::size_t f_dim, std::vector<Clip> clips,
         std::optional<SplitTag> split = std::nullopt);

  const std::vector<Clip>& clips() const { return clips_; }
  const std::vector<std::string>& captioner_ids() const { return captioner_ids_; }
  std::size_t f_dim() const { return f_dim_; }
  std::optional<SplitTag> split() const { return split_; }
  std::size_t size() const { return clips_.size(); }
  bool empty() const { return clips_.empty(); }

  /// Views per clip; 0 for an empty corpus.
  std::size_t view_count() const { return clips_.empty() ? 0 : clips_.front().views.size(); }

  const Clip& clip(std::size_t i) const { return clips_.at(i); }
  const Clip* find(const std::string& clip_id) const;

  bool operator==(const Corpus&) const = default;

 private:
  std::vector<std::string> captioner_ids_;
  std::size_t f_dim_;
  std::vector<Clip> clips_;
  std::optional<SplitTag> split_;
};

/// Parse the JSON-lines manifest: a header line then one clip per line.
Corpus parse_manifest(std::istream& in);
Corpus load_manifest(const std::filesystem::path& path);

/// Writes the header line (plus an optional "_meta" object) and one line per clip.
void save_manifest(const Corpus& corpus, std::ostream& out, const nlohmann::json* meta = nullptr);
void save_manifest(const Corpus& corpus, const std::filesystem::path& path,
                   const nlohmann::json* meta = nullptr);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct CorpusSplits {
  Corpus train;
  Corpus val;
  Corpus test;
};

/// Seeded shuffle then floor allocation of val/test sizes, remainder to train.
CorpusSplits split_corpus(const Corpus& corpus, SplitFractions fractions, std::uint64_t seed);

}  // namespace bestview
