#include "bestview/posegeom.hpp"

#include "bestview/parallel.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace bestview::pose {

using nlohmann::json;

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;
// Angles this close to a bin edge are snapped onto it before flooring, so
// round-off in atan2/asin cannot push an exact boundary into the lower bin.
constexpr double kSnapDeg = 1e-9;

}  // namespace

RelativePose relative_pose(const CameraExtrinsics& ext_i, const CameraExtrinsics& ext_j) {
  if (!is_proper_rotation(ext_i.rotation) || !is_proper_rotation(ext_j.rotation)) {
    throw PoseError("relative_pose: extrinsics rotation is not a proper rotation");
  }
  RelativePose p;
  p.rotation_rel = ext_j.rotation * ext_i.rotation.transpose();
  const Eigen::Vector3d d = ext_j.center() - ext_i.center();
  const double len = d.norm();
  p.same_center = len < kSameCenterTolerance;
  if (!p.same_center) p.direction = ext_i.rotation * d / len;
  return p;
}

EulerZYX euler_zyx(const Eigen::Matrix3d& r) {
  EulerZYX e;
  const double cp = std::hypot(r(0, 0), r(1, 0));
  e.pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0)) * kDeg;
  if (cp < 1e-9) {
    e.roll = 0.0;
    e.yaw = std::atan2(-r(0, 1), r(1, 1)) * kDeg;
  } else {
    e.yaw = std::atan2(r(1, 0), r(0, 0)) * kDeg;
    e.roll = std::atan2(r(2, 1), r(2, 2)) * kDeg;
  }
  return e;
}

Eigen::Matrix3d rotation_from_euler(const EulerZYX& e) {
  using Eigen::AngleAxisd;
  using Eigen::Vector3d;
  return (AngleAxisd(e.yaw / kDeg, Vector3d::UnitZ()) * AngleAxisd(e.pitch / kDeg, Vector3d::UnitY()) *
          AngleAxisd(e.roll / kDeg, Vector3d::UnitX()))
      .toRotationMatrix();
}

DirectionAngles direction_angles(const Eigen::Vector3d& d) {
  return {std::atan2(d.y(), d.x()) * kDeg, std::asin(std::clamp(d.z(), -1.0, 1.0)) * kDeg};
}

BinLayout::BinLayout(int beta_deg) : beta_(beta_deg) {
  if (beta_deg <= 0 || 360 % beta_deg != 0 || 180 % beta_deg != 0) {
    throw PoseError("bin size " + std::to_string(beta_deg) + " must divide both 360 and 180");
  }
  const int full = 360 / beta_deg;
  const int half = 180 / beta_deg;
  classes_ = {full, half, full, full + 1, half + 1};
}

int BinLayout::total_classes() const {
  int s = 0;
  for (int c : classes_) s += c;
  return s;
}

int BinLayout::offset(Head h) const {
  int s = 0;
  for (std::size_t k = 0; k < static_cast<std::size_t>(h); ++k) s += classes_[k];
  return s;
}

int BinLayout::same_center_class(Head h) const {
  if (h != Head::azimuth && h != Head::elevation) throw PoseError("only direction heads have a same-center class");
  return classes(h) - 1;
}

int BinLayout::bin_of(Head h, double angle_deg) const {
  const double lo = is_full_circle(h) ? -180.0 : -90.0;
  const int n_bins = is_full_circle(h) ? 360 / beta_ : 180 / beta_;
  if (!std::isfinite(angle_deg)) throw PoseError("non-finite angle");
  double x = (angle_deg - lo) / beta_;
  const double nearest = std::round(x);
  if (std::abs(x - nearest) * beta_ < kSnapDeg) x = nearest;
  const int bin = static_cast<int>(std::floor(x));
  // Full-circle heads live on [-180, 180), so +180 wraps to the first bin.
  // Half-range heads are closed at +90, which lands in the last bin.
  if (is_full_circle(h)) return ((bin % n_bins) + n_bins) % n_bins;
  return std::clamp(bin, 0, n_bins - 1);
}

double BinLayout::center_of(Head h, int bin) const {
  const double lo = is_full_circle(h) ? -180.0 : -90.0;
  return lo + (bin + 0.5) * beta_;
}

int PoseLabel::head(Head h) const {
  switch (h) {
    case Head::yaw: return yaw;
    case Head::pitch: return pitch;
    case Head::roll: return roll;
    case Head::azimuth: return az;
    case Head::elevation: return el;
  }
  return 0;
}

PoseLabel discretize_pose(const RelativePose& pose, const BinLayout& layout) {
  const EulerZYX e = euler_zyx(pose.rotation_rel);
  PoseLabel l;
  l.yaw = layout.bin_of(Head::yaw, e.yaw);
  l.pitch = layout.bin_of(Head::pitch, e.pitch);
  l.roll = layout.bin_of(Head::roll, e.roll);
  l.same_center = pose.same_center;
  if (pose.same_center) {
    l.az = layout.same_center_class(Head::azimuth);
    l.el = layout.same_center_class(Head::elevation);
  } else {
    const DirectionAngles a = direction_angles(pose.direction);
    l.az = layout.bin_of(Head::azimuth, a.azimuth);
    l.el = layout.bin_of(Head::elevation, a.elevation);
  }
  return l;
}

PoseLabel discretize_pose(const RelativePose& pose, int beta_deg) { return discretize_pose(pose, BinLayout(beta_deg)); }

const PoseLabel& PoseLabelTable::at(std::size_t i, std::size_t j) const {
  if (i >= n_views || j >= n_views) {
    throw PoseError("clip " + clip_id + ": pair (" + std::to_string(i) + "," + std::to_string(j) + ") out of range");
  }
  return labels[i * n_views + j];
}

PoseLabelTable pose_label_table(const Clip& clip, int beta_deg) {
  const BinLayout layout(beta_deg);
  PoseLabelTable t;
  t.clip_id = clip.clip_id;
  t.beta_deg = beta_deg;
  t.n_views = clip.views.size();
  t.labels.reserve(t.n_views * t.n_views);
  for (const auto& vi : clip.views) {
    for (const auto& vj : clip.views) {
      t.labels.push_back(discretize_pose(relative_pose(vi.extrinsics, vj.extrinsics), layout));
    }
  }
  return t;
}

std::vector<PoseLabelTable> pose_label_tables(const Corpus& corpus, int beta_deg, int jobs) {
  BinLayout{beta_deg};  // validate once before fanning out
  std::vector<PoseLabelTable> out(corpus.size());
  parallel_for(corpus.size(), jobs, [&](std::size_t i) { out[i] = pose_label_table(corpus.clip(i), beta_deg); });
  return out;
}

void write_pose_labels(std::ostream& out, std::span<const PoseLabelTable> tables, const json* meta) {
  if (meta) out << json{{"_meta", *meta}}.dump() << '\n';
  for (const auto& t : tables) {
    json pairs = json::object();
    for (std::size_t i = 0; i < t.n_views; ++i) {
      for (std::size_t j = 0; j < t.n_views; ++j) {
        const PoseLabel& l = t.at(i, j);
        pairs[std::to_string(i) + "," + std::to_string(j)] = {
            {"yaw", l.yaw}, {"pitch", l.pitch}, {"roll", l.roll}, {"az", l.az}, {"el", l.el}, {"same_center", l.same_center}};
      }
    }
    out << json{{"clip_id", t.clip_id}, {"beta_deg", t.beta_deg}, {"n_views", t.n_views}, {"pairs", pairs}}.dump()
        << '\n';
  }
}

std::vector<PoseLabelTable> read_pose_labels(std::istream& in) {
  std::vector<PoseLabelTable> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "pose-label line " + std::to_string(lineno) + ": ";
    try {
      const json j = json::parse(line);
      if (j.contains("_meta")) continue;
      PoseLabelTable t;
      t.clip_id = j.at("clip_id").get<std::string>();
      t.beta_deg = j.at("beta_deg").get<int>();
      const BinLayout layout(t.beta_deg);
      const json& pairs = j.at("pairs");
      t.n_views = j.contains("n_views") ? j.at("n_views").get<std::size_t>()
                                        : static_cast<std::size_t>(std::llround(std::sqrt(pairs.size())));
      if (pairs.size() != t.n_views * t.n_views) {
        throw PoseError("expected " + std::to_string(t.n_views * t.n_views) + " pairs, got " +
                        std::to_string(pairs.size()));
      }
      t.labels.resize(pairs.size());
      for (std::size_t a = 0; a < t.n_views; ++a) {
        for (std::size_t b = 0; b < t.n_views; ++b) {
          const std::string key = std::to_string(a) + "," + std::to_string(b);
          if (!pairs.contains(key)) throw PoseError("missing pair " + key);
          const json& p = pairs.at(key);
          PoseLabel l{p.at("yaw").get<int>(), p.at("pitch").get<int>(), p.at("roll").get<int>(),
                      p.at("az").get<int>(),  p.at("el").get<int>(),    p.at("same_center").get<bool>()};
          for (std::size_t h = 0; h < kHeadCount; ++h) {
            const int v = l.head(static_cast<Head>(h));
            if (v < 0 || v >= layout.classes(static_cast<Head>(h))) throw PoseError("bin out of range in pair " + key);
          }
          t.labels[a * t.n_views + b] = l;
        }
      }
      out.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw PoseError(where + e.what());
    } catch (const PoseError& e) {
      throw PoseError(where + e.what());
    }
  }
  return out;
}

std::vector<PoseLabelTable> load_pose_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PoseError("cannot open pose-label file " + path.string());
  return read_pose_labels(in);
}

}  // namespace bestview::pose
