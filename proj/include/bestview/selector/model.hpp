#pragma once

#include "bestview/corpus.hpp"
#include "bestview/posegeom.hpp"
#include "bestview/pseudolabel.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bestview::selector {

class SelectorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Affine layer y = W x + b.
struct Dense {
  Eigen::MatrixXd w;
  Eigen::VectorXd b;

  Dense() = default;
  Dense(Eigen::Index out, Eigen::Index in) : w(Eigen::MatrixXd::Zero(out, in)), b(Eigen::VectorXd::Zero(out)) {}
  Eigen::Index size() const { return w.size() + b.size(); }
  bool operator==(const Dense&) const = default;
};

inline constexpr std::size_t kLayerCount = 6;
inline constexpr std::array<const char*, kLayerCount> kLayerNames{"proj_w", "head_w1", "head_w2",
                                                                  "proj_p", "head_p1", "head_p2"};

/// View network: h_n = proj_w f_n, logits = head_w2 tanh(head_w1 [h_1..h_N]).
/// Pose network: g_n = proj_p f_n, logits = head_p2 tanh(head_p1 [g_i; g_j]),
/// split into the five pose heads of the bin layout.
struct SelectorParams {
  std::size_t f_dim = 0;
  std::size_t h_dim = 0;
  std::size_t n_views = 0;
  int beta_deg = 30;
  std::array<Dense, kLayerCount> layers;

  Dense& proj_w() { return layers[0]; }
  Dense& head_w1() { return layers[1]; }
  Dense& head_w2() { return layers[2]; }
  Dense& proj_p() { return layers[3]; }
  Dense& head_p1() { return layers[4]; }
  Dense& head_p2() { return layers[5]; }
  const Dense& proj_w() const { return layers[0]; }
  const Dense& head_w1() const { return layers[1]; }
  const Dense& head_w2() const { return layers[2]; }
  const Dense& proj_p() const { return layers[3]; }
  const Dense& head_p1() const { return layers[4]; }
  const Dense& head_p2() const { return layers[5]; }

  pose::BinLayout layout() const { return pose::BinLayout(beta_deg); }

  /// All weights zero, dimensions set.
  static SelectorParams zeros(std::size_t f_dim, std::size_t h_dim, std::size_t n_views, int beta_deg = 30);
  /// Glorot-uniform weights, zero biases.
  static SelectorParams init(std::size_t f_dim, std::size_t h_dim, std::size_t n_views, std::uint64_t seed,
                             int beta_deg = 30);

  std::size_t parameter_count() const;
  /// Layers in order, each W row-major then b.
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& flat);
  bool all_finite() const;
  bool same_shape(const SelectorParams& o) const;
  void check_consistent() const;
  bool operator==(const SelectorParams&) const = default;
};

/// One clip prepared for the selector.
struct ClipExample {
  std::string clip_id;
  Eigen::MatrixXd features;          // n_views x f_dim
  std::vector<std::size_t> labels;   // sorted, non-empty
  pose::PoseLabelTable poses;
};

ClipExample make_example(const Clip& clip, const ViewSet& labels, pose::PoseLabelTable poses);
Eigen::MatrixXd clip_features(const Clip& clip);

Eigen::VectorXd forward_view(const SelectorParams& p, const Eigen::MatrixXd& features);
Eigen::VectorXd forward_pose(const SelectorParams& p, const Eigen::VectorXd& f_i, const Eigen::VectorXd& f_j);

/// Cross-entropy of softmax(logits) at class k, natural log.
double cross_entropy(const Eigen::VectorXd& logits, std::size_t k);

/// Label with the smallest cross-entropy; ties go to the lowest index.
std::size_t easiest_label(const Eigen::VectorXd& logits, std::span<const std::size_t> labels);

/// Min over labels of the cross-entropy.
double loss_view(const Eigen::VectorXd& logits, std::span<const std::size_t> labels);

/// pair_logits holds N*N concatenated head logits in row-major pair order.
double loss_pose(std::span<const Eigen::VectorXd> pair_logits, const pose::PoseLabelTable& table,
                 const pose::BinLayout& layout);

struct LossParts {
  double ls = 0.0;
  double lw = 0.0;
  double lp = 0.0;
};

LossParts total_loss(const SelectorParams& p, const ClipExample& ex, double w);

/// Mean loss over the batch; when grad is non-null it receives the exact
/// gradient of the mean L^S (min-CE gradient through the easiest label only).
LossParts loss_and_gradient(const SelectorParams& p, std::span<const ClipExample> batch, double w,
                            SelectorParams* grad);

SelectorParams gradient(const SelectorParams& p, std::span<const ClipExample> batch, double w);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central differences on every parameter; relative error is
/// |a - n| / max(|a|, |n|, 1e-7).
GradCheckResult check_gradient(const SelectorParams& p, std::span<const ClipExample> batch, double w,
                               double eps = 1e-5);

struct Selection {
  std::size_t best = 0;
  std::vector<std::size_t> order;  // descending logit, ties by index
};

Selection select_from_logits(const Eigen::VectorXd& logits);
Selection select(const SelectorParams& p, const Eigen::MatrixXd& features);

}  // namespace bestview::selector
