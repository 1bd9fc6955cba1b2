#include "bestview/selector/model.hpp"

#include "bestview/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bestview::selector {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd softmax(const VectorXd& v) {
  const VectorXd e = (v.array() - v.maxCoeff()).exp();
  return e / e.sum();
}

VectorXd affine(const Dense& d, const VectorXd& x) { return d.w * x + d.b; }

// Row n of the result is W f_n + b.
MatrixXd project(const Dense& d, const MatrixXd& features) {
  return (features * d.w.transpose()).rowwise() + d.b.transpose();
}

VectorXd concat_rows(const MatrixXd& h) {
  VectorXd x(h.size());
  for (Eigen::Index n = 0; n < h.rows(); ++n) x.segment(n * h.cols(), h.cols()) = h.row(n).transpose();
  return x;
}

struct HeadPass {
  VectorXd x;
  VectorXd a;
  VectorXd out;
};

HeadPass run_head(const Dense& l1, const Dense& l2, VectorXd x) {
  HeadPass p;
  p.a = affine(l1, x).array().tanh();
  p.out = affine(l2, p.a);
  p.x = std::move(x);
  return p;
}

// Backprop through l2(tanh(l1 x)) given d out; returns d x.
VectorXd back_head(const Dense& l1, const Dense& l2, const HeadPass& p, const VectorXd& d_out, Dense& g1, Dense& g2) {
  g2.w.noalias() += d_out * p.a.transpose();
  g2.b += d_out;
  const VectorXd dz = (l2.w.transpose() * d_out).array() * (1.0 - p.a.array().square());
  g1.w.noalias() += dz * p.x.transpose();
  g1.b += dz;
  return l1.w.transpose() * dz;
}

VectorXd pair_input(const MatrixXd& g, std::size_t i, std::size_t j) {
  const Eigen::Index h = g.cols();
  VectorXd x(2 * h);
  x.head(h) = g.row(static_cast<Eigen::Index>(i)).transpose();
  x.tail(h) = g.row(static_cast<Eigen::Index>(j)).transpose();
  return x;
}

void check_features(const SelectorParams& p, const MatrixXd& features) {
  if (static_cast<std::size_t>(features.rows()) != p.n_views || static_cast<std::size_t>(features.cols()) != p.f_dim) {
    throw SelectorError("feature matrix is " + std::to_string(features.rows()) + "x" + std::to_string(features.cols()) +
                        ", expected " + std::to_string(p.n_views) + "x" + std::to_string(p.f_dim));
  }
}

void check_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw SelectorError("non-finite " + what);
}

}  // namespace

SelectorParams SelectorParams::zeros(std::size_t f_dim, std::size_t h_dim, std::size_t n_views, int beta_deg) {
  if (f_dim == 0 || h_dim == 0 || n_views == 0) throw SelectorError("selector dimensions must be positive");
  SelectorParams p;
  p.f_dim = f_dim;
  p.h_dim = h_dim;
  p.n_views = n_views;
  p.beta_deg = beta_deg;
  const auto f = static_cast<Eigen::Index>(f_dim);
  const auto h = static_cast<Eigen::Index>(h_dim);
  const auto n = static_cast<Eigen::Index>(n_views);
  const auto c = static_cast<Eigen::Index>(p.layout().total_classes());
  p.layers = {Dense(h, f), Dense(h, n * h), Dense(n, h), Dense(h, f), Dense(h, 2 * h), Dense(c, h)};
  return p;
}

SelectorParams SelectorParams::init(std::size_t f_dim, std::size_t h_dim, std::size_t n_views, std::uint64_t seed,
                                    int beta_deg) {
  SelectorParams p = zeros(f_dim, h_dim, n_views, beta_deg);
  Rng rng(derive_seed(seed, 0x1417));
  for (auto& layer : p.layers) {
    const double a = std::sqrt(6.0 / static_cast<double>(layer.w.rows() + layer.w.cols()));
    for (Eigen::Index r = 0; r < layer.w.rows(); ++r)
      for (Eigen::Index k = 0; k < layer.w.cols(); ++k) layer.w(r, k) = rng.uniform(-a, a);
  }
  return p;
}

std::size_t SelectorParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.size());
  return n;
}

Eigen::VectorXd SelectorParams::flatten() const {
  VectorXd out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  for (const auto& l : layers) {
    for (Eigen::Index r = 0; r < l.w.rows(); ++r)
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) out(k++) = l.w(r, c);
    for (Eigen::Index r = 0; r < l.b.size(); ++r) out(k++) = l.b(r);
  }
  return out;
}

void SelectorParams::unflatten(const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count()) {
    throw SelectorError("flat parameter vector has " + std::to_string(flat.size()) + " entries, expected " +
                        std::to_string(parameter_count()));
  }
  Eigen::Index k = 0;
  for (auto& l : layers) {
    for (Eigen::Index r = 0; r < l.w.rows(); ++r)
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) l.w(r, c) = flat(k++);
    for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b(r) = flat(k++);
  }
}

bool SelectorParams::all_finite() const {
  return std::all_of(layers.begin(), layers.end(), [](const Dense& l) { return l.w.allFinite() && l.b.allFinite(); });
}

bool SelectorParams::same_shape(const SelectorParams& o) const {
  if (f_dim != o.f_dim || h_dim != o.h_dim || n_views != o.n_views || beta_deg != o.beta_deg) return false;
  for (std::size_t k = 0; k < kLayerCount; ++k) {
    if (layers[k].w.rows() != o.layers[k].w.rows() || layers[k].w.cols() != o.layers[k].w.cols() ||
        layers[k].b.size() != o.layers[k].b.size()) {
      return false;
    }
  }
  return true;
}

void SelectorParams::check_consistent() const {
  if (!same_shape(zeros(f_dim, h_dim, n_views, beta_deg))) throw SelectorError("selector layer shapes are inconsistent");
  if (!all_finite()) throw SelectorError("selector parameters contain non-finite values");
}

Eigen::MatrixXd clip_features(const Clip& clip) {
  const std::size_t f = clip.views.empty() ? 0 : clip.views[0].feature.size();
  MatrixXd m(static_cast<Eigen::Index>(clip.views.size()), static_cast<Eigen::Index>(f));
  for (std::size_t n = 0; n < clip.views.size(); ++n) {
    if (clip.views[n].feature.size() != f) throw SelectorError("clip " + clip.clip_id + ": ragged features");
    for (std::size_t k = 0; k < f; ++k) m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) = clip.views[n].feature[k];
  }
  return m;
}

ClipExample make_example(const Clip& clip, const ViewSet& labels, pose::PoseLabelTable poses) {
  if (labels.empty()) throw SelectorError("clip " + clip.clip_id + ": empty pseudo-label set");
  if (*labels.rbegin() >= clip.views.size()) throw SelectorError("clip " + clip.clip_id + ": label index out of range");
  if (poses.n_views != clip.views.size()) {
    throw SelectorError("clip " + clip.clip_id + ": pose table covers " + std::to_string(poses.n_views) + " views, clip has " +
                        std::to_string(clip.views.size()));
  }
  return {clip.clip_id, clip_features(clip), {labels.begin(), labels.end()}, std::move(poses)};
}

Eigen::VectorXd forward_view(const SelectorParams& p, const Eigen::MatrixXd& features) {
  check_features(p, features);
  return run_head(p.head_w1(), p.head_w2(), concat_rows(project(p.proj_w(), features))).out;
}

Eigen::VectorXd forward_pose(const SelectorParams& p, const Eigen::VectorXd& f_i, const Eigen::VectorXd& f_j) {
  if (static_cast<std::size_t>(f_i.size()) != p.f_dim || static_cast<std::size_t>(f_j.size()) != p.f_dim) {
    throw SelectorError("pose input feature has the wrong dimension");
  }
  VectorXd x(2 * static_cast<Eigen::Index>(p.h_dim));
  x << affine(p.proj_p(), f_i), affine(p.proj_p(), f_j);
  return run_head(p.head_p1(), p.head_p2(), std::move(x)).out;
}

double cross_entropy(const Eigen::VectorXd& logits, std::size_t k) {
  if (k >= static_cast<std::size_t>(logits.size())) throw SelectorError("class index out of range");
  // Written in logit differences only, so a constant offset on every logit
  // leaves the result bit-identical whenever the offset logits are exact.
  const double m = logits.maxCoeff();
  return (m - logits(static_cast<Eigen::Index>(k))) + std::log((logits.array() - m).exp().sum());
}

std::size_t easiest_label(const Eigen::VectorXd& logits, std::span<const std::size_t> labels) {
  if (labels.empty()) throw SelectorError("empty label set");
  std::vector<std::size_t> sorted(labels.begin(), labels.end());
  std::sort(sorted.begin(), sorted.end());
  std::size_t best = sorted.front();
  for (std::size_t b : sorted) {
    if (b >= static_cast<std::size_t>(logits.size())) throw SelectorError("label index out of range");
    // CE differs across labels only through the label's own logit.
    if (logits(static_cast<Eigen::Index>(b)) > logits(static_cast<Eigen::Index>(best))) best = b;
  }
  return best;
}

double loss_view(const Eigen::VectorXd& logits, std::span<const std::size_t> labels) {
  return cross_entropy(logits, easiest_label(logits, labels));
}

double loss_pose(std::span<const Eigen::VectorXd> pair_logits, const pose::PoseLabelTable& table,
                 const pose::BinLayout& layout) {
  const std::size_t n = table.n_views;
  if (pair_logits.size() != n * n) {
    throw SelectorError("loss_pose: " + std::to_string(pair_logits.size()) + " pair logits for " + std::to_string(n) +
                        " views");
  }
  double sum = 0.0;
  for (std::size_t ij = 0; ij < n * n; ++ij) {
    const VectorXd& o = pair_logits[ij];
    if (o.size() != layout.total_classes()) throw SelectorError("loss_pose: wrong logit width");
    const pose::PoseLabel& lab = table.labels[ij];
    double pair = 0.0;
    for (std::size_t h = 0; h < pose::kHeadCount; ++h) {
      const auto head = static_cast<pose::Head>(h);
      pair += cross_entropy(o.segment(layout.offset(head), layout.classes(head)), static_cast<std::size_t>(lab.head(head)));
    }
    sum += pair / static_cast<double>(pose::kHeadCount);
  }
  return sum / static_cast<double>(n * n);
}

LossParts total_loss(const SelectorParams& p, const ClipExample& ex, double w) {
  return loss_and_gradient(p, std::span<const ClipExample>(&ex, 1), w, nullptr);
}

LossParts loss_and_gradient(const SelectorParams& p, std::span<const ClipExample> batch, double w,
                            SelectorParams* grad) {
  if (batch.empty()) throw SelectorError("empty batch");
  const pose::BinLayout layout = p.layout();
  if (grad) *grad = SelectorParams::zeros(p.f_dim, p.h_dim, p.n_views, p.beta_deg);
  const double scale = 1.0 / static_cast<double>(batch.size());
  const auto n = p.n_views;
  const auto h = static_cast<Eigen::Index>(p.h_dim);
  const double pair_weight = 1.0 / (static_cast<double>(pose::kHeadCount) * static_cast<double>(n * n));

  LossParts total;
  for (const ClipExample& ex : batch) {
    check_features(p, ex.features);
    if (ex.poses.n_views != n) throw SelectorError("clip " + ex.clip_id + ": pose table size mismatch");

    // View branch.
    const MatrixXd hw = project(p.proj_w(), ex.features);
    const HeadPass view = run_head(p.head_w1(), p.head_w2(), concat_rows(hw));
    const std::size_t easiest = easiest_label(view.out, ex.labels);
    const double lw = cross_entropy(view.out, easiest);
    check_finite(lw, "view loss in clip " + ex.clip_id);

    // Pose branch over all ordered pairs.
    const MatrixXd g = project(p.proj_p(), ex.features);
    std::vector<HeadPass> pairs;
    pairs.reserve(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) pairs.push_back(run_head(p.head_p1(), p.head_p2(), pair_input(g, i, j)));
    std::vector<VectorXd> outs;
    outs.reserve(pairs.size());
    for (const auto& pp : pairs) outs.push_back(pp.out);
    const double lp = loss_pose(outs, ex.poses, layout);
    check_finite(lp, "pose loss in clip " + ex.clip_id);

    total.lw += scale * lw;
    total.lp += scale * lp;

    if (!grad) continue;
    VectorXd d_logits = softmax(view.out);
    d_logits(static_cast<Eigen::Index>(easiest)) -= 1.0;
    d_logits *= scale;
    const VectorXd dx = back_head(p.head_w1(), p.head_w2(), view, d_logits, grad->head_w1(), grad->head_w2());
    for (std::size_t v = 0; v < n; ++v) {
      const auto vi = static_cast<Eigen::Index>(v);
      const VectorXd dh = dx.segment(vi * h, h);
      grad->proj_w().w.noalias() += dh * ex.features.row(vi);
      grad->proj_w().b += dh;
    }

    if (w == 0.0) continue;
    MatrixXd dg = MatrixXd::Zero(g.rows(), g.cols());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const HeadPass& pp = pairs[i * n + j];
        const pose::PoseLabel& lab = ex.poses.labels[i * n + j];
        VectorXd d_out(pp.out.size());
        for (std::size_t hd = 0; hd < pose::kHeadCount; ++hd) {
          const auto head = static_cast<pose::Head>(hd);
          const int off = layout.offset(head);
          const int cls = layout.classes(head);
          VectorXd s = softmax(pp.out.segment(off, cls));
          s(lab.head(head)) -= 1.0;
          d_out.segment(off, cls) = s;
        }
        d_out *= scale * w * pair_weight;
        const VectorXd dxp = back_head(p.head_p1(), p.head_p2(), pp, d_out, grad->head_p1(), grad->head_p2());
        dg.row(static_cast<Eigen::Index>(i)) += dxp.head(h).transpose();
        dg.row(static_cast<Eigen::Index>(j)) += dxp.tail(h).transpose();
      }
    }
    grad->proj_p().w.noalias() += dg.transpose() * ex.features;
    grad->proj_p().b += dg.colwise().sum().transpose();
  }
  total.ls = total.lw + w * total.lp;
  if (grad && !grad->all_finite()) throw SelectorError("non-finite gradient");
  return total;
}

SelectorParams gradient(const SelectorParams& p, std::span<const ClipExample> batch, double w) {
  SelectorParams g;
  loss_and_gradient(p, batch, w, &g);
  return g;
}

GradCheckResult check_gradient(const SelectorParams& p, std::span<const ClipExample> batch, double w, double eps) {
  const VectorXd analytic = gradient(p, batch, w).flatten();
  const VectorXd theta = p.flatten();
  SelectorParams probe = p;
  GradCheckResult r;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    VectorXd t = theta;
    t(k) = theta(k) + eps;
    probe.unflatten(t);
    const double up = loss_and_gradient(probe, batch, w, nullptr).ls;
    t(k) = theta(k) - eps;
    probe.unflatten(t);
    const double down = loss_and_gradient(probe, batch, w, nullptr).ls;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic(k);
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-7});
    if (err > r.max_relative_error || k == 0) r = {err, static_cast<std::size_t>(k), a, numeric};
  }
  return r;
}

Selection select_from_logits(const Eigen::VectorXd& logits) {
  if (logits.size() == 0) throw SelectorError("no logits to select from");
  Selection s;
  s.order.resize(static_cast<std::size_t>(logits.size()));
  std::iota(s.order.begin(), s.order.end(), 0);
  std::stable_sort(s.order.begin(), s.order.end(), [&](std::size_t a, std::size_t b) {
    return logits(static_cast<Eigen::Index>(a)) > logits(static_cast<Eigen::Index>(b));
  });
  s.best = s.order.front();
  return s;
}

Selection select(const SelectorParams& p, const Eigen::MatrixXd& features) {
  return select_from_logits(forward_view(p, features));
}

}  // namespace bestview::selector
