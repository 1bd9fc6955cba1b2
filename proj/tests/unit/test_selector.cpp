#include "doctest.h"

#include "bestview/selector/model.hpp"
#include "bestview/selector/train.hpp"
#include "bestview/synthgen.hpp"

#include "../oracles/selector_oracle.hpp"
#include "selector_support.hpp"

#include <cmath>
#include <sstream>

using namespace bestview;
using namespace bestview::selector;
using testing::random_example;
using testing::random_params;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double d : v) x(k++) = d;
  return x;
}

std::vector<Eigen::VectorXd> all_pair_logits(const SelectorParams& p, const ClipExample& ex) {
  std::vector<Eigen::VectorXd> out;
  for (Eigen::Index i = 0; i < ex.features.rows(); ++i)
    for (Eigen::Index j = 0; j < ex.features.rows(); ++j)
      out.push_back(forward_pose(p, ex.features.row(i).transpose(), ex.features.row(j).transpose()));
  return out;
}

struct Pipeline {
  std::vector<ClipExample> train, val, test;
  std::map<std::string, std::size_t> planted;
};

Pipeline separable_pipeline(std::uint64_t seed) {
  synth::SynthConfig cfg;
  cfg.n_clips = 300;
  cfg.feature_snr = 20.0;
  cfg.seed = seed;
  const auto s = synth::generate(cfg);
  const auto labels = label_corpus(s.corpus);
  const auto tables = pose::pose_label_tables(s.corpus);
  auto all = build_examples(s.corpus, labels.labels, tables);
  Pipeline p;
  p.planted = s.planted;
  p.train.assign(all.begin(), all.begin() + 200);
  p.val.assign(all.begin() + 200, all.begin() + 250);
  p.test.assign(all.begin() + 250, all.end());
  return p;
}

}  // namespace

TEST_CASE("parameter shapes and flattening") {
  const auto p = SelectorParams::init(6, 4, 3, 1);
  CHECK(p.proj_w().w.rows() == 4);
  CHECK(p.head_w1().w.cols() == 12);
  CHECK(p.head_w2().w.rows() == 3);
  CHECK(p.head_p1().w.cols() == 8);
  CHECK(p.head_p2().w.rows() == 50);
  CHECK(p.parameter_count() == static_cast<std::size_t>(p.flatten().size()));
  SelectorParams q = SelectorParams::zeros(6, 4, 3);
  q.unflatten(p.flatten());
  CHECK(q == p);
  CHECK(SelectorParams::init(6, 4, 3, 1) == p);
  CHECK_FALSE(SelectorParams::init(6, 4, 3, 2) == p);
  const double a = std::sqrt(6.0 / (4 + 6));
  CHECK(p.proj_w().w.cwiseAbs().maxCoeff() <= a);
  CHECK(p.proj_w().b.isZero());
  CHECK_THROWS_AS(q.unflatten(Eigen::VectorXd::Zero(3)), SelectorError);
}

TEST_CASE("forward passes") {
  SUBCASE("zero weights give zero logits") {
    const auto p = SelectorParams::zeros(5, 3, 4);
    const Eigen::MatrixXd f = Eigen::MatrixXd::Random(4, 5);
    CHECK(forward_view(p, f).isZero(0.0));
    CHECK(forward_view(p, f).size() == 4);
    const Eigen::VectorXd pl = forward_pose(p, f.row(0).transpose(), f.row(1).transpose());
    CHECK(pl.size() == 50);
    CHECK(pl.isZero(0.0));
  }
  SUBCASE("matches the loop oracle") {
    Rng rng(4);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto p = random_params(5, 4, 3, seed);
      const auto ex = random_example(5, 3, rng);
      const auto got = forward_view(p, ex.features);
      const auto want = oracle::view_logits(p, ex.features);
      for (std::size_t k = 0; k < want.size(); ++k) CHECK(std::abs(got(static_cast<Eigen::Index>(k)) - want[k]) < 1e-9);
      const auto gp = forward_pose(p, ex.features.row(0).transpose(), ex.features.row(2).transpose());
      const auto wp = oracle::pose_logits(p, oracle::row(ex.features, 0), oracle::row(ex.features, 2));
      for (std::size_t k = 0; k < wp.size(); ++k) CHECK(std::abs(gp(static_cast<Eigen::Index>(k)) - wp[k]) < 1e-9);
    }
  }
  SUBCASE("dimension mismatch") {
    const auto p = SelectorParams::zeros(5, 3, 4);
    CHECK_THROWS_AS(forward_view(p, Eigen::MatrixXd::Zero(3, 5)), SelectorError);
    CHECK_THROWS_AS(forward_view(p, Eigen::MatrixXd::Zero(4, 4)), SelectorError);
    CHECK_THROWS_AS(forward_pose(p, Eigen::VectorXd::Zero(5), Eigen::VectorXd::Zero(2)), SelectorError);
  }
}

TEST_CASE("loss_view examples") {
  const std::vector<std::size_t> two{2};
  CHECK(loss_view(vec({0, 0, 0}), two) == doctest::Approx(std::log(3.0)).epsilon(1e-15));
  const std::vector<std::size_t> zero_two{0, 2};
  const double lse = std::log(std::exp(2.0) + 2.0);
  CHECK(loss_view(vec({2, 0, 0}), zero_two) == doctest::Approx(lse - 2.0).epsilon(1e-15));
  CHECK(loss_view(vec({2, 0, 0}), zero_two) == doctest::Approx(0.2395).epsilon(1e-4));
  CHECK(easiest_label(vec({2, 0, 0}), zero_two) == 0);
  const std::vector<std::size_t> all{0, 1, 2};
  CHECK(loss_view(vec({0.1, 1.5, -2}), all) == doctest::Approx(cross_entropy(vec({0.1, 1.5, -2}), 1)));
  // Tie between labels 1 and 2 resolves to the lower index.
  const std::vector<std::size_t> tied{2, 1};
  CHECK(easiest_label(vec({0, 1, 1}), tied) == 1);
  CHECK_THROWS_AS(loss_view(vec({0, 0}), std::vector<std::size_t>{}), SelectorError);
  CHECK_THROWS_AS(loss_view(vec({0, 0}), std::vector<std::size_t>{2}), SelectorError);
}

TEST_CASE("loss_view min structure and shift invariance") {
  Rng rng(6);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 2 + rng.below(6);
    Eigen::VectorXd logits(static_cast<Eigen::Index>(n));
    for (Eigen::Index k = 0; k < logits.size(); ++k) logits(k) = 3.0 * rng.normal();
    std::vector<std::size_t> s1{rng.below(n)}, s2{rng.below(n)};
    if (rng.coin(0.5)) s1.push_back(rng.below(n));
    std::vector<std::size_t> both = s1;
    both.insert(both.end(), s2.begin(), s2.end());
    CHECK(loss_view(logits, both) == std::min(loss_view(logits, s1), loss_view(logits, s2)));
    const Eigen::VectorXd shifted = logits.array() + 7.25;
    CHECK(loss_view(shifted, both) == doctest::Approx(loss_view(logits, both)).epsilon(1e-13));
    // On a dyadic grid the offset logits and their differences are exact, and so is the invariance.
    Eigen::VectorXd grid = (logits * 1024.0).array().round() / 1024.0;
    const double offset = static_cast<double>(rng.below(201)) - 100.0;
    const Eigen::VectorXd grid_shifted = grid.array() + offset;
    CHECK(loss_view(grid_shifted, both) == loss_view(grid, both));
  }
}

TEST_CASE("loss_pose against the flat loop oracle") {
  const pose::BinLayout layout(30);
  Rng rng(12);
  for (std::size_t n : {1, 2, 3}) {
    const auto p = random_params(4, 3, n, 70 + n, 1.0);
    const auto ex = random_example(4, n, rng);
    const auto logits = all_pair_logits(p, ex);
    std::vector<oracle::Vec> flat;
    for (const auto& l : logits) flat.emplace_back(l.data(), l.data() + l.size());
    std::vector<std::array<int, 5>> labs;
    for (const auto& l : ex.poses.labels) labs.push_back({l.yaw, l.pitch, l.roll, l.az, l.el});
    const long double want = oracle::pose_loss(flat, labs, layout.classes(), n);
    CAPTURE(n);
    CHECK(std::abs(loss_pose(logits, ex.poses, layout) - static_cast<double>(want)) < 1e-12);
  }
  // Equal logits on every head give the mean of the per-head uniform CEs.
  pose::PoseLabelTable t;
  t.n_views = 2;
  t.labels.assign(4, pose::PoseLabel{});
  const std::vector<Eigen::VectorXd> zeros(4, Eigen::VectorXd::Zero(50));
  const double expected = (std::log(12.0) * 2 + std::log(6.0) + std::log(13.0) + std::log(7.0)) / 5.0;
  CHECK(loss_pose(zeros, t, layout) == doctest::Approx(expected).epsilon(1e-15));
  CHECK_THROWS_AS(loss_pose(std::vector<Eigen::VectorXd>(3, Eigen::VectorXd::Zero(50)), t, layout), SelectorError);
}

TEST_CASE("total_loss composes the parts") {
  Rng rng(2);
  const auto p = random_params(4, 3, 3, 9);
  const auto ex = random_example(4, 3, rng);
  const double lw = loss_view(forward_view(p, ex.features), ex.labels);
  const double lp = loss_pose(all_pair_logits(p, ex), ex.poses, p.layout());
  const LossParts half = total_loss(p, ex, 0.5);
  CHECK(half.lw == doctest::Approx(lw).epsilon(1e-14));
  CHECK(half.lp == doctest::Approx(lp).epsilon(1e-14));
  CHECK(half.ls == half.lw + 0.5 * half.lp);
  const LossParts none = total_loss(p, ex, 0.0);
  CHECK(none.ls == none.lw);
}

TEST_CASE("gradient matches central finite differences") {
  SUBCASE("zero weights, single sample") {
    Rng rng(1);
    const auto p = SelectorParams::zeros(4, 3, 3);
    // Zero weights tie every view, so a multi-label set would sit on the kink of the min.
    std::vector<ClipExample> batch{random_example(4, 3, rng)};
    batch[0].labels = {1};
    for (double w : {0.0, 0.5}) {
      const auto r = check_gradient(p, batch, w);
      CAPTURE(w);
      CHECK(r.max_relative_error < 1e-4);
    }
  }
  SUBCASE("random params and batches") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(derive_seed(seed, 1));
      const std::size_t n = 2 + rng.below(3);
      const auto p = random_params(4, 3, n, derive_seed(seed, 2));
      std::vector<ClipExample> batch;
      const std::size_t b = 1 + rng.below(3);
      for (std::size_t k = 0; k < b; ++k) batch.push_back(random_example(4, n, rng));
      for (double w : {0.0, 0.5}) {
        const auto r = check_gradient(p, batch, w);
        CAPTURE(seed);
        CAPTURE(w);
        CAPTURE(r.worst_index);
        CHECK(r.max_relative_error < 1e-4);
      }
    }
  }
}

TEST_CASE("select ordering and tie rule") {
  const auto s = select_from_logits(vec({0.1, 0.9, 0.3}));
  CHECK(s.best == 1);
  CHECK(s.order == std::vector<std::size_t>{1, 2, 0});
  const auto t = select_from_logits(vec({0.5, 0.5, 0.5}));
  CHECK(t.best == 0);
  CHECK(t.order == std::vector<std::size_t>{0, 1, 2});
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd l(5);
    for (Eigen::Index k = 0; k < 5; ++k) l(k) = static_cast<double>(rng.below(4));
    const auto base = select_from_logits(l);
    CHECK(select_from_logits(l.array().exp().matrix()).best == base.best);
    CHECK(select_from_logits((2.0 * l.array() + 7.0).matrix()).order == base.order);
  }
}

TEST_CASE("label modes") {
  Rng rng(5);
  std::vector<ClipExample> ex;
  for (int k = 0; k < 30; ++k) ex.push_back(random_example(3, 4, rng, "c" + std::to_string(k)));
  const auto same = apply_label_mode(ex, LabelMode::min_ce, 1);
  CHECK(same[3].labels == ex[3].labels);
  const auto a = apply_label_mode(ex, LabelMode::random_single, 1);
  const auto b = apply_label_mode(ex, LabelMode::random_single, 1);
  for (std::size_t k = 0; k < ex.size(); ++k) {
    REQUIRE(a[k].labels.size() == 1);
    CHECK(std::binary_search(ex[k].labels.begin(), ex[k].labels.end(), a[k].labels[0]));
    CHECK(a[k].labels == b[k].labels);
  }
  CHECK(parse_label_mode("random_single") == LabelMode::random_single);
  CHECK_THROWS_AS(parse_label_mode("other"), SelectorError);
}

TEST_CASE("training mechanics") {
  Rng rng(8);
  std::vector<ClipExample> tr, va;
  for (int k = 0; k < 20; ++k) tr.push_back(random_example(4, 3, rng));
  for (int k = 0; k < 5; ++k) va.push_back(random_example(4, 3, rng));
  TrainConfig cfg;
  cfg.h_dim = 4;
  cfg.batch_size = 4;
  cfg.max_epochs = 0;
  const auto none = train(tr, va, cfg);
  CHECK(none.history.epochs.empty());
  CHECK(none.params == SelectorParams::init(4, 4, 3, cfg.seed));

  cfg.max_epochs = 5;
  const auto a = train(tr, va, cfg);
  const auto b = train(tr, va, cfg);
  REQUIRE(a.history.epochs.size() == 5);
  CHECK(a.params == b.params);
  for (std::size_t e = 0; e < 5; ++e) {
    CHECK(a.history.epochs[e].train_ls == b.history.epochs[e].train_ls);
    CHECK(a.history.epochs[e].val_ls == b.history.epochs[e].val_ls);
  }
  CHECK_THROWS_AS(train({}, va, cfg), SelectorError);
  CHECK_THROWS_AS(train(tr, {}, cfg), SelectorError);
  TrainConfig bad = cfg;
  bad.learning_rate = 0;
  CHECK_THROWS_AS(train(tr, va, bad), SelectorError);
  bad = cfg;
  bad.w = -1;
  CHECK_THROWS_AS(train(tr, va, bad), SelectorError);
  bad = cfg;
  bad.beta_deg = 45;
  CHECK_THROWS_WITH_AS(train(tr, va, bad), doctest::Contains("beta"), SelectorError);
  auto ragged = va;
  ragged.push_back(random_example(5, 3, rng));
  CHECK_THROWS_WITH_AS(train(tr, ragged, cfg), doctest::Contains("shape"), SelectorError);

  cfg.learning_rate = 1e300;
  CHECK_THROWS_WITH_AS(train(tr, va, cfg), doctest::Contains("diverged"), SelectorError);
}

TEST_CASE("checkpoint and log round trip") {
  Rng rng(8);
  std::vector<ClipExample> tr, va;
  for (int k = 0; k < 10; ++k) tr.push_back(random_example(4, 3, rng));
  for (int k = 0; k < 4; ++k) va.push_back(random_example(4, 3, rng));
  TrainConfig cfg;
  cfg.h_dim = 5;
  cfg.max_epochs = 3;
  cfg.label_mode = LabelMode::random_single;
  const auto r = train(tr, va, cfg);
  const auto c = checkpoint_from_json(nlohmann::json::parse(checkpoint_json(r.params, cfg, r.history).dump()));
  CHECK(c.params == r.params);
  CHECK(c.config.to_json() == cfg.to_json());
  CHECK(c.history.epochs.size() == 3);
  CHECK(c.history.best_epoch == r.history.best_epoch);
  CHECK(c.history.epochs[2].val_ls == r.history.epochs[2].val_ls);
  std::ostringstream log;
  write_training_log(log, r.history);
  std::istringstream lines(log.str());
  std::string first;
  std::getline(lines, first);
  CHECK(first == "epoch,L^W,L^P,L^S,val_LS,val_acc");
  const std::string text = log.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  CHECK_THROWS_AS(checkpoint_from_json(nlohmann::json{{"format", "other"}}), SelectorError);
}

TEST_CASE("training on a separable synthetic corpus") {
  const Pipeline pl = separable_pipeline(21);
  TrainConfig cfg;
  cfg.seed = 3;
  cfg.max_epochs = 1;
  const auto first = train(pl.train, pl.val, cfg);
  const LossParts before = loss_and_gradient(SelectorParams::init(16, cfg.h_dim, 5, cfg.seed), pl.train, cfg.w, nullptr);
  CHECK(first.history.epochs[0].train_ls < before.ls);

  cfg.max_epochs = 200;
  const auto r = train(pl.train, pl.val, cfg);
  std::size_t hits = 0;
  for (const auto& ex : pl.test) hits += select(r.params, ex.features).best == pl.planted.at(ex.clip_id) ? 1 : 0;
  const double acc = static_cast<double>(hits) / static_cast<double>(pl.test.size());
  MESSAGE("test accuracy " << acc << ", stopped at epoch " << r.history.stopped_epoch << ", best "
                           << r.history.best_epoch);
  CHECK(acc >= 0.9);
}
