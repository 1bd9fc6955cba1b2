#include "bestview/synthgen.hpp"

#include "bestview/rng.hpp"

#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace bestview::synth {

namespace {

constexpr std::array<const char*, 20> kVerbs{"cuts", "removes", "holds", "picks", "places", "pours", "stirs",
                                             "opens", "turns", "lifts", "wipes", "peels", "tightens", "adds",
                                             "washes", "rotates", "presses", "slices", "grabs", "pushes"};
constexpr std::array<const char*, 24> kNouns{"onion", "knife", "wheel", "bike", "tire", "cup", "bowl", "spoon",
                                             "pan", "plate", "jar", "lid", "wrench", "nut", "tomato", "apple",
                                             "board", "kettle", "towel", "table", "dough", "ball", "pedal", "chain"};
constexpr std::array<const char*, 12> kAdjectives{"red", "rear", "front", "small", "big", "wooden",
                                                  "metal", "left", "right", "clean", "hot", "loose"};
constexpr std::array<const char*, 8> kFunction{"c", "the", "a", "with", "on", "into", "and", "of"};

template <std::size_t N>
const char* pick(Rng& rng, const std::array<const char*, N>& words) {
  return words[rng.below(N)];
}

std::vector<std::string> narration_tokens(Rng& rng, std::size_t len) {
  std::vector<std::string> out;
  while (out.size() < len) {
    if (!out.empty()) out.emplace_back("and");
    out.emplace_back("c");
    out.emplace_back(pick(rng, kVerbs));
    switch (rng.below(4)) {
      case 0:
        out.insert(out.end(), {"the", pick(rng, kAdjectives), pick(rng, kNouns)});
        break;
      case 1:
        out.insert(out.end(), {"the", pick(rng, kNouns), "with", "the", pick(rng, kNouns)});
        break;
      case 2:
        out.insert(out.end(), {"the", pick(rng, kNouns), "on", "the", pick(rng, kAdjectives), pick(rng, kNouns)});
        break;
      default:
        out.insert(out.end(), {"a", pick(rng, kNouns), "into", "the", pick(rng, kNouns)});
        break;
    }
  }
  out.resize(len);
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s.push_back(' ');
    s += words[i];
  }
  return s;
}

Eigen::VectorXd random_unit(Rng& rng, std::size_t dim) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
  do {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  } while (v.norm() < 1e-9);
  return v.normalized();
}

// World z is up. Camera frame: z forward, x right, y down.
CameraExtrinsics look_at(const Eigen::Vector3d& center, const Eigen::Vector3d& target) {
  const Eigen::Vector3d forward = (target - center).normalized();
  Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitZ());
  if (right.norm() < 1e-9) right = Eigen::Vector3d::UnitX();
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);
  CameraExtrinsics e;
  e.rotation.row(0) = right.transpose();
  e.rotation.row(1) = down.transpose();
  e.rotation.row(2) = forward.transpose();
  e.translation = -e.rotation * center;
  return e;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_views < 2) throw SynthError("synth: n_views must be at least 2");
  if (f_dim == 0) throw SynthError("synth: f_dim must be positive");
  if (n_captioners == 0) throw SynthError("synth: n_captioners must be positive");
  if (vocab_size < 2) throw SynthError("synth: vocab_size must be at least 2");
  if (narration_len == 0) throw SynthError("synth: narration_len must be positive");
  if (!(corruption_rate >= 0.0 && corruption_rate <= 1.0)) throw SynthError("synth: corruption_rate must be in [0, 1]");
  if (!(captioner_noise >= 0.0)) throw SynthError("synth: captioner_noise must be non-negative");
  if (!(quality_min >= 0.0 && quality_min <= quality_max && quality_max < 1.0)) {
    throw SynthError("synth: need 0 <= quality_min <= quality_max < 1");
  }
  if (!(feature_snr > 0.0)) throw SynthError("synth: feature_snr must be positive");
  if (!(camera_radius > 0.0)) throw SynthError("synth: camera_radius must be positive");
}

std::vector<std::string> synth_vocabulary(std::size_t vocab_size) {
  std::vector<std::string> words;
  for (const char* w : kFunction) words.emplace_back(w);
  for (const char* w : kVerbs) words.emplace_back(w);
  for (const char* w : kNouns) words.emplace_back(w);
  for (const char* w : kAdjectives) words.emplace_back(w);
  for (std::size_t i = 0; words.size() < vocab_size; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "w%03zu", i);
    words.emplace_back(buf);
  }
  words.resize(vocab_size);
  return words;
}

SynthCorpus generate(const SynthConfig& cfg) {
  cfg.validate();
  const std::vector<std::string> vocab = synth_vocabulary(cfg.vocab_size);
  std::vector<std::string> captioners;
  for (std::size_t k = 0; k < cfg.n_captioners; ++k) captioners.push_back("cap" + std::to_string(k));

  Rng global(derive_seed(cfg.seed, 0));
  const Eigen::VectorXd signal = random_unit(global, cfg.f_dim);
  Eigen::VectorXd axis_a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cfg.f_dim));
  Eigen::VectorXd axis_b = axis_a;
  if (cfg.f_dim >= 3) {
    axis_a = random_unit(global, cfg.f_dim);
    axis_a -= axis_a.dot(signal) * signal;
    axis_a.normalize();
    axis_b = random_unit(global, cfg.f_dim);
    axis_b -= axis_b.dot(signal) * signal + axis_b.dot(axis_a) * axis_a;
    axis_b.normalize();
  }

  std::vector<Clip> clips;
  std::map<std::string, std::size_t> planted;
  clips.reserve(cfg.n_clips);
  const double noise_sd = 1.0 / cfg.feature_snr;
  const double two_pi = 2.0 * std::numbers::pi;

  for (std::size_t ci = 0; ci < cfg.n_clips; ++ci) {
    Rng rng(derive_seed(cfg.seed, ci + 1));
    Clip clip;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "clip%05zu", ci);
    clip.clip_id = idbuf;

    const auto words = narration_tokens(rng, cfg.narration_len);
    clip.narration = join_words(words);

    const std::size_t best = static_cast<std::size_t>(rng.below(cfg.n_views));
    std::vector<double> quality(cfg.n_views);
    for (std::size_t v = 0; v < cfg.n_views; ++v) {
      quality[v] = v == best ? 1.0 : rng.uniform(cfg.quality_min, cfg.quality_max);
    }
    std::vector<double> jitter(cfg.n_captioners);
    for (auto& j : jitter) j = cfg.captioner_noise * rng.uniform();

    const double heading = rng.uniform(0.0, two_pi);
    const Eigen::Vector3d target(0.0, 0.0, 1.0);

    for (std::size_t v = 0; v < cfg.n_views; ++v) {
      ViewRecord view;
      view.is_ego = v == 0;
      view.view_id = v == 0 ? "ego" : "exo" + std::to_string(v);

      double azimuth;
      if (v == 0) {
        azimuth = heading;
        const Eigen::Vector3d center(0.0, 0.0, 1.6);
        const Eigen::Vector3d look = center + Eigen::Vector3d(std::cos(azimuth), std::sin(azimuth), -0.6);
        view.extrinsics = look_at(center, look);
      } else {
        const double spacing = two_pi / static_cast<double>(cfg.n_views - 1);
        azimuth = heading + spacing * static_cast<double>(v - 1) + rng.uniform(-0.17, 0.17);
        const Eigen::Vector3d center(cfg.camera_radius * std::cos(azimuth), cfg.camera_radius * std::sin(azimuth),
                                     1.5 + rng.uniform(-0.3, 0.3));
        view.extrinsics = look_at(center, target);
      }

      Eigen::VectorXd f = quality[v] * signal + cfg.pose_signal * (std::cos(azimuth) * axis_a + std::sin(azimuth) * axis_b);
      for (Eigen::Index d = 0; d < f.size(); ++d) f(d) += noise_sd * rng.normal();
      view.feature.assign(f.data(), f.data() + f.size());

      const double verbosity = rng.uniform();
      const std::size_t extra = static_cast<std::size_t>(std::lround(verbosity * static_cast<double>(cfg.verbose_extra_max)));
      for (std::size_t k = 0; k < cfg.n_captioners; ++k) {
        const double p = std::min(1.0, cfg.corruption_rate * (1.0 - quality[v] + jitter[k]));
        std::vector<std::string> cap = words;
        for (auto& w : cap) {
          if (!rng.coin(p)) continue;
          std::string repl;
          do {
            repl = vocab[rng.below(vocab.size())];
          } while (repl == w);
          w = std::move(repl);
        }
        for (std::size_t e = 0; e < extra; ++e) cap.push_back(vocab[rng.below(vocab.size())]);
        view.captions[captioners[k]] = join_words(cap);
      }
      clip.views.push_back(std::move(view));
    }
    planted[clip.clip_id] = best;
    clips.push_back(std::move(clip));
  }
  return {Corpus(captioners, cfg.f_dim, std::move(clips)), std::move(planted)};
}

}  // namespace bestview::synth
