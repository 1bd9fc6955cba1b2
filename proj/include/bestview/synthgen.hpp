#pragma once

#include "bestview/corpus.hpp"

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace bestview::synth {

class SynthError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SynthConfig {
  std::size_t n_clips = 100;
  std::size_t n_views = 5;
  std::size_t f_dim = 16;
  std::size_t n_captioners = 3;
  std::size_t vocab_size = 200;
  std::size_t narration_len = 12;
  double corruption_rate = 0.3;   // rho: token replacement probability scale
  double captioner_noise = 0.05;  // extra per-captioner replacement rate, also scaled by rho
  double quality_min = 0.0;       // quality range of non-planted views
  double quality_max = 0.7;
  double feature_snr = 10.0;      // noise std per feature dimension is 1 / snr
  double pose_signal = 0.5;       // amplitude of the camera-azimuth component in features
  double camera_radius = 3.0;
  std::size_t verbose_extra_max = 0;  // > 0 appends verbosity-driven filler to captions
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthCorpus {
  Corpus corpus;
  std::map<std::string, std::size_t> planted;  // clip_id -> planted best view
};

/// Deterministic per seed; each clip draws from its own derived stream.
///
/// Per clip: one planted view has quality 1, the others uniform in
/// [quality_min, quality_max]. Every caption is the narration with each
/// token replaced (by a different vocabulary word) with probability
/// rho * (1 - q + captioner jitter). Features are q times a fixed signal
/// direction plus an orthogonal azimuth component and Gaussian noise. View 0
/// is the ego camera at the circle centre; exo cameras sit on the circle and
/// look inward.
SynthCorpus generate(const SynthConfig& cfg);

/// Word list used for narrations and replacement tokens.
std::vector<std::string> synth_vocabulary(std::size_t vocab_size);

}  // namespace bestview::synth
