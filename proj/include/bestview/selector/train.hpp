#pragma once

#include "bestview/selector/model.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace bestview::selector {

/// min_ce trains on the full pseudo-label set; random_single replaces each
/// clip's set by one seeded draw from it (plain cross-entropy ablation).
enum class LabelMode { min_ce, random_single };

LabelMode parse_label_mode(const std::string& s);
std::string to_string(LabelMode m);

struct TrainConfig {
  double w = 0.5;
  double learning_rate = 0.1;
  std::size_t h_dim = 16;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  int beta_deg = 30;
  LabelMode label_mode = LabelMode::min_ce;

  void validate() const;
  nlohmann::json to_json() const;
  /// Fields present in j override base.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_lw = 0.0;
  double train_lp = 0.0;
  double train_ls = 0.0;
  double val_ls = 0.0;
  double val_acc = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;     // 0 when no epoch ran
  std::size_t stopped_epoch = 0;  // last epoch run
  bool early_stopped = false;
};

struct TrainResult {
  SelectorParams params;
  TrainHistory history;
};

/// Pairs each clip with its labels and pose table by clip_id.
std::vector<ClipExample> build_examples(const Corpus& corpus, std::span<const PseudoLabelSet> labels,
                                        std::span<const pose::PoseLabelTable> tables);

/// Applies the label mode; min_ce returns the examples unchanged.
std::vector<ClipExample> apply_label_mode(std::vector<ClipExample> examples, LabelMode mode, std::uint64_t seed);

/// Fraction of examples whose selected view is one of its labels.
double label_accuracy(const SelectorParams& p, std::span<const ClipExample> examples);

/// Mini-batch gradient descent with a seeded per-epoch shuffle. Stops after
/// `patience` consecutive epochs of increasing validation L^S, or at
/// max_epochs, and returns the parameters of the best validation epoch.
TrainResult train(std::span<const ClipExample> train_set, std::span<const ClipExample> val_set,
                  const TrainConfig& cfg);

void write_training_log(std::ostream& out, const TrainHistory& h);

nlohmann::json checkpoint_json(const SelectorParams& p, const TrainConfig& cfg, const TrainHistory& h);
void save_checkpoint(const std::filesystem::path& path, const SelectorParams& p, const TrainConfig& cfg,
                     const TrainHistory& h);

struct Checkpoint {
  SelectorParams params;
  TrainConfig config;
  TrainHistory history;
};

Checkpoint checkpoint_from_json(const nlohmann::json& j);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bestview::selector
