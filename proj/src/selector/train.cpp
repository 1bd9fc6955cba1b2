#include "bestview/selector/train.hpp"

#include "bestview/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <unordered_map>

namespace bestview::selector {

using nlohmann::json;

LabelMode parse_label_mode(const std::string& s) {
  if (s == "min_ce") return LabelMode::min_ce;
  if (s == "random_single") return LabelMode::random_single;
  throw SelectorError("unknown label mode '" + s + "' (expected min_ce or random_single)");
}

std::string to_string(LabelMode m) { return m == LabelMode::min_ce ? "min_ce" : "random_single"; }

void TrainConfig::validate() const {
  if (!(w >= 0.0) || !std::isfinite(w)) throw SelectorError("w must be >= 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw SelectorError("learning_rate must be > 0");
  if (h_dim == 0) throw SelectorError("h_dim must be positive");
  if (batch_size == 0) throw SelectorError("batch_size must be positive");
  pose::BinLayout{beta_deg};
}

json TrainConfig::to_json() const {
  return {{"w", w},
          {"learning_rate", learning_rate},
          {"h_dim", h_dim},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"seed", seed},
          {"beta_deg", beta_deg},
          {"label_mode", to_string(label_mode)}};
}

TrainConfig TrainConfig::from_json(const json& j, TrainConfig c) {
  if (j.contains("w")) c.w = j.at("w").get<double>();
  if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("h_dim")) c.h_dim = j.at("h_dim").get<std::size_t>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
  if (j.contains("max_epochs")) c.max_epochs = j.at("max_epochs").get<std::size_t>();
  if (j.contains("patience")) c.patience = j.at("patience").get<std::size_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("beta_deg")) c.beta_deg = j.at("beta_deg").get<int>();
  if (j.contains("label_mode")) c.label_mode = parse_label_mode(j.at("label_mode").get<std::string>());
  return c;
}

TrainConfig TrainConfig::from_json(const json& j) { return from_json(j, TrainConfig{}); }

std::vector<ClipExample> build_examples(const Corpus& corpus, std::span<const PseudoLabelSet> labels,
                                        std::span<const pose::PoseLabelTable> tables) {
  std::unordered_map<std::string, const PseudoLabelSet*> by_label;
  for (const auto& l : labels) by_label[l.clip_id] = &l;
  std::unordered_map<std::string, const pose::PoseLabelTable*> by_table;
  for (const auto& t : tables) by_table[t.clip_id] = &t;
  std::vector<ClipExample> out;
  out.reserve(corpus.size());
  for (const Clip& clip : corpus.clips()) {
    const auto l = by_label.find(clip.clip_id);
    if (l == by_label.end()) throw SelectorError("no pseudo-labels for clip " + clip.clip_id);
    const auto t = by_table.find(clip.clip_id);
    if (t == by_table.end()) throw SelectorError("no pose labels for clip " + clip.clip_id);
    out.push_back(make_example(clip, l->second->labels, *t->second));
  }
  return out;
}

std::vector<ClipExample> apply_label_mode(std::vector<ClipExample> examples, LabelMode mode, std::uint64_t seed) {
  if (mode == LabelMode::min_ce) return examples;
  for (auto& ex : examples) {
    Rng rng(derive_seed(seed, stable_hash(ex.clip_id)));
    ex.labels = {ex.labels[rng.below(ex.labels.size())]};
  }
  return examples;
}

double label_accuracy(const SelectorParams& p, std::span<const ClipExample> examples) {
  if (examples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : examples) {
    const std::size_t best = select(p, ex.features).best;
    hits += std::binary_search(ex.labels.begin(), ex.labels.end(), best) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

TrainResult train(std::span<const ClipExample> train_set, std::span<const ClipExample> val_set,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw SelectorError("empty training split");
  if (val_set.empty()) throw SelectorError("empty validation split");
  const auto n_views = static_cast<std::size_t>(train_set.front().features.rows());
  const auto f_dim = static_cast<std::size_t>(train_set.front().features.cols());
  for (const auto set : {train_set, val_set}) {
    for (const ClipExample& ex : set) {
      if (static_cast<std::size_t>(ex.features.rows()) != n_views ||
          static_cast<std::size_t>(ex.features.cols()) != f_dim) {
        throw SelectorError("clip " + ex.clip_id + ": feature shape differs from the rest of the training data");
      }
      if (ex.poses.beta_deg != cfg.beta_deg) {
        throw SelectorError("clip " + ex.clip_id + ": pose labels use beta " + std::to_string(ex.poses.beta_deg) +
                            ", training config uses " + std::to_string(cfg.beta_deg));
      }
    }
  }

  TrainResult result{SelectorParams::init(f_dim, cfg.h_dim, n_views, cfg.seed, cfg.beta_deg), {}};
  if (cfg.max_epochs == 0) return result;

  SelectorParams params = result.params;
  std::vector<std::size_t> order(train_set.size());
  std::vector<ClipExample> batch;
  double best_val = std::numeric_limits<double>::infinity();
  double prev_val = best_val;
  std::size_t rising = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, epoch));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
        batch.push_back(train_set[order[k]]);
      }
      SelectorParams grad;
      try {
        loss_and_gradient(params, batch, cfg.w, &grad);
      } catch (const SelectorError& e) {
        throw SelectorError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      for (std::size_t l = 0; l < kLayerCount; ++l) {
        params.layers[l].w -= cfg.learning_rate * grad.layers[l].w;
        params.layers[l].b -= cfg.learning_rate * grad.layers[l].b;
      }
    }

    EpochStats s;
    s.epoch = epoch;
    try {
      const LossParts tr = loss_and_gradient(params, train_set, cfg.w, nullptr);
      s.train_lw = tr.lw;
      s.train_lp = tr.lp;
      s.train_ls = tr.ls;
      s.val_ls = loss_and_gradient(params, val_set, cfg.w, nullptr).ls;
    } catch (const SelectorError& e) {
      throw SelectorError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    s.val_acc = label_accuracy(params, val_set);
    result.history.epochs.push_back(s);
    result.history.stopped_epoch = epoch;

    if (s.val_ls < best_val) {
      best_val = s.val_ls;
      result.params = params;
      result.history.best_epoch = epoch;
    }
    rising = s.val_ls > prev_val ? rising + 1 : 0;
    prev_val = s.val_ls;
    if (cfg.patience > 0 && rising >= cfg.patience) {
      result.history.early_stopped = true;
      break;
    }
  }
  return result;
}

void write_training_log(std::ostream& out, const TrainHistory& h) {
  out << "epoch,L^W,L^P,L^S,val_LS,val_acc\n";
  const auto old = out.precision(10);
  for (const auto& e : h.epochs) {
    out << e.epoch << ',' << e.train_lw << ',' << e.train_lp << ',' << e.train_ls << ',' << e.val_ls << ','
        << e.val_acc << '\n';
  }
  out.precision(old);
}

namespace {

constexpr int kCheckpointVersion = 1;

json layer_json(const Dense& d) {
  std::vector<double> w;
  w.reserve(static_cast<std::size_t>(d.w.size()));
  for (Eigen::Index r = 0; r < d.w.rows(); ++r)
    for (Eigen::Index c = 0; c < d.w.cols(); ++c) w.push_back(d.w(r, c));
  return {{"rows", d.w.rows()}, {"cols", d.w.cols()}, {"W", w}, {"b", std::vector<double>(d.b.begin(), d.b.end())}};
}

void read_layer(const json& j, Dense& d, const std::string& name) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  if (rows != d.w.rows() || cols != d.w.cols()) throw SelectorError("checkpoint layer " + name + " has the wrong shape");
  const auto w = j.at("W").get<std::vector<double>>();
  const auto b = j.at("b").get<std::vector<double>>();
  if (w.size() != static_cast<std::size_t>(rows * cols) || b.size() != static_cast<std::size_t>(rows)) {
    throw SelectorError("checkpoint layer " + name + " has the wrong number of values");
  }
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) d.w(r, c) = w[static_cast<std::size_t>(r * cols + c)];
  for (Eigen::Index r = 0; r < rows; ++r) d.b(r) = b[static_cast<std::size_t>(r)];
}

}  // namespace

json checkpoint_json(const SelectorParams& p, const TrainConfig& cfg, const TrainHistory& h) {
  json layers = json::object();
  for (std::size_t k = 0; k < kLayerCount; ++k) layers[kLayerNames[k]] = layer_json(p.layers[k]);
  json epochs = json::array();
  for (const auto& e : h.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_lw", e.train_lw},
                      {"train_lp", e.train_lp},
                      {"train_ls", e.train_ls},
                      {"val_ls", e.val_ls},
                      {"val_acc", e.val_acc}});
  }
  return {{"format", "bestview-selector"},
          {"version", kCheckpointVersion},
          {"f_dim", p.f_dim},
          {"h_dim", p.h_dim},
          {"n_views", p.n_views},
          {"beta_deg", p.beta_deg},
          {"config", cfg.to_json()},
          {"layers", layers},
          {"history",
           {{"epochs", epochs},
            {"best_epoch", h.best_epoch},
            {"stopped_epoch", h.stopped_epoch},
            {"early_stopped", h.early_stopped}}}};
}

void save_checkpoint(const std::filesystem::path& path, const SelectorParams& p, const TrainConfig& cfg,
                     const TrainHistory& h) {
  std::ofstream out(path);
  if (!out) throw SelectorError("cannot write checkpoint " + path.string());
  out << checkpoint_json(p, cfg, h).dump(1) << '\n';
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.value("format", "") != "bestview-selector") throw SelectorError("not a selector checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) throw SelectorError("unsupported checkpoint version");
    Checkpoint c;
    c.config = TrainConfig::from_json(j.at("config"));
    c.params = SelectorParams::zeros(j.at("f_dim").get<std::size_t>(), j.at("h_dim").get<std::size_t>(),
                                     j.at("n_views").get<std::size_t>(), j.at("beta_deg").get<int>());
    for (std::size_t k = 0; k < kLayerCount; ++k) read_layer(j.at("layers").at(kLayerNames[k]), c.params.layers[k], kLayerNames[k]);
    c.params.check_consistent();
    const json& h = j.at("history");
    for (const auto& e : h.at("epochs")) {
      c.history.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("train_lw").get<double>(),
                                  e.at("train_lp").get<double>(), e.at("train_ls").get<double>(),
                                  e.at("val_ls").get<double>(), e.at("val_acc").get<double>()});
    }
    c.history.best_epoch = h.at("best_epoch").get<std::size_t>();
    c.history.stopped_epoch = h.at("stopped_epoch").get<std::size_t>();
    c.history.early_stopped = h.at("early_stopped").get<bool>();
    return c;
  } catch (const json::exception& e) {
    throw SelectorError(std::string("malformed checkpoint: ") + e.what());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SelectorError("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw SelectorError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace bestview::selector
