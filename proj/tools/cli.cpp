#include "cli.hpp"

#include "bestview/corpus.hpp"
#include "bestview/eval/harness.hpp"
#include "bestview/judge/server.hpp"
#include "bestview/judge/study.hpp"
#include "bestview/posegeom.hpp"
#include "bestview/pseudolabel.hpp"
#include "bestview/selector/train.hpp"
#include "bestview/synthgen.hpp"
#include "bestview/text/terms.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace bestview::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Bad flag values found after parsing; reported like parse errors.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Options in this group name files the command writes. They are left out of
// the echoed config so the same run aimed at another path stays byte-identical.
constexpr const char* kOutputGroup = "Outputs";

struct Global {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

// Runs a config-validation step, turning its failure into a usage error.
template <typename Fn>
auto checked(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

json option_value(const CLI::Option* o) {
  const auto& results = o->results();
  if (o->get_items_expected_max() > 1) {
    json arr = json::array();
    for (const auto& r : results) arr.push_back(r);
    return arr;
  }
  if (o->get_expected_min() == 0) return results.empty() ? "false" : results.back();  // flag
  if (!results.empty()) return results.back();
  return o->get_default_str();
}

json effective_config(const CLI::App& root, const CLI::App& sub) {
  json cfg = json::object();
  cfg["command"] = sub.get_name();
  auto add = [&](const CLI::Option* o) {
    const std::string name = o->get_single_name();
    if (name == "help" || name == "config" || name == "jobs" || o->get_group() == kOutputGroup) return;
    cfg[name] = option_value(o);
  };
  for (const CLI::Option* o : root.get_options()) add(o);
  for (const CLI::Option* o : sub.get_options()) add(o);
  return cfg;
}

json provenance(const json& config) { return {{"tool", "bestview"}, {"config", config}}; }

std::string config_comment(const json& config) { return "# config: " + config.dump() + "\n"; }

class OutputFile {
 public:
  explicit OutputFile(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot write " + path);
  }
  std::ostream& stream() { return out_; }
  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("error writing " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

std::ifstream open_input(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(std::string("cannot open ") + what + " " + path);
  return in;
}

std::vector<PseudoLabelSet> load_labels(const std::string& path) {
  auto in = open_input(path, "label file");
  return read_labels(in);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  synth::SynthConfig cfg;
  std::string output;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* c = app.add_subcommand("synth", "Generate a synthetic corpus with planted best views");
  c->add_option("--clips", a.cfg.n_clips, "Number of clips")->capture_default_str();
  c->add_option("--views", a.cfg.n_views, "Views per clip, ego included")->capture_default_str();
  c->add_option("--f-dim", a.cfg.f_dim, "Feature dimension")->capture_default_str();
  c->add_option("--captioners", a.cfg.n_captioners, "Number of simulated captioners")->capture_default_str();
  c->add_option("--vocab", a.cfg.vocab_size, "Vocabulary size")->capture_default_str();
  c->add_option("--narration-len", a.cfg.narration_len, "Narration length in tokens")->capture_default_str();
  c->add_option("--rho", a.cfg.corruption_rate, "Caption corruption rate")->capture_default_str();
  c->add_option("--captioner-noise", a.cfg.captioner_noise, "Extra per-captioner corruption")->capture_default_str();
  c->add_option("--quality-min", a.cfg.quality_min, "Lowest quality of a non-planted view")->capture_default_str();
  c->add_option("--quality-max", a.cfg.quality_max, "Highest quality of a non-planted view")->capture_default_str();
  c->add_option("--snr", a.cfg.feature_snr, "Feature signal-to-noise ratio")->capture_default_str();
  c->add_option("--pose-signal", a.cfg.pose_signal, "Camera azimuth component in features")->capture_default_str();
  c->add_option("--radius", a.cfg.camera_radius, "Exo camera circle radius")->capture_default_str();
  c->add_option("--verbose-extra", a.cfg.verbose_extra_max, "Max filler tokens appended to captions")->capture_default_str();
  c->add_option("-o,--output", a.output, "Manifest to write")->required()->group(kOutputGroup);
}

int run_synth(SynthArgs& a, const Global& g, const json& config, std::ostream& out) {
  a.cfg.seed = g.seed;
  checked([&] { a.cfg.validate(); });
  const auto s = synth::generate(a.cfg);
  json meta = provenance(config);
  meta["planted"] = s.planted;
  OutputFile f(a.output);
  save_manifest(s.corpus, f.stream(), &meta);
  f.close();
  out << "synth: " << s.corpus.size() << " clips x " << s.corpus.view_count() << " views, "
      << s.corpus.captioner_ids().size() << " captioners\n";
  return kExitOk;
}

// ---------------------------------------------------------------- validate

struct ValidateArgs {
  std::string manifest;
  std::string labels;
  std::string poses;
};

void add_validate(CLI::App& app, ValidateArgs& a) {
  auto* c = app.add_subcommand("validate", "Check a manifest, and optionally label files against it");
  c->add_option("manifest", a.manifest, "Corpus manifest")->required();
  c->add_option("--labels", a.labels, "Pseudo-label file to check against the corpus");
  c->add_option("--poses", a.poses, "Pose-label file to check against the corpus");
}

int run_validate(const ValidateArgs& a, std::ostream& out) {
  const Corpus corpus = load_manifest(a.manifest);
  out << "manifest: " << corpus.size() << " clips, " << corpus.view_count() << " views, f_dim "
      << corpus.f_dim() << ", captioners";
  for (const auto& c : corpus.captioner_ids()) out << ' ' << c;
  out << ", split " << (corpus.split() ? to_string(*corpus.split()) : std::string("none")) << '\n';
  if (!a.labels.empty()) {
    const auto labels = load_labels(a.labels);
    std::map<std::string, const PseudoLabelSet*> by_id;
    for (const auto& l : labels) by_id[l.clip_id] = &l;
    for (const Clip& clip : corpus.clips()) {
      const auto it = by_id.find(clip.clip_id);
      if (it == by_id.end()) throw std::runtime_error("labels: no entry for clip " + clip.clip_id);
      if (!it->second->labels.empty() && *it->second->labels.rbegin() >= clip.view_count()) {
        throw std::runtime_error("labels: view index out of range for clip " + clip.clip_id);
      }
    }
    out << "labels: ok, " << labels.size() << " entries cover all clips\n";
  }
  if (!a.poses.empty()) {
    const auto tables = pose::load_pose_labels(a.poses);
    std::map<std::string, const pose::PoseLabelTable*> by_id;
    for (const auto& t : tables) by_id[t.clip_id] = &t;
    for (const Clip& clip : corpus.clips()) {
      const auto it = by_id.find(clip.clip_id);
      if (it == by_id.end()) throw std::runtime_error("poses: no entry for clip " + clip.clip_id);
      if (it->second->n_views != clip.view_count()) {
        throw std::runtime_error("poses: view count mismatch for clip " + clip.clip_id);
      }
    }
    out << "poses: ok, " << tables.size() << " entries cover all clips\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- split

struct SplitArgs {
  std::string manifest;
  double val = 0.1;
  double test = 0.1;
  std::string out_dir;
};

void add_split(CLI::App& app, SplitArgs& a) {
  auto* c = app.add_subcommand("split", "Seeded train/val/test split of a manifest");
  c->add_option("manifest", a.manifest, "Corpus manifest")->required();
  c->add_option("--val-frac", a.val, "Validation fraction")->capture_default_str();
  c->add_option("--test-frac", a.test, "Test fraction")->capture_default_str();
  c->add_option("--out-dir", a.out_dir, "Directory for train.jsonl, val.jsonl, test.jsonl")
      ->required()
      ->group(kOutputGroup);
}

int run_split(const SplitArgs& a, const Global& g, const json& config, std::ostream& out) {
  if (!(a.val > 0.0 && a.test > 0.0 && a.val + a.test < 1.0)) {
    throw UsageError("--val-frac and --test-frac must be positive and sum to less than 1");
  }
  const Corpus corpus = load_manifest(a.manifest);
  const auto s = split_corpus(corpus, {1.0 - a.val - a.test, a.val, a.test}, g.seed);
  fs::create_directories(a.out_dir);
  const json meta = provenance(config);
  for (const auto& [name, part] : {std::pair<const char*, const Corpus*>{"train", &s.train},
                                   {"val", &s.val}, {"test", &s.test}}) {
    OutputFile f((fs::path(a.out_dir) / (std::string(name) + ".jsonl")).string());
    save_manifest(*part, f.stream(), &meta);
    f.close();
  }
  out << "split: train " << s.train.size() << ", val " << s.val.size() << ", test " << s.test.size() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- pseudolabel

struct PseudolabelArgs {
  std::string manifest;
  std::string policy = "union";
  std::string metric = "cider";
  std::vector<std::string> captioners;
  bool no_stem = false;
  std::string output;
};

void add_pseudolabel(CLI::App& app, PseudolabelArgs& a) {
  auto* c = app.add_subcommand("pseudolabel", "Score captions and aggregate per-clip best-view labels");
  c->add_option("manifest", a.manifest, "Corpus manifest")->required();
  c->add_option("--policy", a.policy, "Aggregation policy")
      ->check(CLI::IsMember({"union", "intersection_fallback", "majority"}))
      ->capture_default_str();
  c->add_option("--metric", a.metric, "Caption scoring metric")
      ->check(CLI::IsMember({"cider", "meteor"}))
      ->capture_default_str();
  c->add_option("--captioners", a.captioners, "Captioners to use (default: all)")->delimiter(',');
  c->add_flag("--no-stem", a.no_stem, "Score CIDEr on unstemmed tokens");
  c->add_option("-o,--output", a.output, "Label file to write")->required()->group(kOutputGroup);
}

int run_pseudolabel(const PseudolabelArgs& a, const Global& g, const json& config, std::ostream& out) {
  LabelOptions opts;
  opts.policy = checked([&] { return parse_policy(a.policy); });
  opts.metric.metric = checked([&] { return text::parse_scoring_metric(a.metric); });
  opts.metric.stem = !a.no_stem;
  opts.captioners = a.captioners;
  opts.jobs = g.jobs;
  const Corpus corpus = load_manifest(a.manifest);
  const auto result = label_corpus(corpus, opts);
  const json meta = provenance(config);
  OutputFile f(a.output);
  write_labels(f.stream(), result.labels, &meta);
  f.close();
  out << "pseudolabel: " << result.summary.clips << " clips, policy " << to_string(opts.policy) << '\n';
  out << "view frequency:";
  for (double v : result.summary.view_frequency) out << ' ' << fixed(v, 3);
  out << "\nlabel set sizes:";
  for (std::size_t s = 1; s < result.summary.set_size_hist.size(); ++s) {
    out << ' ' << s << ':' << result.summary.set_size_hist[s];
  }
  out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- poselabels

struct PoselabelsArgs {
  std::string manifest;
  int beta = 30;
  std::string output;
};

void add_poselabels(CLI::App& app, PoselabelsArgs& a) {
  auto* c = app.add_subcommand("poselabels", "Discretized relative camera poses for every view pair");
  c->add_option("manifest", a.manifest, "Corpus manifest")->required();
  c->add_option("--beta", a.beta, "Bin width in degrees")->capture_default_str();
  c->add_option("-o,--output", a.output, "Pose-label file to write")->required()->group(kOutputGroup);
}

int run_poselabels(const PoselabelsArgs& a, const Global& g, const json& config, std::ostream& out) {
  checked([&] { return pose::BinLayout(a.beta); });
  const Corpus corpus = load_manifest(a.manifest);
  const auto tables = pose::pose_label_tables(corpus, a.beta, static_cast<int>(g.jobs));
  const json meta = provenance(config);
  OutputFile f(a.output);
  pose::write_pose_labels(f.stream(), tables, &meta);
  f.close();
  out << "poselabels: " << tables.size() << " clips, beta " << a.beta << ", "
      << pose::BinLayout(a.beta).total_classes() << " classes per pair\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string train_manifest;
  std::string val_manifest;
  std::string labels;
  std::string poses;
  selector::TrainConfig cfg;
  std::string label_mode = "min_ce";
  std::string output;
  std::string log;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* c = app.add_subcommand("train", "Train the view selector on pseudo-labels");
  c->add_option("--train", a.train_manifest, "Training manifest")->required();
  c->add_option("--val", a.val_manifest, "Validation manifest")->required();
  c->add_option("--labels", a.labels, "Pseudo-label file covering both splits")->required();
  c->add_option("--poses", a.poses, "Pose-label file (computed from extrinsics when absent)");
  c->add_option("--w", a.cfg.w, "Pose loss weight")->capture_default_str();
  c->add_option("--lr", a.cfg.learning_rate, "Learning rate")->capture_default_str();
  c->add_option("--h-dim", a.cfg.h_dim, "Head hidden width")->capture_default_str();
  c->add_option("--batch-size", a.cfg.batch_size, "Clips per mini-batch")->capture_default_str();
  c->add_option("--max-epochs", a.cfg.max_epochs, "Epoch limit")->capture_default_str();
  c->add_option("--patience", a.cfg.patience, "Consecutive rising validation epochs before stopping")
      ->capture_default_str();
  c->add_option("--beta", a.cfg.beta_deg, "Pose bin width in degrees")->capture_default_str();
  c->add_option("--label-mode", a.label_mode, "min_ce or random_single")
      ->check(CLI::IsMember({"min_ce", "random_single"}))
      ->capture_default_str();
  c->add_option("-o,--output", a.output, "Checkpoint to write")->required()->group(kOutputGroup);
  c->add_option("--log", a.log, "Per-epoch CSV log to write")->group(kOutputGroup);
}

std::vector<pose::PoseLabelTable> poses_for(const Corpus& corpus, const std::vector<pose::PoseLabelTable>* loaded,
                                            int beta, std::size_t jobs) {
  if (loaded) return *loaded;
  return pose::pose_label_tables(corpus, beta, static_cast<int>(jobs));
}

int run_train(TrainArgs& a, const Global& g, const json& config, std::ostream& out) {
  a.cfg.seed = g.seed;
  a.cfg.label_mode = checked([&] { return selector::parse_label_mode(a.label_mode); });
  checked([&] { a.cfg.validate(); });
  const Corpus train_corpus = load_manifest(a.train_manifest);
  const Corpus val_corpus = load_manifest(a.val_manifest);
  const auto labels = load_labels(a.labels);
  std::optional<std::vector<pose::PoseLabelTable>> loaded;
  if (!a.poses.empty()) loaded = pose::load_pose_labels(a.poses);
  const auto* lp = loaded ? &*loaded : nullptr;
  const auto train_tables = poses_for(train_corpus, lp, a.cfg.beta_deg, g.jobs);
  const auto val_tables = poses_for(val_corpus, lp, a.cfg.beta_deg, g.jobs);

  // The label-mode ablation alters training targets only; validation keeps the full sets.
  const auto train_set = selector::apply_label_mode(selector::build_examples(train_corpus, labels, train_tables),
                                                    a.cfg.label_mode, a.cfg.seed);
  const auto val_set = selector::build_examples(val_corpus, labels, val_tables);
  const auto result = selector::train(train_set, val_set, a.cfg);

  json ckpt = selector::checkpoint_json(result.params, a.cfg, result.history);
  ckpt["_meta"] = provenance(config);
  OutputFile f(a.output);
  f.stream() << ckpt.dump(1) << '\n';
  f.close();
  if (!a.log.empty()) {
    OutputFile log(a.log);
    log.stream() << config_comment(config);
    selector::write_training_log(log.stream(), result.history);
    log.close();
  }
  const auto& h = result.history;
  out << "train: " << h.stopped_epoch << " epochs" << (h.early_stopped ? " (early stop)" : "") << ", best epoch "
      << h.best_epoch << '\n';
  out << "label accuracy: train " << fixed(selector::label_accuracy(result.params, train_set), 4) << ", val "
      << fixed(selector::label_accuracy(result.params, val_set), 4) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- select

struct SelectArgs {
  std::string manifest;
  std::string checkpoint;
  std::size_t rank = 0;
  std::string name;
  std::string output;
};

void add_select(CLI::App& app, SelectArgs& a) {
  auto* c = app.add_subcommand("select", "Pick a view per clip with a trained selector");
  c->add_option("manifest", a.manifest, "Corpus manifest")->required();
  c->add_option("--checkpoint", a.checkpoint, "Selector checkpoint")->required();
  c->add_option("--rank", a.rank, "Position in the selector's logit order (0 = best)")->capture_default_str();
  c->add_option("--name", a.name, "Policy name (default: checkpoint file stem)");
  c->add_option("-o,--output", a.output, "Selection file to write")->required()->group(kOutputGroup);
}

std::string policy_name_for(const std::string& checkpoint, std::size_t rank) {
  std::string name = fs::path(checkpoint).stem().string();
  if (rank > 0) name += "@" + std::to_string(rank);
  return name;
}

int run_select(const SelectArgs& a, const json& config, std::ostream& out) {
  const Corpus corpus = load_manifest(a.manifest);
  const auto ckpt = selector::load_checkpoint(a.checkpoint);
  const std::string name = a.name.empty() ? policy_name_for(a.checkpoint, a.rank) : a.name;
  const auto sel = eval::selector_select(corpus, ckpt.params, name, a.rank);
  const json meta = provenance(config);
  OutputFile f(a.output);
  eval::write_selection(f.stream(), sel, &meta);
  f.close();
  out << "select: " << sel.choice.size() << " clips, policy " << name << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- evaluate / report

struct SignificanceArgs {
  std::size_t iterations = 1000;
  std::string metric = "cider";
  std::string reference;
};

void add_significance(CLI::App* c, SignificanceArgs& s) {
  c->add_option("--iterations", s.iterations, "Sign-flip permutations per test (0 disables testing)")
      ->capture_default_str();
  c->add_option("--test-metric", s.metric, "Metric compared by the permutation test")
      ->check(CLI::IsMember({"cider", "meteor", "v_iou", "n_iou", "nc_iou"}))
      ->capture_default_str();
  c->add_option("--reference", s.reference, "Policy every other policy is tested against (default: the first)");
}

void add_format(CLI::App* c, std::string& format) {
  c->add_option("--format", format, "Report format")
      ->check(CLI::IsMember({"text", "csv", "json"}))
      ->capture_default_str();
}

std::string render_significance(std::span<const eval::MetricReport> reports, const SignificanceArgs& s,
                                std::uint64_t seed, std::size_t jobs) {
  if (s.iterations == 0 || reports.size() < 2) return {};
  const eval::Metric metric = eval::parse_metric(s.metric);
  const eval::MetricReport* ref = &reports.front();
  if (!s.reference.empty()) {
    ref = nullptr;
    for (const auto& r : reports) {
      if (r.policy_name == s.reference) ref = &r;
    }
    if (!ref) throw UsageError("--reference names no evaluated policy: " + s.reference);
  }
  std::ostringstream o;
  o << "# paired sign-flip test on " << eval::column_name(metric) << " vs " << ref->policy_name << ", "
    << s.iterations << " permutations, seed " << seed << '\n';
  for (const auto& r : reports) {
    if (&r == ref) continue;
    const double p = eval::permutation_test(*ref, r, metric, s.iterations, seed, jobs);
    o << ref->policy_name << " vs " << r.policy_name << ": diff "
      << eval::format_value(ref->mean(metric) - r.mean(metric)) << ", p = " << fixed(p, 4) << '\n';
  }
  return o.str();
}

// Rendered report plus provenance in the form the format allows.
std::string report_file_text(std::span<const eval::MetricReport> reports, eval::ReportFormat format,
                             const json& config, const std::string& significance) {
  const std::string body = eval::render_report(reports, format);
  if (format == eval::ReportFormat::json) {
    json doc = json::parse(body);
    doc["_meta"] = provenance(config);
    return doc.dump(2) + "\n";
  }
  return config_comment(config) + body + (format == eval::ReportFormat::text ? significance : "");
}

struct EvaluateArgs {
  std::string manifest;
  std::string eval_captioner;
  std::vector<std::string> checkpoints;
  std::vector<std::string> selections;
  std::vector<std::string> baselines;
  std::size_t rank = 0;
  std::string lexicon;
  bool no_stem = false;
  std::string format = "text";
  SignificanceArgs significance;
  std::string output;
  std::string report;
};

void add_evaluate(CLI::App& app, EvaluateArgs& a) {
  auto* c = app.add_subcommand("evaluate", "Score selection policies against the narrations");
  c->add_option("manifest", a.manifest, "Corpus manifest")->required();
  c->add_option("--eval-captioner", a.eval_captioner, "Captioner whose captions are scored (default: first)");
  c->add_option("--checkpoint", a.checkpoints, "Selector checkpoint(s)")->delimiter(',');
  c->add_option("--selection", a.selections, "Selection file(s) written by select")->delimiter(',');
  c->add_option("--baselines", a.baselines, "Baseline policies")
      ->delimiter(',')
      ->check(CLI::IsMember({"ego_only", "random", "random_exo", "longest_caption", "oracle_best", "oracle_second",
                             "oracle_worst"}));
  c->add_option("--rank", a.rank, "Logit-order position used for checkpoints")->capture_default_str();
  c->add_option("--lexicon", a.lexicon, "Term lexicon (default: the shipped one)");
  c->add_flag("--no-stem", a.no_stem, "Score CIDEr on unstemmed tokens");
  add_format(c, a.format);
  add_significance(c, a.significance);
  c->add_option("-o,--output", a.output, "Per-clip report file to write")->group(kOutputGroup);
  c->add_option("--report", a.report, "Rendered report file to write")->group(kOutputGroup);
}

int run_evaluate(const EvaluateArgs& a, const Global& g, const json& config, std::ostream& out) {
  const auto format = checked([&] { return eval::parse_report_format(a.format); });
  if (a.checkpoints.empty() && a.selections.empty() && a.baselines.empty()) {
    throw UsageError("nothing to evaluate: give --checkpoint, --selection or --baselines");
  }
  const Corpus corpus = load_manifest(a.manifest);
  if (corpus.empty()) throw std::runtime_error("manifest has no clips");
  const std::string captioner = a.eval_captioner.empty() ? corpus.captioner_ids().front() : a.eval_captioner;
  text::MetricConfig cider_cfg;
  cider_cfg.stem = !a.no_stem;
  const auto idf = narration_idf(corpus, cider_cfg);
  const auto lexicon = text::load_lexicon(a.lexicon.empty() ? text::default_lexicon_path() : fs::path(a.lexicon));

  std::vector<eval::Selection> selections;
  for (const auto& path : a.checkpoints) {
    const auto ckpt = selector::load_checkpoint(path);
    selections.push_back(eval::selector_select(corpus, ckpt.params, policy_name_for(path, a.rank), a.rank));
  }
  for (const auto& path : a.selections) {
    auto in = open_input(path, "selection file");
    selections.push_back(eval::read_selection(in));
  }
  for (const auto& b : a.baselines) {
    selections.push_back(eval::baseline_select(corpus, eval::parse_baseline(b), g.seed, captioner, idf, cider_cfg));
  }
  std::set<std::string> names;
  for (const auto& s : selections) {
    if (!names.insert(s.policy_name).second) throw UsageError("two policies are named " + s.policy_name);
  }

  const eval::EvalContext ctx{captioner, &idf, &lexicon, cider_cfg, g.jobs};
  std::vector<eval::MetricReport> reports;
  for (const auto& s : selections) reports.push_back(eval::evaluate(s, corpus, ctx));
  const std::string significance = render_significance(reports, a.significance, g.seed, g.jobs);

  if (!a.output.empty()) {
    const json meta = provenance(config);
    OutputFile f(a.output);
    eval::write_reports(f.stream(), reports, &meta);
    f.close();
  }
  if (!a.report.empty()) {
    OutputFile f(a.report);
    f.stream() << report_file_text(reports, format, config, significance);
    f.close();
  }
  out << eval::render_report(reports, format);
  if (format == eval::ReportFormat::text) out << significance;
  return kExitOk;
}

struct ReportArgs {
  std::string reports;
  std::string format = "text";
  SignificanceArgs significance;
  std::string output;
};

void add_report(CLI::App& app, ReportArgs& a) {
  auto* c = app.add_subcommand("report", "Re-render and re-test a per-clip report file");
  c->add_option("reports", a.reports, "Per-clip report file written by evaluate")->required();
  add_format(c, a.format);
  add_significance(c, a.significance);
  c->add_option("-o,--output", a.output, "Rendered report file to write")->group(kOutputGroup);
}

int run_report(const ReportArgs& a, const Global& g, const json& config, std::ostream& out) {
  const auto format = checked([&] { return eval::parse_report_format(a.format); });
  auto in = open_input(a.reports, "report file");
  const auto reports = eval::read_reports(in);
  const std::string significance = render_significance(reports, a.significance, g.seed, g.jobs);
  if (!a.output.empty()) {
    OutputFile f(a.output);
    f.stream() << report_file_text(reports, format, config, significance);
    f.close();
  }
  out << eval::render_report(reports, format);
  if (format == eval::ReportFormat::text) out << significance;
  return kExitOk;
}

// ---------------------------------------------------------------- serve / tally

struct ServeArgs {
  std::string state_dir;
  std::string pairs;
  std::string session;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string media;
};

void add_serve(CLI::App& app, ServeArgs& a) {
  auto* c = app.add_subcommand("serve", "Run the pairwise judgment HTTP service");
  c->add_option("--state-dir", a.state_dir, "Directory holding sessions and judgment logs")->required();
  c->add_option("--pairs", a.pairs, "Pairs spec (JSON lines) to open a session from");
  c->add_option("--session", a.session, "Session id for --pairs");
  c->add_option("--host", a.host, "Listen address")->capture_default_str();
  c->add_option("--port", a.port, "Listen port")->check(CLI::Range(1, 65535))->capture_default_str();
  c->add_option("--media", a.media, "Directory served under /media");
}

int run_serve(const ServeArgs& a, const Global& g, std::ostream& out) {
  if (a.pairs.empty() != a.session.empty()) throw UsageError("--pairs and --session go together");
  judge::StudyService service(a.state_dir);
  if (!a.pairs.empty()) {
    const auto& s = service.open_or_create(a.session, judge::load_pairs_spec(a.pairs), g.seed);
    out << "session " << s.id() << ": " << s.pairs().size() << " pairs\n";
  }
  std::optional<fs::path> media;
  if (!a.media.empty()) media = a.media;
  judge::JudgeServer server(service, media);
  if (!server.bind(a.host, a.port)) throw std::runtime_error("cannot listen on " + a.host + ":" + std::to_string(a.port));
  out << "serving on http://" << a.host << ':' << a.port << std::endl;
  return server.listen_after_bind() ? kExitOk : kExitData;
}

struct TallyArgs {
  std::string state_dir;
  std::string session;
  std::string policy = "a";
  std::string mode = "judgments";
  std::string format = "text";
};

void add_tally(CLI::App& app, TallyArgs& a) {
  auto* c = app.add_subcommand("tally", "Win/loss/tie tally of a session, replayed from its log");
  c->add_option("--state-dir", a.state_dir, "Directory holding sessions and judgment logs")->required();
  c->add_option("--session", a.session, "Session id")->required();
  c->add_option("--policy", a.policy, "Side whose wins are counted")
      ->check(CLI::IsMember({"a", "b"}))
      ->capture_default_str();
  c->add_option("--mode", a.mode, "Count judgments, or per-pair majorities")
      ->check(CLI::IsMember({"judgments", "pairs"}))
      ->capture_default_str();
  c->add_option("--format", a.format, "Output format")->check(CLI::IsMember({"text", "json"}))->capture_default_str();
}

int run_tally(const TallyArgs& a, std::ostream& out) {
  const auto side = judge::parse_side(a.policy);
  const auto mode = judge::parse_tally_mode(a.mode);
  const judge::StudyService service(a.state_dir);
  const auto t = service.tally(a.session, side, mode);
  if (a.format == "json") {
    json j{{"session", a.session}, {"policy", a.policy}, {"mode", a.mode}, {"wins", t.wins},
           {"losses", t.losses},  {"ties", t.ties},      {"win", t.win_pct},  {"loss", t.loss_pct},
           {"tie", t.tie_pct},    {"p", t.p_value}};
    out << j.dump(2) << '\n';
    return kExitOk;
  }
  out << "session " << a.session << ", policy " << a.policy << ", " << a.mode << '\n';
  out << "win " << eval::format_value(t.win_pct) << "%  loss " << eval::format_value(t.loss_pct) << "%  tie "
      << eval::format_value(t.tie_pct) << "%  (" << t.wins << '/' << t.losses << '/' << t.ties
      << ")  sign test p = " << fixed(t.p_value, 4) << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weakly supervised best-view selection toolkit", "bestview"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML file supplying defaults; flags override it")->envname("BESTVIEW_CONFIG");

  Global g;
  app.add_option("--seed", g.seed, "Master seed for every random draw")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Worker threads for per-clip work")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.fallthrough();

  SynthArgs synth_a;
  ValidateArgs validate_a;
  SplitArgs split_a;
  PseudolabelArgs pseudolabel_a;
  PoselabelsArgs poselabels_a;
  TrainArgs train_a;
  SelectArgs select_a;
  EvaluateArgs evaluate_a;
  ReportArgs report_a;
  ServeArgs serve_a;
  TallyArgs tally_a;
  add_validate(app, validate_a);
  add_split(app, split_a);
  add_pseudolabel(app, pseudolabel_a);
  add_poselabels(app, poselabels_a);
  add_train(app, train_a);
  add_select(app, select_a);
  add_evaluate(app, evaluate_a);
  add_synth(app, synth_a);
  add_serve(app, serve_a);
  add_tally(app, tally_a);
  add_report(app, report_a);

  std::vector<std::string> argv_store{"bestview"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::string what = e.what();
    if (app.get_subcommands().empty()) {
      for (const auto& arg : app.remaining()) {
        if (arg.starts_with("-")) continue;
        what = "unknown subcommand '" + arg + "'";
        break;
      }
    }
    err << "error: " << what << "\n\n" << app.help();
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const json config = effective_config(app, *sub);
  const std::string name = sub->get_name();
  try {
    if (name == "synth") return run_synth(synth_a, g, config, out);
    if (name == "validate") return run_validate(validate_a, out);
    if (name == "split") return run_split(split_a, g, config, out);
    if (name == "pseudolabel") return run_pseudolabel(pseudolabel_a, g, config, out);
    if (name == "poselabels") return run_poselabels(poselabels_a, g, config, out);
    if (name == "train") return run_train(train_a, g, config, out);
    if (name == "select") return run_select(select_a, config, out);
    if (name == "evaluate") return run_evaluate(evaluate_a, g, config, out);
    if (name == "report") return run_report(report_a, g, config, out);
    if (name == "serve") return run_serve(serve_a, g, out);
    if (name == "tally") return run_tally(tally_a, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << sub->help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  err << "error: unhandled subcommand " << name << '\n';
  return kExitUsage;
}

}  // namespace bestview::cli
