#include "doctest.h"

#include "cli.hpp"

#include "bestview/judge/study.hpp"
#include "bestview/pseudolabel.hpp"

#include "json.hpp"
#include "temp_dir.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace bestview;

namespace {

struct RunResult {
  int code;
  std::string out;
  std::string err;
};

RunResult run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

}  // namespace

TEST_CASE("usage errors exit 1, data errors exit 2") {
  testing::TempDir dir("cli");
  const auto none = run({});
  CHECK(none.code == cli::kExitUsage);
  CHECK(none.err.find("Usage") != std::string::npos);

  const auto unknown = run({"frobnicate"});
  CHECK(unknown.code == cli::kExitUsage);
  CHECK(unknown.err.find("unknown subcommand 'frobnicate'") != std::string::npos);
  CHECK(unknown.err.find("Subcommands:") != std::string::npos);

  CHECK(run({"--help"}).code == cli::kExitOk);
  CHECK(run({"synth", "--help"}).code == cli::kExitOk);
  CHECK(run({"synth"}).code == cli::kExitUsage);  // -o missing
  CHECK(run({"synth", "--views", "1", "-o", (dir / "x.jsonl").string()}).code == cli::kExitUsage);
  CHECK(run({"--jobs", "0", "validate", "x"}).code == cli::kExitUsage);
  CHECK(run({"pseudolabel", "x", "--policy", "plurality", "-o", "y"}).code == cli::kExitUsage);
  CHECK(run({"evaluate", "x"}).code == cli::kExitUsage);  // nothing to evaluate

  const auto missing = run({"validate", (dir / "missing.jsonl").string()});
  CHECK(missing.code == cli::kExitData);
  CHECK(missing.err.find("missing.jsonl") != std::string::npos);
  std::ofstream(dir / "broken.jsonl") << "{not json\n";
  const auto broken = run({"validate", (dir / "broken.jsonl").string()});
  CHECK(broken.code == cli::kExitData);
  CHECK(broken.err.find("line 1") != std::string::npos);
}

TEST_CASE("pipeline end to end is deterministic") {
  testing::TempDir dir("cli");
  auto p = [&](const std::string& name) { return (dir / name).string(); };

  REQUIRE(run({"synth", "--clips", "60", "--views", "4", "--f-dim", "8", "--seed", "7", "-o", p("corpus.jsonl")}).code ==
          0);
  REQUIRE(run({"synth", "--clips", "60", "--views", "4", "--f-dim", "8", "--seed", "7", "-o", p("again.jsonl")}).code ==
          0);
  CHECK(slurp(p("corpus.jsonl")) == slurp(p("again.jsonl")));
  REQUIRE(run({"synth", "--clips", "60", "--views", "4", "--f-dim", "8", "--seed", "8", "-o", p("other.jsonl")}).code ==
          0);
  CHECK(slurp(p("corpus.jsonl")) != slurp(p("other.jsonl")));

  // Effective config sits in the manifest header, without output paths.
  const auto header = nlohmann::json::parse(first_line(slurp(p("corpus.jsonl"))));
  CHECK(header.at("_meta").at("config").at("seed") == "7");
  CHECK(header.at("_meta").at("config").at("clips") == "60");
  CHECK_FALSE(header.at("_meta").at("config").contains("output"));
  CHECK(header.at("_meta").at("planted").size() == 60);

  const auto v = run({"validate", p("corpus.jsonl")});
  CHECK(v.code == 0);
  CHECK(v.out.find("60 clips, 4 views") != std::string::npos);

  REQUIRE(run({"split", p("corpus.jsonl"), "--val-frac", "0.2", "--test-frac", "0.2", "--out-dir", p("sp")}).code == 0);
  CHECK(slurp(p("sp/train.jsonl")).find("\"split\":\"train\"") != std::string::npos);

  REQUIRE(run({"pseudolabel", p("corpus.jsonl"), "--policy", "union", "-o", p("labels.jsonl")}).code == 0);
  REQUIRE(run({"--jobs", "3", "pseudolabel", p("corpus.jsonl"), "--policy", "union", "-o", p("labels3.jsonl")}).code ==
          0);
  CHECK(slurp(p("labels.jsonl")) == slurp(p("labels3.jsonl")));
  CHECK(run({"validate", p("corpus.jsonl"), "--labels", p("labels.jsonl")}).code == 0);
  REQUIRE(run({"synth", "--clips", "20", "--views", "4", "-o", p("small.jsonl")}).code == 0);
  REQUIRE(run({"pseudolabel", p("small.jsonl"), "-o", p("other_labels.jsonl")}).code == 0);
  CHECK(run({"validate", p("corpus.jsonl"), "--labels", p("other_labels.jsonl")}).code == cli::kExitData);

  REQUIRE(run({"poselabels", p("corpus.jsonl"), "--beta", "30", "-o", p("poses.jsonl")}).code == 0);
  CHECK(run({"validate", p("corpus.jsonl"), "--poses", p("poses.jsonl")}).code == 0);
  CHECK(run({"poselabels", p("corpus.jsonl"), "--beta", "7", "-o", p("bad.jsonl")}).code == cli::kExitUsage);

  const std::vector<std::string> train_args{"train",        "--train",    p("sp/train.jsonl"), "--val",
                                            p("sp/val.jsonl"), "--labels", p("labels.jsonl"),   "--poses",
                                            p("poses.jsonl"), "--max-epochs", "15",            "--h-dim",
                                            "8"};
  auto with = [](std::vector<std::string> base, std::vector<std::string> extra) {
    base.insert(base.end(), extra.begin(), extra.end());
    return base;
  };
  const auto tr = run(with(train_args, {"-o", p("ckpt.json"), "--log", p("log.csv")}));
  REQUIRE(tr.code == 0);
  CHECK(tr.out.find("label accuracy") != std::string::npos);
  REQUIRE(run(with(train_args, {"-o", p("ckpt2.json")})).code == 0);
  CHECK(slurp(p("ckpt.json")) == slurp(p("ckpt2.json")));
  const std::string log = slurp(p("log.csv"));
  CHECK(log.starts_with("# config: "));
  CHECK(log.find("epoch,L^W,L^P,L^S,val_LS,val_acc") != std::string::npos);
  // Pose tables at a different bin width are refused.
  CHECK(run(with(train_args, {"--beta", "45", "-o", p("ckpt3.json")})).code == cli::kExitData);
  REQUIRE(run(with(train_args, {"--w", "0", "--label-mode", "random_single", "-o", p("ablation.json")})).code == 0);

  REQUIRE(run({"select", p("sp/test.jsonl"), "--checkpoint", p("ckpt.json"), "-o", p("sel.jsonl")}).code == 0);
  const std::vector<std::string> eval_args{"evaluate",     p("sp/test.jsonl"), "--checkpoint", p("ckpt.json"),
                                           "--selection",  p("sel.jsonl"),     "--baselines",  "random,oracle_best",
                                           "--iterations", "200"};
  // The checkpoint and its saved selection share a policy name.
  CHECK(run(with(eval_args, {"-o", p("r.jsonl")})).code == cli::kExitUsage);
  const std::vector<std::string> eval_ok{"evaluate",  p("sp/test.jsonl"),      "--checkpoint", p("ckpt.json"),
                                         "--checkpoint", p("ablation.json"), "--baselines",  "random,oracle_best",
                                         "--iterations", "200"};
  const auto ev = run(with(eval_ok, {"-o", p("r.jsonl"), "--report", p("r.csv"), "--format", "csv"}));
  REQUIRE(ev.code == 0);
  const auto ev2 = run(with(eval_ok, {"-o", p("r2.jsonl"), "--report", p("r2.csv"), "--format", "csv"}));
  CHECK(ev.out == ev2.out);
  CHECK(slurp(p("r.jsonl")) == slurp(p("r2.jsonl")));
  CHECK(slurp(p("r.csv")) == slurp(p("r2.csv")));
  CHECK(ev.out.starts_with("policy,CIDEr,METEOR,V-IoU,N-IoU,NC-IoU\n"));
  CHECK(std::count(ev.out.begin(), ev.out.end(), '\n') == 5);
  for (const char* name : {"ckpt,", "ablation,", "random,", "oracle_best,"}) CHECK(ev.out.find(name) != std::string::npos);

  const auto text = run({"report", p("r.jsonl"), "--iterations", "200"});
  REQUIRE(text.code == 0);
  CHECK(text.out.find("# CIDEr = mean CIDEr-D x 10") != std::string::npos);
  CHECK(text.out.find("ckpt vs oracle_best: diff") != std::string::npos);
  const auto csv = run({"report", p("r.jsonl"), "--format", "csv"});
  CHECK(csv.out == ev.out);
  const auto json_out = run({"report", p("r.jsonl"), "--format", "json", "-o", p("r.json")});
  CHECK(nlohmann::json::parse(json_out.out).at("reports").size() == 4);
  CHECK(nlohmann::json::parse(slurp(p("r.json"))).at("_meta").at("config").at("command") == "report");
  CHECK(run({"report", p("r.jsonl"), "--reference", "nobody"}).code == cli::kExitUsage);
}

TEST_CASE("config file supplies defaults, flags override") {
  testing::TempDir dir("cli");
  auto p = [&](const std::string& name) { return (dir / name).string(); };
  std::ofstream(dir / "cfg.toml") << "seed = 5\n[synth]\nclips = 4\nviews = 3\n";
  REQUIRE(run({"--config", p("cfg.toml"), "synth", "-o", p("a.jsonl")}).code == 0);
  auto cfg = nlohmann::json::parse(first_line(slurp(p("a.jsonl")))).at("_meta").at("config");
  CHECK(cfg.at("seed") == "5");
  CHECK(cfg.at("clips") == "4");
  REQUIRE(run({"--config", p("cfg.toml"), "synth", "--clips", "6", "--seed", "9", "-o", p("b.jsonl")}).code == 0);
  cfg = nlohmann::json::parse(first_line(slurp(p("b.jsonl")))).at("_meta").at("config");
  CHECK(cfg.at("seed") == "9");
  CHECK(cfg.at("clips") == "6");
  CHECK(cfg.at("views") == "3");
  CHECK(run({"--config", p("nope.toml"), "synth", "-o", p("c.jsonl")}).code == cli::kExitUsage);

  ::setenv("BESTVIEW_CONFIG", p("cfg.toml").c_str(), 1);
  const auto env = run({"synth", "-o", p("d.jsonl")});
  ::unsetenv("BESTVIEW_CONFIG");
  REQUIRE(env.code == 0);
  CHECK(slurp(p("d.jsonl")) == slurp(p("a.jsonl")));
}

TEST_CASE("tally replays the judgment log") {
  testing::TempDir dir("cli");
  {
    judge::StudyService svc(dir / "state", [] { return std::int64_t{0}; });
    std::vector<judge::StudyPair> pairs;
    for (int i = 0; i < 10; ++i) {
      const std::string c = "c" + std::to_string(i);
      pairs.push_back({c, "exo", "ego", c + "_a.mp4", c + "_b.mp4"});
    }
    svc.create_session("s", pairs, 1);
    for (int k = 0; k < 10; ++k) {
      const auto d = svc.next_pair("s", "j");
      const bool swapped = svc.session("s").swapped("j", d->pair_index);
      // 8 wins for side a, 1 loss, 1 tie.
      judge::Verdict v = k < 8 ? (swapped ? judge::Verdict::second : judge::Verdict::first)
                               : k == 8 ? (swapped ? judge::Verdict::first : judge::Verdict::second)
                                        : judge::Verdict::both;
      svc.submit("s", "j", d->pair_index, v);
    }
  }
  const auto t = run({"tally", "--state-dir", (dir / "state").string(), "--session", "s"});
  REQUIRE(t.code == 0);
  CHECK(t.out.find("win 80.0%  loss 10.0%  tie 10.0%  (8/1/1)") != std::string::npos);
  const auto j = run({"tally", "--state-dir", (dir / "state").string(), "--session", "s", "--policy", "b", "--format",
                      "json"});
  REQUIRE(j.code == 0);
  const auto doc = nlohmann::json::parse(j.out);
  CHECK(doc.at("win").get<double>() == 10.0);
  CHECK(doc.at("loss").get<double>() == 80.0);
  CHECK(run({"tally", "--state-dir", (dir / "state").string(), "--session", "ghost"}).code == cli::kExitData);
  CHECK(run({"serve", "--state-dir", (dir / "state").string(), "--pairs", "x.jsonl"}).code == cli::kExitUsage);
}
