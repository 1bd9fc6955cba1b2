#include "bestview/judge/study.hpp"

#include "bestview/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <cstring>

namespace bestview::judge {

using nlohmann::json;

namespace {

const char* kSessionSuffix = ".session.json";
const char* kLogSuffix = ".judgments.jsonl";

JudgeError bad(const std::string& what) { return JudgeError(ErrorKind::bad_request, what); }

void check_id(const std::string& id, const char* what) {
  const bool ok = !id.empty() && id.size() <= 128 && std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
  if (!ok || id.front() == '.') throw bad(std::string("invalid ") + what + " '" + id + "'");
}

json pair_json(const StudyPair& p) {
  return {{"clip_id", p.clip_id}, {"view_a", p.view_a}, {"view_b", p.view_b}, {"uri_a", p.uri_a}, {"uri_b", p.uri_b}};
}

StudyPair pair_from_json(const json& j) {
  StudyPair p{j.at("clip_id").get<std::string>(), j.at("view_a").get<std::string>(), j.at("view_b").get<std::string>(),
              j.at("uri_a").get<std::string>(), j.at("uri_b").get<std::string>()};
  if (p.clip_id.empty()) throw bad("empty clip_id");
  if (p.view_a == p.view_b) throw bad("clip " + p.clip_id + ": view_a and view_b are the same view");
  if (p.uri_a.empty() || p.uri_b.empty()) throw bad("clip " + p.clip_id + ": empty media uri");
  return p;
}

}  // namespace

std::vector<StudyPair> parse_pairs_spec(std::istream& in) {
  std::vector<StudyPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(pair_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw bad("pairs spec line " + std::to_string(lineno) + ": " + e.what());
    } catch (const JudgeError& e) {
      throw bad("pairs spec line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw bad("pairs spec has no pairs");
  return out;
}

std::vector<StudyPair> load_pairs_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw JudgeError(ErrorKind::not_found, "cannot open pairs spec " + path.string());
  return parse_pairs_spec(in);
}

Verdict parse_verdict(const std::string& s) {
  if (s == "first") return Verdict::first;
  if (s == "second") return Verdict::second;
  if (s == "both") return Verdict::both;
  throw bad("invalid verdict '" + s + "' (expected first, second or both)");
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::first: return "first";
    case Verdict::second: return "second";
    case Verdict::both: return "both";
  }
  return "?";
}

Outcome parse_outcome(const std::string& s) {
  if (s == "a") return Outcome::a;
  if (s == "b") return Outcome::b;
  if (s == "tie") return Outcome::tie;
  throw bad("invalid outcome '" + s + "'");
}

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::a: return "a";
    case Outcome::b: return "b";
    case Outcome::tie: return "tie";
  }
  return "?";
}

Side parse_side(const std::string& s) {
  if (s == "a") return Side::a;
  if (s == "b") return Side::b;
  throw bad("invalid policy side '" + s + "' (expected a or b)");
}

TallyMode parse_tally_mode(const std::string& s) {
  if (s == "judgments") return TallyMode::judgments;
  if (s == "pairs") return TallyMode::pairs;
  throw bad("invalid tally mode '" + s + "' (expected judgments or pairs)");
}

Outcome canonical_outcome(Verdict v, bool swapped) {
  if (v == Verdict::both) return Outcome::tie;
  const bool left_won = v == Verdict::first;
  return left_won != swapped ? Outcome::a : Outcome::b;
}

StudySession::StudySession(std::string id, std::vector<StudyPair> pairs, std::uint64_t seed)
    : id_(std::move(id)), pairs_(std::move(pairs)), seed_(seed) {
  check_id(id_, "session id");
  if (pairs_.empty()) throw bad("session " + id_ + " has no pairs");
  for (const auto& p : pairs_) {
    if (p.view_a == p.view_b) throw bad("clip " + p.clip_id + ": view_a and view_b are the same view");
  }
}

bool StudySession::swapped(const std::string& judge_id, std::size_t pair_index) const {
  Rng rng(derive_seed(derive_seed(seed_, stable_hash(judge_id)), pair_index + 1));
  return rng.coin(0.5);
}

std::vector<Presentation> StudySession::presentation(const std::string& judge_id) const {
  std::vector<std::size_t> order(pairs_.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(derive_seed(seed_, stable_hash(judge_id)), 0));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<Presentation> out;
  out.reserve(order.size());
  for (std::size_t idx : order) out.push_back({idx, swapped(judge_id, idx)});
  return out;
}

std::string record_to_json(const JudgmentRecord& r) {
  return json{{"session_id", r.session_id},
              {"judge_id", r.judge_id},
              {"pair_index", r.pair_index},
              {"verdict", to_string(r.verdict)},
              {"swapped", r.swapped},
              {"outcome", to_string(r.outcome)},
              {"timestamp_ms", r.timestamp_ms}}
      .dump();
}

JudgmentRecord record_from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    JudgmentRecord r;
    r.session_id = j.at("session_id").get<std::string>();
    r.judge_id = j.at("judge_id").get<std::string>();
    r.pair_index = j.at("pair_index").get<std::size_t>();
    r.verdict = parse_verdict(j.at("verdict").get<std::string>());
    r.swapped = j.at("swapped").get<bool>();
    r.outcome = parse_outcome(j.at("outcome").get<std::string>());
    r.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
    if (r.outcome != canonical_outcome(r.verdict, r.swapped)) throw bad("outcome does not match verdict and swap");
    return r;
  } catch (const json::exception& e) {
    throw bad(std::string("malformed judgment record: ") + e.what());
  }
}

std::vector<JudgmentRecord> read_log(std::istream& in) {
  std::vector<JudgmentRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(line));
    } catch (const JudgeError& e) {
      throw bad("judgment log line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

double sign_test(std::size_t wins, std::size_t losses) {
  const std::size_t n = wins + losses;
  if (n == 0) return 1.0;
  const std::size_t k = std::min(wins, losses);
  const double ln2 = std::log(2.0);
  const double lgn = std::lgamma(static_cast<double>(n) + 1.0);
  double tail = 0.0;
  for (std::size_t i = 0; i <= k; ++i) {
    tail += std::exp(lgn - std::lgamma(static_cast<double>(i) + 1.0) - std::lgamma(static_cast<double>(n - i) + 1.0) -
                     static_cast<double>(n) * ln2);
  }
  return std::min(1.0, 2.0 * tail);
}

Tally tally_counts(std::size_t wins, std::size_t losses, std::size_t ties) {
  const std::size_t total = wins + losses + ties;
  if (total == 0) throw JudgeError(ErrorKind::conflict, "no judgments to tally");
  auto pct = [&](std::size_t x) {
    return std::round(1000.0 * static_cast<double>(x) / static_cast<double>(total)) / 10.0;
  };
  return {wins, losses, ties, pct(wins), pct(losses), pct(ties), sign_test(wins, losses)};
}

Tally tally_records(std::span<const JudgmentRecord> records, Side side, TallyMode mode) {
  const Outcome mine = side == Side::a ? Outcome::a : Outcome::b;
  const Outcome theirs = side == Side::a ? Outcome::b : Outcome::a;
  std::size_t w = 0, l = 0, t = 0;
  auto count = [&](Outcome o) {
    if (o == mine) ++w;
    else if (o == theirs) ++l;
    else ++t;
  };
  if (mode == TallyMode::judgments) {
    for (const auto& r : records) count(r.outcome);
  } else {
    std::map<std::size_t, std::array<std::size_t, 3>> per_pair;
    for (const auto& r : records) ++per_pair[r.pair_index][static_cast<std::size_t>(r.outcome)];
    for (const auto& [idx, c] : per_pair) {
      const std::size_t top = *std::max_element(c.begin(), c.end());
      if (std::count(c.begin(), c.end(), top) > 1) {
        count(Outcome::tie);
      } else {
        count(static_cast<Outcome>(std::max_element(c.begin(), c.end()) - c.begin()));
      }
    }
  }
  return tally_counts(w, l, t);
}

Clock system_clock_ms() {
  return [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
}

struct StudyService::State {
  StudySession session;
  std::vector<JudgmentRecord> records;
  std::map<std::string, std::set<std::size_t>> judged;

  void apply(const JudgmentRecord& r) {
    judged[r.judge_id].insert(r.pair_index);
    records.push_back(r);
  }

  // First pair in the judge's order without a judgment.
  std::optional<Presentation> current(const std::string& judge) const {
    const auto it = judged.find(judge);
    for (const auto& p : session.presentation(judge)) {
      if (it == judged.end() || !it->second.contains(p.pair_index)) return p;
    }
    return std::nullopt;
  }
};

StudyService::StudyService(std::filesystem::path state_dir, Clock clock) : dir_(std::move(state_dir)), clock_(std::move(clock)) {
  std::filesystem::create_directories(dir_);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir_)) {
    const std::string name = e.path().filename().string();
    if (name.size() > std::strlen(kSessionSuffix) && name.ends_with(kSessionSuffix)) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    json j;
    try {
      j = json::parse(in);
      std::vector<StudyPair> pairs;
      for (const auto& p : j.at("pairs")) pairs.push_back(pair_from_json(p));
      auto st = std::make_unique<State>(
          State{StudySession(j.at("session_id").get<std::string>(), std::move(pairs), j.at("seed").get<std::uint64_t>()), {}, {}});
      std::ifstream log(log_path(st->session.id()));
      if (log) {
        for (const auto& r : read_log(log)) {
          if (r.session_id != st->session.id() || r.pair_index >= st->session.pairs().size() ||
              st->session.swapped(r.judge_id, r.pair_index) != r.swapped ||
              st->judged[r.judge_id].contains(r.pair_index)) {
            throw bad("judgment log for session " + st->session.id() + " is inconsistent with the session");
          }
          st->apply(r);
        }
      }
      const std::string id = st->session.id();
      sessions_.emplace(id, std::move(st));
    } catch (const json::exception& e) {
      throw bad("session file " + f.string() + ": " + e.what());
    }
  }
}

StudyService::~StudyService() = default;

std::filesystem::path StudyService::session_path(const std::string& id) const { return dir_ / (id + kSessionSuffix); }
std::filesystem::path StudyService::log_path(const std::string& id) const { return dir_ / (id + kLogSuffix); }

const StudySession& StudyService::create_session(const std::string& id, std::vector<StudyPair> pairs, std::uint64_t seed) {
  StudySession s(id, std::move(pairs), seed);
  std::lock_guard lock(mu_);
  if (sessions_.contains(id)) throw JudgeError(ErrorKind::conflict, "session " + id + " already exists");
  json pj = json::array();
  for (const auto& p : s.pairs()) pj.push_back(pair_json(p));
  std::ofstream out(session_path(id));
  out << json{{"session_id", id}, {"seed", seed}, {"pairs", pj}}.dump(1) << '\n';
  out.flush();
  if (!out) throw std::runtime_error("cannot write session file " + session_path(id).string());
  auto st = std::make_unique<State>(State{std::move(s), {}, {}});
  return sessions_.emplace(id, std::move(st)).first->second->session;
}

const StudySession& StudyService::open_or_create(const std::string& id, std::vector<StudyPair> pairs, std::uint64_t seed) {
  {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(id);
    if (it != sessions_.end()) {
      const StudySession& s = it->second->session;
      if (s.seed() != seed || s.pairs() != pairs) {
        throw JudgeError(ErrorKind::conflict, "session " + id + " exists with different pairs or seed");
      }
      return s;
    }
  }
  return create_session(id, std::move(pairs), seed);
}

StudyService::State& StudyService::state(const std::string& id) const {
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw JudgeError(ErrorKind::not_found, "unknown session '" + id + "'");
  return *it->second;
}

const StudySession& StudyService::session(const std::string& id) const {
  std::lock_guard lock(mu_);
  return state(id).session;
}

std::vector<std::string> StudyService::session_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> ids;
  for (const auto& [id, st] : sessions_) ids.push_back(id);
  return ids;
}

std::optional<PairDescriptor> StudyService::next_pair(const std::string& session_id, const std::string& judge_id) const {
  check_id(judge_id, "judge id");
  std::lock_guard lock(mu_);
  const State& st = state(session_id);
  const auto cur = st.current(judge_id);
  if (!cur) return std::nullopt;
  const StudyPair& p = st.session.pairs()[cur->pair_index];
  const auto it = st.judged.find(judge_id);
  PairDescriptor d;
  d.pair_index = cur->pair_index;
  d.left_uri = cur->swapped ? p.uri_b : p.uri_a;
  d.right_uri = cur->swapped ? p.uri_a : p.uri_b;
  d.done = it == st.judged.end() ? 0 : it->second.size();
  d.total = st.session.pairs().size();
  return d;
}

std::size_t StudyService::progress(const std::string& session_id, const std::string& judge_id) const {
  std::lock_guard lock(mu_);
  const State& st = state(session_id);
  const auto it = st.judged.find(judge_id);
  return it == st.judged.end() ? 0 : it->second.size();
}

JudgmentRecord StudyService::submit(const std::string& session_id, const std::string& judge_id, std::size_t pair_index,
                                    Verdict verdict) {
  check_id(judge_id, "judge id");
  std::lock_guard lock(mu_);
  State& st = state(session_id);
  if (pair_index >= st.session.pairs().size()) {
    throw JudgeError(ErrorKind::not_found, "session " + session_id + " has no pair " + std::to_string(pair_index));
  }
  const auto it = st.judged.find(judge_id);
  if (it != st.judged.end() && it->second.contains(pair_index)) {
    throw JudgeError(ErrorKind::conflict, "duplicate judgment for pair " + std::to_string(pair_index));
  }
  const auto cur = st.current(judge_id);
  if (!cur || cur->pair_index != pair_index) {
    throw JudgeError(ErrorKind::conflict, "pair " + std::to_string(pair_index) + " is not the pair currently served");
  }
  JudgmentRecord r{session_id, judge_id, pair_index, verdict, cur->swapped, canonical_outcome(verdict, cur->swapped),
                   clock_()};
  std::ofstream log(log_path(session_id), std::ios::app);
  log << record_to_json(r) << '\n';
  log.flush();
  if (!log) throw std::runtime_error("cannot append to judgment log " + log_path(session_id).string());
  st.apply(r);
  return r;
}

std::vector<JudgmentRecord> StudyService::records(const std::string& session_id) const {
  std::lock_guard lock(mu_);
  return state(session_id).records;
}

Tally StudyService::tally(const std::string& session_id, Side side, TallyMode mode) const {
  std::lock_guard lock(mu_);
  return tally_records(state(session_id).records, side, mode);
}

}  // namespace bestview::judge
