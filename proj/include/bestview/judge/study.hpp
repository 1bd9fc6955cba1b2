#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bestview::judge {

enum class ErrorKind { bad_request, not_found, conflict };

class JudgeError : public std::runtime_error {
 public:
  JudgeError(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

/// view_a is the policy-of-interest side "a"; view_b is side "b".
struct StudyPair {
  std::string clip_id;
  std::string view_a;
  std::string view_b;
  std::string uri_a;
  std::string uri_b;
  bool operator==(const StudyPair&) const = default;
};

/// JSON lines {"clip_id", "view_a", "view_b", "uri_a", "uri_b"}; blank lines skipped.
std::vector<StudyPair> parse_pairs_spec(std::istream& in);
std::vector<StudyPair> load_pairs_spec(const std::filesystem::path& path);

enum class Verdict { first, second, both };
enum class Outcome { a, b, tie };
enum class Side { a, b };
enum class TallyMode { judgments, pairs };

Verdict parse_verdict(const std::string& s);
std::string to_string(Verdict v);
Outcome parse_outcome(const std::string& s);
std::string to_string(Outcome o);
Side parse_side(const std::string& s);
TallyMode parse_tally_mode(const std::string& s);

/// Maps what the judge saw back to the canonical pair: "first" is the left
/// view, which is view_b when the pair was shown swapped.
Outcome canonical_outcome(Verdict v, bool swapped);

struct Presentation {
  std::size_t pair_index = 0;
  bool swapped = false;
};

class StudySession {
 public:
  StudySession(std::string id, std::vector<StudyPair> pairs, std::uint64_t seed);

  const std::string& id() const { return id_; }
  const std::vector<StudyPair>& pairs() const { return pairs_; }
  std::uint64_t seed() const { return seed_; }

  /// The judge's pair order and left/right swaps, a pure function of
  /// (seed, judge_id, pair_index).
  std::vector<Presentation> presentation(const std::string& judge_id) const;
  bool swapped(const std::string& judge_id, std::size_t pair_index) const;

 private:
  std::string id_;
  std::vector<StudyPair> pairs_;
  std::uint64_t seed_;
};

struct PairDescriptor {
  std::size_t pair_index = 0;
  std::string left_uri;
  std::string right_uri;
  std::size_t done = 0;
  std::size_t total = 0;
};

struct JudgmentRecord {
  std::string session_id;
  std::string judge_id;
  std::size_t pair_index = 0;
  Verdict verdict = Verdict::both;
  bool swapped = false;
  Outcome outcome = Outcome::tie;
  std::int64_t timestamp_ms = 0;
  bool operator==(const JudgmentRecord&) const = default;
};

std::string record_to_json(const JudgmentRecord& r);
JudgmentRecord record_from_json(const std::string& line);
std::vector<JudgmentRecord> read_log(std::istream& in);

struct Tally {
  std::size_t wins = 0;
  std::size_t losses = 0;
  std::size_t ties = 0;
  double win_pct = 0.0;  // rounded to one decimal
  double loss_pct = 0.0;
  double tie_pct = 0.0;
  double p_value = 1.0;
  bool operator==(const Tally&) const = default;
};

/// Exact two-sided binomial sign test with p = 1/2, capped at 1.
double sign_test(std::size_t wins, std::size_t losses);

Tally tally_counts(std::size_t wins, std::size_t losses, std::size_t ties);

/// Judgment mode counts every record. Pair mode first takes a majority
/// outcome per pair (ties between outcomes count as a tie).
Tally tally_records(std::span<const JudgmentRecord> records, Side side, TallyMode mode = TallyMode::judgments);

using Clock = std::function<std::int64_t()>;
Clock system_clock_ms();

/// Sessions and append-only judgment logs under a state directory. Reopening
/// the directory replays each log, so the log is the source of truth.
class StudyService {
 public:
  explicit StudyService(std::filesystem::path state_dir, Clock clock = system_clock_ms());
  ~StudyService();
  StudyService(const StudyService&) = delete;
  StudyService& operator=(const StudyService&) = delete;

  const StudySession& create_session(const std::string& id, std::vector<StudyPair> pairs, std::uint64_t seed);
  /// Returns the existing session when id, pairs and seed all match.
  const StudySession& open_or_create(const std::string& id, std::vector<StudyPair> pairs, std::uint64_t seed);
  const StudySession& session(const std::string& id) const;
  std::vector<std::string> session_ids() const;

  /// Next unjudged pair in the judge's order, or nullopt when done.
  std::optional<PairDescriptor> next_pair(const std::string& session_id, const std::string& judge_id) const;
  std::size_t progress(const std::string& session_id, const std::string& judge_id) const;

  /// Accepts only the pair currently served to this judge.
  JudgmentRecord submit(const std::string& session_id, const std::string& judge_id, std::size_t pair_index,
                        Verdict verdict);

  std::vector<JudgmentRecord> records(const std::string& session_id) const;
  Tally tally(const std::string& session_id, Side side, TallyMode mode = TallyMode::judgments) const;

  std::filesystem::path session_path(const std::string& id) const;
  std::filesystem::path log_path(const std::string& id) const;

 private:
  struct State;
  State& state(const std::string& id) const;

  std::filesystem::path dir_;
  Clock clock_;
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<State>> sessions_;
};

}  // namespace bestview::judge
