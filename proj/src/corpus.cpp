#include "bestview/corpus.hpp"

#include "bestview/rng.hpp"

#include <Eigen/LU>

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace bestview {

using nlohmann::json;

ManifestError::ManifestError(std::size_t line, const std::string& what)
    : CorpusError("manifest line " + std::to_string(line) + ": " + what), line_(line) {}

bool is_proper_rotation(const Eigen::Matrix3d& r, double tol) {
  if (!r.allFinite()) return false;
  const Eigen::Matrix3d gram = r * r.transpose();
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(r.determinant() - 1.0) <= tol;
}

std::size_t Clip::ego_index() const {
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views[i].is_ego) return i;
  }
  throw CorpusError("clip " + clip_id + ": no ego view");
}

std::string to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
  }
  return "unknown";
}

namespace {

std::optional<SplitTag> parse_split_tag(const std::string& s) {
  if (s == "train") return SplitTag::train;
  if (s == "val") return SplitTag::val;
  if (s == "test") return SplitTag::test;
  throw CorpusError("unknown split tag '" + s + "'");
}

void validate_clip(const Clip& clip, const std::vector<std::string>& captioner_ids,
                   std::size_t f_dim) {
  const std::string where = "clip " + clip.clip_id;
  if (clip.clip_id.empty()) throw CorpusError("clip with empty clip_id");
  if (clip.views.size() < 2) {
    throw CorpusError(where + ": needs at least 2 views, got " + std::to_string(clip.views.size()));
  }
  std::size_t ego = 0;
  std::set<std::string> ids;
  for (const auto& v : clip.views) {
    const std::string vwhere = where + " view " + v.view_id;
    if (!ids.insert(v.view_id).second) throw CorpusError(where + ": duplicate view_id " + v.view_id);
    if (v.is_ego) ++ego;
    if (v.feature.size() != f_dim) {
      throw CorpusError(vwhere + ": feature length " + std::to_string(v.feature.size()) +
                        " does not match f_dim " + std::to_string(f_dim));
    }
    for (double x : v.feature) {
      if (!std::isfinite(x)) throw CorpusError(vwhere + ": non-finite feature value");
    }
    if (!is_proper_rotation(v.extrinsics.rotation)) {
      std::ostringstream msg;
      msg << vwhere << ": extrinsics rotation is not a proper rotation (det="
          << v.extrinsics.rotation.determinant() << ")";
      throw CorpusError(msg.str());
    }
    if (!v.extrinsics.translation.allFinite()) {
      throw CorpusError(vwhere + ": non-finite extrinsics translation");
    }
    for (const auto& cid : captioner_ids) {
      if (!v.captions.contains(cid)) throw CorpusError(vwhere + ": missing caption for captioner " + cid);
    }
  }
  if (ego == 0) throw CorpusError(where + ": no ego view");
  if (ego > 1) throw CorpusError(where + ": multiple ego views");
}

}  // namespace

Corpus::Corpus(std::vector<std::string> captioner_ids, std::size_t f_dim, std::vector<Clip> clips,
               std::optional<SplitTag> split)
    : captioner_ids_(std::move(captioner_ids)), f_dim_(f_dim), clips_(std::move(clips)), split_(split) {
  if (captioner_ids_.empty()) throw CorpusError("corpus: captioner_ids is empty");
  if (f_dim_ == 0) throw CorpusError("corpus: f_dim must be positive");
  std::set<std::string> cids(captioner_ids_.begin(), captioner_ids_.end());
  if (cids.size() != captioner_ids_.size()) throw CorpusError("corpus: duplicate captioner_id");

  std::set<std::string> seen;
  for (const auto& clip : clips_) {
    validate_clip(clip, captioner_ids_, f_dim_);
    if (!seen.insert(clip.clip_id).second) throw CorpusError("corpus: duplicate clip_id " + clip.clip_id);
    if (clip.views.size() != clips_.front().views.size()) {
      throw CorpusError("clip " + clip.clip_id + ": view count " + std::to_string(clip.views.size()) +
                        " differs from corpus view count " +
                        std::to_string(clips_.front().views.size()));
    }
  }
}

const Clip* Corpus::find(const std::string& clip_id) const {
  for (const auto& c : clips_) {
    if (c.clip_id == clip_id) return &c;
  }
  return nullptr;
}

namespace {

template <typename T>
T field(const json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key)) throw CorpusError(std::string("missing field '") + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw CorpusError(std::string("invalid type for field '") + key + "'");
  }
}

CameraExtrinsics parse_extrinsics(const json& j) {
  const auto r = field<std::vector<double>>(j, "R");
  const auto t = field<std::vector<double>>(j, "t");
  if (r.size() != 9) throw CorpusError("extrinsics R must have 9 entries, got " + std::to_string(r.size()));
  if (t.size() != 3) throw CorpusError("extrinsics t must have 3 entries, got " + std::to_string(t.size()));
  CameraExtrinsics e;
  for (int row = 0; row < 3; ++row) {
    for (int col = 0; col < 3; ++col) e.rotation(row, col) = r[static_cast<std::size_t>(row * 3 + col)];
    e.translation(row) = t[static_cast<std::size_t>(row)];
  }
  return e;
}

Clip parse_clip(const json& j) {
  Clip clip;
  clip.clip_id = field<std::string>(j, "clip_id");
  clip.narration = field<std::string>(j, "narration");
  const auto& views = j.contains("views") ? j.at("views") : throw CorpusError("missing field 'views'");
  if (!views.is_array()) throw CorpusError("invalid type for field 'views'");
  for (const auto& vj : views) {
    ViewRecord v;
    v.view_id = field<std::string>(vj, "view_id");
    v.is_ego = field<bool>(vj, "is_ego");
    v.feature = field<std::vector<double>>(vj, "feature");
    if (!vj.contains("extrinsics")) throw CorpusError("missing field 'extrinsics'");
    v.extrinsics = parse_extrinsics(vj.at("extrinsics"));
    v.captions = field<std::map<std::string, std::string>>(vj, "captions");
    clip.views.push_back(std::move(v));
  }
  return clip;
}

json clip_to_json(const Clip& clip) {
  json views = json::array();
  for (const auto& v : clip.views) {
    std::vector<double> r(9);
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 3; ++col) r[static_cast<std::size_t>(row * 3 + col)] = v.extrinsics.rotation(row, col);
    }
    const std::vector<double> t{v.extrinsics.translation(0), v.extrinsics.translation(1),
                                v.extrinsics.translation(2)};
    views.push_back({{"view_id", v.view_id},
                     {"is_ego", v.is_ego},
                     {"feature", v.feature},
                     {"extrinsics", {{"R", r}, {"t", t}}},
                     {"captions", v.captions}});
  }
  return {{"clip_id", clip.clip_id}, {"narration", clip.narration}, {"views", std::move(views)}};
}

}  // namespace

Corpus parse_manifest(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::vector<std::string>> captioners;
  std::size_t f_dim = 0;
  std::optional<SplitTag> split;
  std::vector<Clip> clips;
  std::set<std::string> seen;

  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ManifestError(lineno, std::string("parse error: ") + e.what());
    }
    try {
      if (!captioners) {
        captioners = field<std::vector<std::string>>(j, "captioner_ids");
        const auto fd = field<long long>(j, "f_dim");
        if (fd <= 0) throw CorpusError("f_dim must be positive");
        f_dim = static_cast<std::size_t>(fd);
        if (j.contains("split") && !j.at("split").is_null()) split = parse_split_tag(j.at("split").get<std::string>());
        if (captioners->empty()) throw CorpusError("captioner_ids is empty");
        continue;
      }
      Clip clip = parse_clip(j);
      validate_clip(clip, *captioners, f_dim);
      if (!seen.insert(clip.clip_id).second) throw CorpusError("duplicate clip_id " + clip.clip_id);
      if (!clips.empty() && clip.views.size() != clips.front().views.size()) {
        throw CorpusError("clip " + clip.clip_id + ": view count " + std::to_string(clip.views.size()) +
                          " differs from corpus view count " + std::to_string(clips.front().views.size()));
      }
      clips.push_back(std::move(clip));
    } catch (const ManifestError&) {
      throw;
    } catch (const CorpusError& e) {
      throw ManifestError(lineno, e.what());
    }
  }
  if (!captioners) throw ManifestError(lineno, "missing header line");
  return Corpus(std::move(*captioners), f_dim, std::move(clips), split);
}

Corpus load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open manifest " + path.string());
  return parse_manifest(in);
}

void save_manifest(const Corpus& corpus, std::ostream& out, const json* meta) {
  json header{{"captioner_ids", corpus.captioner_ids()}, {"f_dim", corpus.f_dim()}};
  if (corpus.split()) header["split"] = to_string(*corpus.split());
  if (meta) header["_meta"] = *meta;
  out << header.dump() << '\n';
  for (const auto& clip : corpus.clips()) out << clip_to_json(clip).dump() << '\n';
}

void save_manifest(const Corpus& corpus, const std::filesystem::path& path, const json* meta) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write manifest " + path.string());
  save_manifest(corpus, out, meta);
}

CorpusSplits split_corpus(const Corpus& corpus, SplitFractions fractions, std::uint64_t seed) {
  if (corpus.empty()) throw CorpusError("split_corpus: empty corpus");
  const double sum = fractions.train + fractions.val + fractions.test;
  if (!(fractions.train > 0 && fractions.val > 0 && fractions.test > 0) || std::abs(sum - 1.0) > 1e-9) {
    throw CorpusError("split_corpus: fractions must be positive and sum to 1");
  }
  const std::size_t n = corpus.size();
  // The epsilon absorbs products such as 10 * 0.1 landing a hair under an integer.
  const auto floor_count = [n](double f) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * f + 1e-9));
  };
  const std::size_t n_val = floor_count(fractions.val);
  const std::size_t n_test = floor_count(fractions.test);
  const std::size_t n_train = n - n_val - n_test;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5911));
  rng.shuffle(std::span<std::size_t>(order));

  auto take = [&](std::size_t begin, std::size_t count, SplitTag tag) {
    std::vector<Clip> part;
    part.reserve(count);
    for (std::size_t k = begin; k < begin + count; ++k) part.push_back(corpus.clip(order[k]));
    return Corpus(corpus.captioner_ids(), corpus.f_dim(), std::move(part), tag);
  };
  return {take(0, n_train, SplitTag::train), take(n_train, n_val, SplitTag::val),
          take(n_train + n_val, n_test, SplitTag::test)};
}

}  // namespace bestview
