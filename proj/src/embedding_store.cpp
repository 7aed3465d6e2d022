#include "mgalign/embedding_store.hpp"

#include "json.hpp"
#include "mgalign/errors.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mgalign {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; add byte swapping for this target");

namespace {

constexpr std::string_view kModule = "embedding_store";

[[noreturn]] void fail(ErrorKind kind, const std::string& detail) {
  throw Error(kind, kModule, detail);
}

bool all_finite(const Mat& m) { return m.allFinite(); }

void check_text(const TextTokens& t, int dim, const std::string& where,
                std::vector<Violation>& out) {
  if (t.tokens.rows() < 1) out.push_back({where + ".tokens", "token matrix has no rows"});
  if (t.tokens.cols() != dim) {
    out.push_back({where + ".tokens", "has " + std::to_string(t.tokens.cols()) +
                                          " columns, dataset dim is " + std::to_string(dim)});
  } else if (!all_finite(t.tokens)) {
    out.push_back({where + ".tokens", "contains non-finite values"});
  } else {
    for (Eigen::Index r = 0; r < t.tokens.rows(); ++r) {
      if (t.tokens.row(r).norm() == 0.0) {
        out.push_back({where + ".tokens[" + std::to_string(r) + "]", "zero-norm token"});
      }
    }
  }
  if (t.summary.size() != dim) {
    out.push_back({where + ".summary", "has length " + std::to_string(t.summary.size()) +
                                           ", dataset dim is " + std::to_string(dim)});
  } else if (!t.summary.allFinite()) {
    out.push_back({where + ".summary", "contains non-finite values"});
  } else if (t.summary.norm() == 0.0) {
    out.push_back({where + ".summary", "zero-norm summary"});
  }
}

// ---- reading --------------------------------------------------------------

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) fail(ErrorKind::ManifestParse, where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::ManifestParse, where + "." + key + ": " + e.what());
  }
}

Mat read_checked(const fs::path& root, const std::string& rel, std::ptrdiff_t rows,
                 std::ptrdiff_t cols) {
  if (rows < 0 || cols < 0) fail(ErrorKind::ManifestParse, rel + ": negative shape");
  return read_tensor(root / rel, rows, cols);
}

TextTokens read_text(const fs::path& root, const json& j, int dim, const std::string& where) {
  TextTokens t;
  const auto rows = get_field<std::ptrdiff_t>(j, "tokens", where);
  t.tokens = read_checked(root, get_field<std::string>(j, "tensor", where), rows, dim);
  const Mat s = read_checked(root, get_field<std::string>(j, "summary", where), 1, dim);
  t.summary = s.row(0).transpose();
  return t;
}

// ---- writing --------------------------------------------------------------

json write_text(const fs::path& root, const TextTokens& t, const std::string& stem) {
  write_tensor(root / (stem + ".f32"), t.tokens);
  write_tensor(root / (stem + ".summary.f32"), Mat(t.summary.transpose()));
  return json{{"tokens", t.tokens.rows()},
              {"tensor", stem + ".f32"},
              {"summary", stem + ".summary.f32"}};
}

std::string padded(std::size_t i, int width) {
  std::string s = std::to_string(i);
  if (static_cast<int>(s.size()) < width) s.insert(0, width - s.size(), '0');
  return s;
}

}  // namespace

SubtextCandidateSet candidates_of(const EmbeddingDataset& ds, int class_id) {
  if (class_id < 0 || class_id >= ds.num_classes()) {
    fail(ErrorKind::ValidationFailure, "class id " + std::to_string(class_id) + " out of range");
  }
  return SubtextCandidateSet{class_id, ds.classes[class_id].candidate_groups};
}

std::string ValidationReport::to_string() const {
  std::ostringstream os;
  for (const auto& v : violations) os << v.location << ": " << v.message << '\n';
  return os.str();
}

ValidationReport validate(const EmbeddingDataset& ds) {
  ValidationReport report;
  auto& out = report.violations;
  if (ds.dim < 1) out.push_back({"dim", "must be >= 1"});
  const int num_classes = ds.num_classes();

  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    const auto& v = ds.videos[i];
    const std::string where = "videos[" + std::to_string(i) + "]";
    if (v.frames.rows() < 1) out.push_back({where + ".frames", "video has no frames"});
    if (v.frames.cols() != ds.dim) {
      out.push_back({where + ".frames", "has " + std::to_string(v.frames.cols()) +
                                            " columns, dataset dim is " + std::to_string(ds.dim)});
    } else if (!all_finite(v.frames)) {
      out.push_back({where + ".frames", "contains non-finite values"});
    } else {
      for (Eigen::Index r = 0; r < v.frames.rows(); ++r) {
        if (v.frames.row(r).norm() == 0.0) {
          out.push_back({where + ".frames[" + std::to_string(r) + "]", "zero-norm frame"});
        }
      }
    }
    if (v.labels.empty()) out.push_back({where + ".labels", "empty label set"});
    for (int label : v.labels) {
      if (label < 0 || label >= num_classes) {
        out.push_back({where + ".labels", "label " + std::to_string(label) +
                                              " out of range for " + std::to_string(num_classes) +
                                              " classes"});
      }
    }
  }

  for (std::size_t c = 0; c < ds.classes.size(); ++c) {
    const auto& b = ds.classes[c];
    const std::string where = "classes[" + std::to_string(c) + "]";
    check_text(b.global, ds.dim, where + ".global", out);
    for (std::size_t n = 0; n < b.subtexts.size(); ++n) {
      check_text(b.subtexts[n], ds.dim, where + ".subtexts[" + std::to_string(n) + "]", out);
    }
    for (std::size_t g = 0; g < b.candidate_groups.size(); ++g) {
      const std::string gw = where + ".candidate_groups[" + std::to_string(g) + "]";
      if (b.candidate_groups[g].empty()) out.push_back({gw, "empty candidate group"});
      for (std::size_t n = 0; n < b.candidate_groups[g].size(); ++n) {
        check_text(b.candidate_groups[g][n], ds.dim, gw + "[" + std::to_string(n) + "]", out);
      }
    }
  }
  return report;
}

Mat read_tensor(const fs::path& file, std::ptrdiff_t rows, std::ptrdiff_t cols) {
  std::error_code ec;
  if (!fs::is_regular_file(file, ec)) fail(ErrorKind::MissingFile, file.string());
  const auto bytes = fs::file_size(file, ec);
  const auto expected = static_cast<std::uintmax_t>(rows) * static_cast<std::uintmax_t>(cols) * 4u;
  if (ec || bytes != expected) {
    fail(ErrorKind::ShapeMismatch, file.string() + ": expected " + std::to_string(rows) + "x" +
                                       std::to_string(cols) + " (" + std::to_string(expected) +
                                       " bytes), found " + std::to_string(bytes) + " bytes");
  }
  std::vector<float> buf(static_cast<std::size_t>(rows * cols));
  std::ifstream in(file, std::ios::binary);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected))) {
    fail(ErrorKind::IoFailure, "short read on " + file.string());
  }
  Mat m(rows, cols);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    if (!std::isfinite(buf[i])) {
      fail(ErrorKind::NonFinite, file.string() + ": entry " + std::to_string(i) + " is not finite");
    }
    m.data()[i] = static_cast<double>(buf[i]);
  }
  return m;
}

void write_tensor(const fs::path& file, const Mat& m) {
  std::vector<float> buf(static_cast<std::size_t>(m.size()));
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(m.data()[i]);
  std::error_code ec;
  fs::create_directories(file.parent_path(), ec);
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(reinterpret_cast<const char*>(buf.data()),
                         static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    fail(ErrorKind::IoFailure, "cannot write " + file.string());
  }
}

EmbeddingDataset load_dataset_unchecked(const fs::path& root) {
  const fs::path manifest_path = root / kManifestName;
  std::ifstream in(manifest_path);
  if (!in) fail(ErrorKind::MissingFile, manifest_path.string());

  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    fail(ErrorKind::ManifestParse, manifest_path.string() + ": " + e.what());
  }

  EmbeddingDataset ds;
  ds.dim = get_field<int>(manifest, "dim", "manifest");
  if (ds.dim < 1) fail(ErrorKind::ManifestParse, "manifest.dim must be >= 1");

  const auto& videos = manifest.contains("videos") ? manifest.at("videos") : json::array();
  const auto& classes = manifest.contains("classes") ? manifest.at("classes") : json::array();
  if (!videos.is_array() || !classes.is_array()) {
    fail(ErrorKind::ManifestParse, "manifest.videos and manifest.classes must be arrays");
  }

  for (std::size_t i = 0; i < videos.size(); ++i) {
    const auto& jv = videos[i];
    const std::string where = "videos[" + std::to_string(i) + "]";
    FrameEmbeddings v;
    v.video_id = get_field<std::string>(jv, "id", where);
    const auto rows = get_field<std::ptrdiff_t>(jv, "frames", where);
    if (jv.contains("labels")) {
      v.labels = get_field<std::vector<int>>(jv, "labels", where);
    } else {
      v.labels = {get_field<int>(jv, "label", where)};
    }
    v.frames = read_checked(root, get_field<std::string>(jv, "tensor", where), rows, ds.dim);
    ds.videos.push_back(std::move(v));
  }

  for (std::size_t c = 0; c < classes.size(); ++c) {
    const auto& jc = classes[c];
    const std::string where = "classes[" + std::to_string(c) + "]";
    ClassTextBundle b;
    b.class_name = get_field<std::string>(jc, "name", where);
    b.global = read_text(root, get_field<json>(jc, "global", where), ds.dim, where + ".global");
    if (jc.contains("subtexts")) {
      const auto& js = jc.at("subtexts");
      for (std::size_t n = 0; n < js.size(); ++n) {
        b.subtexts.push_back(read_text(root, js[n], ds.dim, where + ".subtexts"));
      }
    }
    if (jc.contains("candidate_groups")) {
      for (const auto& jg : jc.at("candidate_groups")) {
        std::vector<TextTokens> group;
        for (const auto& jt : jg) group.push_back(read_text(root, jt, ds.dim, where + ".candidate_groups"));
        b.candidate_groups.push_back(std::move(group));
      }
    }
    ds.classes.push_back(std::move(b));
  }
  return ds;
}

EmbeddingDataset load_dataset(const fs::path& root) {
  EmbeddingDataset ds = load_dataset_unchecked(root);
  const auto report = validate(ds);
  if (!report.ok()) {
    const auto& first = report.violations.front();
    fail(ErrorKind::ValidationFailure, root.string() + ": " + first.location + ": " + first.message +
                                           " (" + std::to_string(report.violations.size()) +
                                           " violation(s))");
  }
  return ds;
}

void save_dataset(const EmbeddingDataset& ds, const fs::path& root) {
  const auto report = validate(ds);
  if (!report.ok()) {
    const auto& first = report.violations.front();
    fail(ErrorKind::ValidationFailure, first.location + ": " + first.message);
  }

  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) fail(ErrorKind::IoFailure, "cannot create " + root.string() + ": " + ec.message());

  json manifest;
  manifest["format"] = kManifestFormat;
  manifest["version"] = kManifestVersion;
  manifest["dim"] = ds.dim;

  json videos = json::array();
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    const auto& v = ds.videos[i];
    const std::string rel = "videos/" + padded(i, 6) + ".f32";
    write_tensor(root / rel, v.frames);
    videos.push_back(json{{"id", v.video_id},
                          {"frames", v.frames.rows()},
                          {"labels", v.labels},
                          {"tensor", rel}});
  }
  manifest["videos"] = std::move(videos);

  json classes = json::array();
  for (std::size_t c = 0; c < ds.classes.size(); ++c) {
    const auto& b = ds.classes[c];
    const std::string dir = "classes/" + padded(c, 4) + "/";
    json jc;
    jc["name"] = b.class_name;
    jc["global"] = write_text(root, b.global, dir + "global");
    json subs = json::array();
    for (std::size_t n = 0; n < b.subtexts.size(); ++n) {
      subs.push_back(write_text(root, b.subtexts[n], dir + "sub" + padded(n, 2)));
    }
    jc["subtexts"] = std::move(subs);
    if (!b.candidate_groups.empty()) {
      json groups = json::array();
      for (std::size_t g = 0; g < b.candidate_groups.size(); ++g) {
        json group = json::array();
        for (std::size_t n = 0; n < b.candidate_groups[g].size(); ++n) {
          group.push_back(write_text(root, b.candidate_groups[g][n],
                                     dir + "cand" + padded(g, 2) + "_" + padded(n, 2)));
        }
        groups.push_back(std::move(group));
      }
      jc["candidate_groups"] = std::move(groups);
    }
    classes.push_back(std::move(jc));
  }
  manifest["classes"] = std::move(classes);

  std::ofstream out(root / kManifestName, std::ios::trunc);
  if (!out) fail(ErrorKind::IoFailure, "cannot write manifest in " + root.string());
  out << manifest.dump(2) << '\n';
  if (!out) fail(ErrorKind::IoFailure, "cannot write manifest in " + root.string());
}

Vec l2_normalize(const Vec& v) {
  const double n = v.norm();
  if (!(n > 0.0)) fail(ErrorKind::ZeroVector, "cannot normalize a zero vector");
  return v / n;
}

Mat normalize_rows(const Mat& m) {
  Mat out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    // Plain left-to-right sum: Eigen's vectorized norm depends on the row's
    // memory alignment, which would tie the result to the row's position.
    double sq = 0.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) sq += m(r, c) * m(r, c);
    const double n = std::sqrt(sq);
    if (!(n > 0.0)) fail(ErrorKind::ZeroVector, "row " + std::to_string(r) + " has zero norm");
    out.row(r) = m.row(r) / n;
  }
  return out;
}

Mat to_storage_precision(const Mat& m) {
  return m.cast<float>().cast<double>();
}

}  // namespace mgalign
