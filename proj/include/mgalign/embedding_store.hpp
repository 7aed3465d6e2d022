#pragma once

// Data model for precomputed frame and text embeddings, plus the on-disk
// store shared with the exporter.
//
// Store layout (all paths relative to the dataset root):
//
//   manifest.json
//   videos/<index>.f32                       L x D frame embeddings
//   classes/<index>/global.f32               M x D global-prompt tokens
//   classes/<index>/global.summary.f32       1 x D sentence embedding
//   classes/<index>/sub<n>.f32 (+ .summary)  sub-text tokens / summary
//   classes/<index>/cand<g>_<n>.f32 (+ ...)  candidate sub-text groups
//
// Tensor files are raw little-endian binary32, row-major, exactly
// rows * cols * 4 bytes. Arithmetic is done in double after loading.

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace mgalign {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kManifestFormat = "mgalign.embeddings";

struct FrameEmbeddings {
  std::string video_id;
  Mat frames;               // L x D
  std::vector<int> labels;  // one entry for single-label data

  int label() const { return labels.front(); }
  int num_frames() const { return static_cast<int>(frames.rows()); }
};

struct TextTokens {
  Mat tokens;   // M x D word embeddings
  Vec summary;  // sentence-level embedding, length D
};

struct ClassTextBundle {
  std::string class_name;
  TextTokens global;
  std::vector<TextTokens> subtexts;
  // Alternative sub-text sets from which one may be installed as `subtexts`.
  std::vector<std::vector<TextTokens>> candidate_groups;
};

struct EmbeddingDataset {
  int dim = 0;
  std::vector<FrameEmbeddings> videos;
  std::vector<ClassTextBundle> classes;

  int num_classes() const { return static_cast<int>(classes.size()); }
  int num_videos() const { return static_cast<int>(videos.size()); }
};

struct SubtextCandidateSet {
  int class_id = 0;
  std::vector<std::vector<TextTokens>> sets;
};

SubtextCandidateSet candidates_of(const EmbeddingDataset& ds, int class_id);

struct Violation {
  std::string location;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  std::string to_string() const;
};

ValidationReport validate(const EmbeddingDataset& ds);

EmbeddingDataset load_dataset(const std::filesystem::path& root);
/// Parses the store without running validate(); tensor-level errors still throw.
EmbeddingDataset load_dataset_unchecked(const std::filesystem::path& root);
void save_dataset(const EmbeddingDataset& ds, const std::filesystem::path& root);

// Raw tensor I/O in the store's binary32 format.
Mat read_tensor(const std::filesystem::path& file, std::ptrdiff_t rows, std::ptrdiff_t cols);
void write_tensor(const std::filesystem::path& file, const Mat& m);

/// Unit-norm copy of `v`; throws ZeroVector when ||v|| == 0.
Vec l2_normalize(const Vec& v);

/// Copy of `m` with every row scaled to unit norm; throws ZeroVector on a zero row.
Mat normalize_rows(const Mat& m);

/// Round every entry through binary32, i.e. what a save/load cycle yields.
Mat to_storage_precision(const Mat& m);

}  // namespace mgalign
