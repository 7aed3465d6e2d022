#pragma once

#include "mgalign/embedding_store.hpp"
#include "mgalign/errors.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>

namespace fixtures {

inline mgalign::EmbeddingDataset small_dataset(std::uint64_t seed, int videos = 2, int frames = 4, int dim = 8,
                                               int classes = 2, int subtexts = 3) {
  std::mt19937_64 rng(seed);
  mgalign::EmbeddingDataset ds;
  ds.dim = dim;
  for (int c = 0; c < classes; ++c) {
    mgalign::ClassTextBundle b;
    b.class_name = "class" + std::to_string(c);
    b.global = oracle::random_text(rng, 2, dim);
    for (int n = 0; n < subtexts; ++n) b.subtexts.push_back(oracle::random_text(rng, 1 + n % 3, dim));
    ds.classes.push_back(std::move(b));
  }
  for (int v = 0; v < videos; ++v) {
    mgalign::FrameEmbeddings f;
    f.video_id = "video" + std::to_string(v);
    f.frames = oracle::random_mat(rng, frames, dim);
    f.labels = {v % classes};
    ds.videos.push_back(std::move(f));
  }
  return ds;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("mgalign_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures

#define EXPECT_ERROR_KIND(stmt, expected_kind)                                   \
  do {                                                                           \
    try {                                                                        \
      stmt;                                                                      \
      ADD_FAILURE() << "expected " << mgalign::to_string(expected_kind);         \
    } catch (const mgalign::Error& e) {                                          \
      EXPECT_EQ(e.kind(), expected_kind) << e.what();                            \
    }                                                                            \
  } while (0)
