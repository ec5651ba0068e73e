#pragma once

// Shared fixtures for the test suites.

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "qap/corpus.hpp"
#include "qap/encoder.hpp"
#include "qap/teacher.hpp"

namespace qap::test {

inline EncoderConfig tiny_config(int vocab_size = 32) {
  EncoderConfig config;
  config.d = 8;
  config.n_layers = 2;
  config.n_heads = 2;
  config.ffn_width = 16;
  config.max_positions = 512;
  config.dropout_rate = 0.0;
  config.vocab_size = vocab_size;
  return config;
}

inline TokenSequence seq(std::vector<int> body) {
  TokenSequence s;
  s.ids.push_back(kBos);
  for (int id : body) s.ids.push_back(id);
  return s;
}

inline Vocabulary words_vocab(const std::vector<std::string>& words) {
  Vocabulary v;
  for (const auto& w : words) v.add(w);
  return v;
}

// An MLP that computes the identity map exactly: the GELU input is shifted
// far into its linear region and the shift is subtracted afterwards.
inline MlpHead identity_head(int d) {
  MlpHead h;
  h.w1 = Matrix::Identity(d, d);
  h.b1 = Matrix::Constant(1, d, 40.0);
  h.w2 = Matrix::Identity(d, d);
  h.b2 = Matrix::Constant(1, d, -40.0);
  return h;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() /
            ("qap_test_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

}  // namespace qap::test
