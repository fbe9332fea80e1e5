#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "savime/savime.hpp"

namespace savime::testing {

// Scratch directory removed on destruction; one per test fixture.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<uint64_t> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("savime_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }
  std::string sub(const std::string& name) const {
    return (path_ / name).string();
  }

 private:
  std::filesystem::path path_;
};

inline StorageConfig test_storage(const TempDir& dir,
                                  size_t budget = size_t(1) << 30) {
  StorageConfig cfg;
  cfg.storage_dir = dir.sub("data");
  cfg.temp_dir = dir.sub("tmp");
  cfg.max_resident_bytes = budget;
  return cfg;
}

inline void write_file(const std::string& path, const void* data, size_t n) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f),
                     std::istreambuf_iterator<char>());
}

inline std::vector<Scalar> doubles(std::initializer_list<double> vs) {
  std::vector<Scalar> out;
  for (double v : vs) out.push_back(Scalar(v));
  return out;
}

inline std::vector<Scalar> ints(std::initializer_list<int64_t> vs) {
  std::vector<Scalar> out;
  for (int64_t v : vs) out.push_back(Scalar(v));
  return out;
}

}  // namespace savime::testing
