#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>

#include "mnarvam/score_panel.hpp"

namespace testing {

/// Removed with everything inside when it goes out of scope.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mnarvam_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::string str() const { return path_.string(); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void spit(const std::string& path, const std::string& content) { std::ofstream(path) << content; }

using Slot = std::optional<std::pair<double, std::string>>;

/// Student with (score, teacher) per year; nullopt leaves the year empty.
inline mnarvam::StudentRecord student(const std::string& id, std::initializer_list<Slot> years) {
  mnarvam::PerYear<std::optional<double>> scores;
  mnarvam::PerYear<std::optional<std::string>> links;
  int t = 0;
  for (const auto& s : years) {
    if (s) {
      scores[t] = s->first;
      links[t] = s->second;
    }
    ++t;
  }
  return mnarvam::make_student(id, scores, links);
}

}  // namespace testing
