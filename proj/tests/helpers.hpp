#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "intentguard/scripted_backend.hpp"

namespace testutil {

/// Unique temp directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    dir_ = std::filesystem::temp_directory_path() /
           ("intentguard-" + tag + "-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter++));
    std::filesystem::create_directories(dir_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  const std::filesystem::path& path() const { return dir_; }
  std::filesystem::path file(const std::string& name) const { return dir_ / name; }

 private:
  std::filesystem::path dir_;
};

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

/// Scripted backend answering everything with one fixed response.
inline intentguard::ScriptedConfig fixed_response(const std::string& id, const std::string& text) {
  intentguard::ScriptedConfig config;
  config.id = id;
  config.default_response = text;
  return config;
}

/// Judge script that rates everything with the given score.
inline intentguard::ScriptedConfig fixed_judge(int score) {
  return fixed_response("judge", "Rating: [[" + std::to_string(score) + "]]");
}

}  // namespace testutil
