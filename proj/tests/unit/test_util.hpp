#pragma once

#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>

#include "hmc/error.hpp"

// CHECK that `expr` throws hmc::Error with the given code.
#define CHECK_ERRC(expr, errc)                                   \
  do {                                                           \
    bool thrown_ = false;                                        \
    try {                                                        \
      (void)(expr);                                              \
    } catch (const ::hmc::Error& e_) {                           \
      thrown_ = true;                                            \
      CHECK_MESSAGE(e_.code() == (errc), std::string(::hmc::errc_name(e_.code()))); \
    }                                                            \
    CHECK_MESSAGE(thrown_, "expected " #errc);                   \
  } while (0)

namespace hmc::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("hmc_" + tag + "_" + std::to_string(rd()));
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

}  // namespace hmc::test
