#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include <gtest/gtest.h>

#include "synthdet/dataset.hpp"
#include "synthdet/error.hpp"

namespace testutil {

inline void expect_code(synthdet::ErrorCode code, const std::function<void()>& fn) {
  try {
    fn();
    ADD_FAILURE() << "expected error " << synthdet::to_string(code);
  } catch (const synthdet::Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("synthdet-test-" + name + "-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// "toy" structure manifest (photo real 2 : GAN 1 : SD 1) split 2/3 train.
inline synthdet::manifest::Manifest small_toy_manifest(std::int64_t total, std::uint64_t seed,
                                                       std::int64_t calibration = 0) {
  synthdet::data::ToyManifestSpec spec;
  spec.total = total;
  spec.seed = seed;
  spec.calibration_total = calibration;
  return synthdet::data::make_toy_manifest(spec);
}

}  // namespace testutil
