// Scratch directories and the small seed-42 dataset shared by the tests.
#pragma once

#include <filesystem>
#include <string>

#include "osmalign/pipeline.hpp"

namespace osmalign::testing {

namespace fs = std::filesystem;

/// Fresh, empty directory under the build tree.
inline fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::path(OSMALIGN_TEST_TMP) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline SceneConfig fixture_config() {
  SceneConfig cfg;
  cfg.n_buildings = 4;
  cfg.seed = 42;
  return cfg;
}

/// 3 images x 4 buildings, seed 42: the same dataset `synth --images 3
/// --buildings 4 --seed 42` writes. Built on first use.
inline fs::path fixture_dir() {
  const fs::path p = fs::path(OSMALIGN_TEST_TMP) / "fixture";
  if (!fs::exists(p / "manifest.json")) build_dataset(fixture_config(), 3, p);
  return p;
}

}  // namespace osmalign::testing
