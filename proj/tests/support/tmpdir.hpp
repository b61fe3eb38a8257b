// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

namespace ringscope::testing {

// Fresh, empty directory under $RINGSCOPE_TEST_TMP (or the system temp dir).
inline std::filesystem::path fresh_dir(const std::string& name) {
  namespace fs = std::filesystem;
  const char* root = std::getenv("RINGSCOPE_TEST_TMP");
  const fs::path dir = (root ? fs::path(root) : fs::temp_directory_path() / "ringscope-tests") / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace ringscope::testing
