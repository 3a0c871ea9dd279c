/* Copyright 2026 The probeagg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <optional>
#include <string>

#include "probeagg/error.hpp"

namespace testing_support {

struct Caught {
  std::optional<probeagg::Errc> code;
  std::string what;
};

// Runs `fn` and reports the probeagg error it threw, if any.
template <typename F>
Caught catch_error(F&& fn) {
  try {
    fn();
  } catch (const probeagg::Error& e) {
    return {e.code(), e.what()};
  }
  return {};
}

}  // namespace testing_support
