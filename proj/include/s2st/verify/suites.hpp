// Copyright 2026 The s2st-desk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Invariant suites run by the `verify` command.

#pragma once

#include <functional>
#include <string>
#include <vector>

namespace s2st::verify {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Suite {
  std::string name;
  std::function<SuiteResult()> run;
};

// grad-check, fsq-bijection, delay-alignment, streaming-equivalence,
// lora-identity, freeze-policy.
std::vector<Suite> suites();

// Runs every suite, converting exceptions into failures.
std::vector<SuiteResult> run_all(const std::function<void(const SuiteResult&)>& on_result = {});

}  // namespace s2st::verify
