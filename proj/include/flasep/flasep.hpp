// Copyright 2026 The flasep Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FLASEP_FLASEP_HPP_
#define FLASEP_FLASEP_HPP_

#include "flasep/attention.hpp"
#include "flasep/autodiff.hpp"
#include "flasep/bench.hpp"
#include "flasep/checks.hpp"
#include "flasep/error.hpp"
#include "flasep/gradcheck.hpp"
#include "flasep/memory.hpp"
#include "flasep/ops.hpp"
#include "flasep/sepnet.hpp"
#include "flasep/serialize.hpp"
#include "flasep/tensor.hpp"

#endif  // FLASEP_FLASEP_HPP_
