// Copyright 2026 The ROAD Authors
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

#pragma once

#include "road/cohort.hpp"
#include "road/counterfactual.hpp"
#include "road/error.hpp"
#include "road/evaluate.hpp"
#include "road/io.hpp"
#include "road/matcher.hpp"
#include "road/matrix.hpp"
#include "road/pipeline.hpp"
#include "road/policy_tree.hpp"
#include "road/random.hpp"
#include "road/risk_forest.hpp"
#include "road/strata.hpp"
#include "road/synthgen.hpp"
