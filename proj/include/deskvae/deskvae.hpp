// Copyright 2026 The deskvae Authors. All Rights Reserved.
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

#include "deskvae/autodiff.hpp"
#include "deskvae/checkpoint.hpp"
#include "deskvae/data.hpp"
#include "deskvae/distribution_ops.hpp"
#include "deskvae/distributions.hpp"
#include "deskvae/error.hpp"
#include "deskvae/evaluation.hpp"
#include "deskvae/latent_analysis.hpp"
#include "deskvae/model_config.hpp"
#include "deskvae/network.hpp"
#include "deskvae/objective.hpp"
#include "deskvae/optimizer.hpp"
#include "deskvae/png_io.hpp"
#include "deskvae/rng.hpp"
#include "deskvae/run_config.hpp"
#include "deskvae/tensor.hpp"
#include "deskvae/training.hpp"
