/*
   Copyright 2026 The SGA Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

#include "sga/numerics/tensor.hpp"
#include "sga/numerics/tape.hpp"
#include "sga/numerics/ops.hpp"
#include "sga/numerics/adam.hpp"
#include "sga/numerics/grad_check.hpp"
#include "sga/vocab.hpp"
#include "sga/backbone/backbone.hpp"
#include "sga/backbone/pretrain.hpp"
#include "sga/ctc/ctc.hpp"
#include "sga/maskpredict/maskpredict.hpp"
#include "sga/core/sga.hpp"
#include "sga/tasks/toy.hpp"
#include "sga/harness/metrics.hpp"
#include "sga/harness/config.hpp"
#include "sga/harness/checkpoint.hpp"
#include "sga/harness/train.hpp"
