// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header. PNG support lives in png_io.hpp and is not included here.

#pragma once

#include "laddermoe/analysis.hpp"
#include "laddermoe/checkpoint.hpp"
#include "laddermoe/config_json.hpp"
#include "laddermoe/corpus.hpp"
#include "laddermoe/dataset_io.hpp"
#include "laddermoe/decoder.hpp"
#include "laddermoe/encoder.hpp"
#include "laddermoe/errors.hpp"
#include "laddermoe/evaluate.hpp"
#include "laddermoe/gradcheck.hpp"
#include "laddermoe/image.hpp"
#include "laddermoe/metrics.hpp"
#include "laddermoe/model.hpp"
#include "laddermoe/nn.hpp"
#include "laddermoe/pipeline.hpp"
#include "laddermoe/rng.hpp"
#include "laddermoe/syndata.hpp"
#include "laddermoe/tensor.hpp"
#include "laddermoe/train_config.hpp"
#include "laddermoe/training.hpp"
#include "laddermoe/transcribe.hpp"
