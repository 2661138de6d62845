// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kvpack/chat_template.hpp"
#include "kvpack/config.hpp"
#include "kvpack/embedding.hpp"
#include "kvpack/engine.hpp"
#include "kvpack/error.hpp"
#include "kvpack/kv_cache.hpp"
#include "kvpack/metrics.hpp"
#include "kvpack/model.hpp"
#include "kvpack/pack.hpp"
#include "kvpack/pipeline.hpp"
#include "kvpack/routing.hpp"
#include "kvpack/steering.hpp"
#include "kvpack/tokenizer.hpp"
#include "kvpack/verify.hpp"
