// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace diffsim {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace diffsim
