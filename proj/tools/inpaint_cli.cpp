// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "inpaint/pipeline.hpp"

int main(int argc, char** argv) { return inpaint::cli(argc, argv); }
