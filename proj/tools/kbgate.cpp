// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbgate/cli.hpp"

int main(int argc, char** argv) { return kbgate::run_cli(argc, argv); }
