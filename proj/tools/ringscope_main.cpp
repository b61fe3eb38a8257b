// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "ringscope/cli.hpp"

int main(int argc, char** argv) { return ringscope::cli_main(argc, argv); }
