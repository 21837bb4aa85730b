#pragma once

// The agsv command line: pretrain, embed, search, outliers, project, frames,
// balance, finetune, serve, synth.
//
// Exit codes: 0 success, 1 usage or invalid parameter, 2 data error,
// 3 internal failure (including a port that cannot be bound).

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "agsv/image.hpp"

namespace agsv::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitInternal = 3;

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Asks a running `serve` to stop, save the store and return. This is what
/// SIGINT and SIGTERM do.
void request_shutdown();

/// White square canvas with one 3x3 dot per point; x to the right, y up.
/// Colors cycle through a fixed palette by group. Throws ShapeError on
/// mismatched lengths, InputError if size < 32.
Raster scatter_plot(std::span<const double> x, std::span<const double> y,
                    std::span<const int> group, int size = 512);

}  // namespace agsv::cli
