#pragma once

#include <CLI11.hpp>

namespace metakey::tools {

/// Registers the synth-gen options on `app`; the returned callback runs it.
std::function<int()> add_synth_gen(CLI::App& app);

}  // namespace metakey::tools
