#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tseg/report.hpp"

namespace tseg {

// Grouped bar chart of median adversarial mIoU (one group per attack in
// report order, one bar per evaluated model).
std::string transfer_bar_chart_svg(const TransferReport& report);

// Per-iteration mean loss and stage-2 fraction, median over seeds, one
// polyline per attack.
std::string trace_chart_svg(const TransferReport& report);

// Writes transfer_bars.svg and, when traces are present, traces.svg.
// Returns the written paths; an empty report writes nothing and warns on
// stderr.
std::vector<std::filesystem::path> emit_plots(const TransferReport& report, const std::filesystem::path& out_dir);

}  // namespace tseg
