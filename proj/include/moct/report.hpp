// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "moct/config.hpp"

namespace moct {

// Write-temp-then-rename; readers never observe a partial file.
void atomic_write(const std::filesystem::path& path, const std::string& contents);

// Run provenance: command, resolved config, seed, input hash, outputs.
struct RunManifest {
    std::string command;
    std::string config_path;
    Json resolved_config;
    uint64_t seed = 0;
    std::string input_checkpoint_hash;  // empty when the run has no input checkpoint
    std::vector<std::string> outputs;

    Json to_json() const;
    void write(const std::filesystem::path& run_dir) const;  // <run_dir>/manifest.json
};

struct SvgSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

// Minimal line chart; enough for the forgetting-vs-ratio figure.
std::string render_line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                                  const std::vector<SvgSeries>& series);

}  // namespace moct
