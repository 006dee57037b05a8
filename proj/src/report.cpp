// SPDX-License-Identifier: Apache-2.0
#include "moct/report.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "moct/errors.hpp"

namespace moct {

void atomic_write(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw ConfigError("cannot write '" + path.string() + "'");
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!f) throw ConfigError("short write to '" + path.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

Json RunManifest::to_json() const {
    Json j;
    j["command"] = command;
    j["config_path"] = config_path;
    j["resolved_config"] = resolved_config;
    j["seed"] = seed;
    j["input_checkpoint_hash"] = input_checkpoint_hash;
    j["outputs"] = outputs;
    return j;
}

void RunManifest::write(const std::filesystem::path& run_dir) const {
    std::filesystem::create_directories(run_dir);
    atomic_write(run_dir / "manifest.json", to_json().dump(2) + "\n");
}

std::string render_line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                                  const std::vector<SvgSeries>& series) {
    const int width = 640, height = 420;
    const int ml = 70, mr = 30, mt = 50, mb = 55;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmin > xmax) {
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr); };
    auto py = [&](double y) { return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb); };

    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::ostringstream svg;
    svg.precision(6);
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height << "'>\n";
    svg << "<rect width='100%' height='100%' fill='white'/>\n";
    svg << "<text x='" << width / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title << "</text>\n";
    // axes
    svg << "<line x1='" << ml << "' y1='" << height - mb << "' x2='" << width - mr << "' y2='" << height - mb
        << "' stroke='black'/>\n";
    svg << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << height - mb << "' stroke='black'/>\n";
    svg << "<text x='" << (ml + width - mr) / 2 << "' y='" << height - 12 << "' text-anchor='middle' font-size='12'>"
        << x_label << "</text>\n";
    svg << "<text x='16' y='" << (mt + height - mb) / 2 << "' font-size='12' transform='rotate(-90 16 "
        << (mt + height - mb) / 2 << ")' text-anchor='middle'>" << y_label << "</text>\n";
    // y ticks
    for (int i = 0; i <= 4; ++i) {
        const double y = ymin + (ymax - ymin) * i / 4.0;
        svg << "<line x1='" << ml - 4 << "' y1='" << py(y) << "' x2='" << ml << "' y2='" << py(y)
            << "' stroke='black'/>\n";
        svg << "<text x='" << ml - 8 << "' y='" << py(y) + 4 << "' text-anchor='end' font-size='10'>";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3g", y);
        svg << buf << "</text>\n";
    }
    // x ticks at data points of the first series
    if (!series.empty())
        for (const auto& [x, y] : series[0].points) {
            svg << "<line x1='" << px(x) << "' y1='" << height - mb << "' x2='" << px(x) << "' y2='"
                << height - mb + 4 << "' stroke='black'/>\n";
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.3g", x);
            svg << "<text x='" << px(x) << "' y='" << height - mb + 16 << "' text-anchor='middle' font-size='10'>"
                << buf << "</text>\n";
        }
    for (size_t si = 0; si < series.size(); ++si) {
        const char* color = colors[si % 6];
        svg << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
        for (const auto& [x, y] : series[si].points) svg << px(x) << "," << py(y) << " ";
        svg << "'/>\n";
        for (const auto& [x, y] : series[si].points)
            svg << "<circle cx='" << px(x) << "' cy='" << py(y) << "' r='3' fill='" << color << "'/>\n";
        svg << "<text x='" << width - mr - 8 << "' y='" << mt + 16 * static_cast<int>(si) + 8
            << "' text-anchor='end' font-size='11' fill='" << color << "'>" << series[si].label << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace moct
