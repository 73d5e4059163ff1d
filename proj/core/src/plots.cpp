#include "tseg/plots.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "tseg/error.hpp"

namespace tseg {
namespace {

constexpr const char* kColors[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                   "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
}

}  // namespace

std::string transfer_bar_chart_svg(const TransferReport& report) {
  const auto attacks = report.attacks();
  const auto targets = report.targets();
  const double bar_w = 14.0, gap = 18.0, left = 60.0, top = 40.0, plot_h = 240.0;
  const double group_w = bar_w * static_cast<double>(targets.size()) + gap;
  const double width = left + group_w * static_cast<double>(attacks.size()) + 140.0;
  const double height = top + plot_h + 110.0;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
      << "\" viewBox=\"0 0 " << num(width) << " " << num(height) << "\">\n";
  svg << "  <text x=\"" << num(left) << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">"
      << "Median adversarial mIoU per attack (" << escape(report.dataset_id) << ")</text>\n";
  svg << "  <line x1=\"" << num(left) << "\" y1=\"" << num(top + plot_h) << "\" x2=\"" << num(width - 130)
      << "\" y2=\"" << num(top + plot_h) << "\" stroke=\"black\"/>\n";
  svg << "  <line x1=\"" << num(left) << "\" y1=\"" << num(top) << "\" x2=\"" << num(left) << "\" y2=\""
      << num(top + plot_h) << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = tick / 4.0;
    const double y = top + plot_h * (1.0 - v);
    svg << "  <text x=\"" << num(left - 8) << "\" y=\"" << num(y + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << num(v) << "</text>\n";
  }

  for (std::size_t a = 0; a < attacks.size(); ++a) {
    const double gx = left + gap / 2.0 + group_w * static_cast<double>(a);
    svg << "  <g class=\"group\" data-attack=\"" << escape(attacks[a]) << "\">\n";
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const auto value = report.median_adv_miou(attacks[a], targets[t]);
      const double v = value.value_or(0.0);
      const double h = plot_h * std::clamp(v, 0.0, 1.0);
      svg << "    <rect class=\"bar\" data-target=\"" << escape(targets[t]) << "\" data-value=\""
          << (value ? num(v * 100.0) : std::string("nan")) << "\" x=\"" << num(gx + bar_w * t) << "\" y=\""
          << num(top + plot_h - h) << "\" width=\"" << num(bar_w - 1) << "\" height=\"" << num(h)
          << "\" fill=\"" << kColors[t % 10] << "\"/>\n";
    }
    svg << "    <text x=\"" << num(gx + (group_w - gap) / 2.0) << "\" y=\"" << num(top + plot_h + 14)
        << "\" text-anchor=\"end\" transform=\"rotate(-35 " << num(gx + (group_w - gap) / 2.0) << " "
        << num(top + plot_h + 14) << ")\" font-family=\"sans-serif\" font-size=\"10\">" << escape(attacks[a])
        << "</text>\n";
    svg << "  </g>\n";
  }
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const double ly = top + 14.0 * static_cast<double>(t);
    const double lx = width - 120.0;
    svg << "  <rect x=\"" << num(lx) << "\" y=\"" << num(ly) << "\" width=\"10\" height=\"10\" fill=\""
        << kColors[t % 10] << "\"/>\n";
    svg << "  <text x=\"" << num(lx + 14) << "\" y=\"" << num(ly + 9)
        << "\" font-family=\"sans-serif\" font-size=\"10\">" << escape(targets[t]) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string trace_chart_svg(const TransferReport& report) {
  // attack -> iteration -> per-seed values
  std::vector<std::string> order;
  std::map<std::string, std::map<int, std::vector<double>>> loss, stage2;
  int max_iter = 0;
  for (const auto& t : report.traces) {
    if (std::find(order.begin(), order.end(), t.attack) == order.end()) order.push_back(t.attack);
    loss[t.attack][t.iteration].push_back(t.mean_loss);
    stage2[t.attack][t.iteration].push_back(t.stage2_fraction);
    max_iter = std::max(max_iter, t.iteration);
  }
  double max_loss = 1e-9;
  for (auto& [name, by_iter] : loss) {
    for (auto& [it, v] : by_iter) max_loss = std::max(max_loss, median(v));
  }

  const double left = 60.0, top = 40.0, panel_w = 420.0, panel_h = 180.0, width = left + panel_w + 160.0;
  const double height = top + 2.0 * panel_h + 90.0;
  const double xs = max_iter > 0 ? panel_w / max_iter : panel_w;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
      << "\" viewBox=\"0 0 " << num(width) << " " << num(height) << "\">\n";
  svg << "  <text x=\"" << num(left) << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">"
      << "Attack loss (top) and stage-2 fraction (bottom) per iteration</text>\n";
  for (int panel = 0; panel < 2; ++panel) {
    const double py = top + panel * (panel_h + 40.0);
    svg << "  <rect x=\"" << num(left) << "\" y=\"" << num(py) << "\" width=\"" << num(panel_w) << "\" height=\""
        << num(panel_h) << "\" fill=\"none\" stroke=\"black\"/>\n";
    svg << "  <text x=\"" << num(left - 8) << "\" y=\"" << num(py + 10)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
        << (panel == 0 ? num(max_loss) : std::string("1.00")) << "</text>\n";
  }
  for (std::size_t a = 0; a < order.size(); ++a) {
    const auto& name = order[a];
    for (int panel = 0; panel < 2; ++panel) {
      const double py = top + panel * (panel_h + 40.0);
      const auto& series = panel == 0 ? loss[name] : stage2[name];
      const double scale = panel == 0 ? max_loss : 1.0;
      svg << "  <polyline class=\"" << (panel == 0 ? "loss" : "stage2") << "\" data-attack=\"" << escape(name)
          << "\" fill=\"none\" stroke=\"" << kColors[a % 10] << "\" points=\"";
      bool first = true;
      for (const auto& [it, v] : series) {
        const double x = left + xs * it;
        const double y = py + panel_h * (1.0 - std::clamp(median(v) / scale, 0.0, 1.0));
        svg << (first ? "" : " ") << num(x) << "," << num(y);
        first = false;
      }
      svg << "\"/>\n";
    }
    const double ly = top + 14.0 * static_cast<double>(a);
    svg << "  <text x=\"" << num(left + panel_w + 12) << "\" y=\"" << num(ly + 9) << "\" fill=\""
        << kColors[a % 10] << "\" font-family=\"sans-serif\" font-size=\"10\">" << escape(name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::filesystem::path> emit_plots(const TransferReport& report, const std::filesystem::path& out_dir) {
  if (report.records.empty()) {
    std::cerr << "warning: report has no records; no plots written\n";
    return {};
  }
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  const auto bars = out_dir / "transfer_bars.svg";
  write_text(bars, transfer_bar_chart_svg(report));
  written.push_back(bars);
  if (!report.traces.empty()) {
    const auto traces = out_dir / "traces.svg";
    write_text(traces, trace_chart_svg(report));
    written.push_back(traces);
  }
  return written;
}

}  // namespace tseg
