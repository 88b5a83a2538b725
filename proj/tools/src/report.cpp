#include "ciss/cli/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ciss/error.hpp"

namespace ciss::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 64.0;
constexpr double kRight = 170.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 52.0;

constexpr const char* kPalette[] = {
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939",
    "#8c6d31", "#843c39", "#7b4173", "#3182bd", "#e6550d", "#31a354"};

std::string escape_xml(std::string_view s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(ch);
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void settle() {
    if (!(lo <= hi)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  }
};

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label,
                           const std::vector<Series>& series) {
  Range xr, yr;
  for (const Series& s : series) {
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  xr.settle();
  yr.settle();
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph; };

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0:.0f}\" "
      "height=\"{1:.0f}\" viewBox=\"0 0 {0:.0f} {1:.0f}\" "
      "font-family=\"sans-serif\" font-size=\"11\">\n",
      kWidth, kHeight);
  svg += fmt::format("<rect width=\"{:.0f}\" height=\"{:.0f}\" fill=\"white\"/>\n",
                     kWidth, kHeight);
  svg += fmt::format(
      "<text x=\"{:.1f}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
      kLeft + pw / 2, escape_xml(title));
  svg += fmt::format(
      "<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" "
      "fill=\"none\" stroke=\"#444\"/>\n",
      kLeft, kTop, pw, ph);

  for (int i = 0; i <= 4; ++i) {
    const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    svg += fmt::format(
        "<line x1=\"{0:.1f}\" x2=\"{1:.1f}\" y1=\"{2:.1f}\" y2=\"{2:.1f}\" "
        "stroke=\"#ddd\"/>\n"
        "<text x=\"{3:.1f}\" y=\"{4:.1f}\" text-anchor=\"end\">{5:.4g}</text>\n",
        kLeft, kLeft + pw, py(fy), kLeft - 6, py(fy) + 4, fy);
    svg += fmt::format(
        "<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.4g}</text>\n",
        px(fx), kTop + ph + 16, fx);
  }
  svg += fmt::format(
      "<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n",
      kLeft + pw / 2, kHeight - 14, escape_xml(x_label));
  svg += fmt::format(
      "<text x=\"16\" y=\"{0:.1f}\" text-anchor=\"middle\" "
      "transform=\"rotate(-90 16 {0:.1f})\">{1}</text>\n",
      kTop + ph / 2, escape_xml(y_label));

  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (i > 0) points.push_back(' ');
      points += fmt::format("{:.2f},{:.2f}", px(s.x[i]), py(s.y[i]));
    }
    svg += fmt::format(
        "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" "
        "points=\"{}\"><title>{}</title></polyline>\n",
        color, points, escape_xml(s.name));
    const double ly = kTop + 8 + 15.0 * static_cast<double>(k);
    const double lx = kLeft + pw + 12;
    svg += fmt::format(
        "<line x1=\"{0:.1f}\" x2=\"{1:.1f}\" y1=\"{2:.1f}\" y2=\"{2:.1f}\" "
        "stroke=\"{3}\" stroke-width=\"2\"/>\n"
        "<text x=\"{4:.1f}\" y=\"{5:.1f}\">{6}</text>\n",
        lx, lx + 18, ly, color, lx + 24, ly + 4, escape_xml(s.name));
  }
  svg += "</svg>\n";
  return svg;
}

std::vector<Series> miou_series(const CsvTable& metrics,
                                const CsvTable* summary) {
  std::map<int, Series> per_class;
  const std::size_t cs = metrics.column("step");
  const std::size_t cc = metrics.column("class_id");
  const std::size_t ci = metrics.column("iou");
  for (const auto& row : metrics.rows) {
    const auto v = parse_real(row[ci]);
    if (!v) continue;
    const int cls = static_cast<int>(*parse_real(row[cc]));
    Series& s = per_class[cls];
    s.name = fmt::format("class {}", cls);
    s.x.push_back(*parse_real(row[cs]));
    s.y.push_back(*v);
  }
  std::vector<Series> out;
  for (auto& [cls, s] : per_class) out.push_back(std::move(s));
  if (summary != nullptr) {
    const std::size_t ss = summary->column("step");
    for (const char* name : {"miou_b", "miou_n", "miou_all", "hiou"}) {
      const std::size_t col = summary->column(name);
      Series s;
      s.name = name;
      for (const auto& row : summary->rows) {
        const auto v = parse_real(row[col]);
        if (!v) continue;
        s.x.push_back(*parse_real(row[ss]));
        s.y.push_back(*v);
      }
      if (!s.x.empty()) out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<Series> drift_series(const CsvTable& drift) {
  const std::size_t cs = drift.column("step");
  const std::size_t ci = drift.column("iter");
  const std::size_t cols[] = {drift.column("dz"), drift.column("dz_plus"),
                              drift.column("dz_minus")};
  std::vector<Series> out = {{"dz", {}, {}}, {"dz_plus", {}, {}},
                             {"dz_minus", {}, {}}};
  // Iterations restart at every step; lay the steps end to end.
  double offset = 0.0, step_span = 0.0;
  double current_step = std::numeric_limits<double>::quiet_NaN();
  for (const auto& row : drift.rows) {
    const double step = *parse_real(row[cs]);
    const double iter = *parse_real(row[ci]);
    if (step != current_step) {
      offset += step_span;
      step_span = 0.0;
      current_step = step;
    }
    step_span = std::max(step_span, iter);
    for (std::size_t k = 0; k < 3; ++k) {
      out[k].x.push_back(offset + iter);
      out[k].y.push_back(parse_real(row[cols[k]]).value_or(0.0));
    }
  }
  return out;
}

std::vector<fs::path> plot_run(const fs::path& run_dir) {
  const fs::path metrics_path = run_dir / "metrics.csv";
  if (!fs::exists(metrics_path)) {
    throw ConfigError(fmt::format("{} not found", metrics_path.string()));
  }
  const CsvTable metrics = read_csv(metrics_path);
  std::optional<CsvTable> summary;
  if (fs::exists(run_dir / "metrics_summary.csv")) {
    summary = read_csv(run_dir / "metrics_summary.csv");
  }
  std::vector<fs::path> written;
  const fs::path miou_svg = run_dir / "miou_over_steps.svg";
  write_file_atomic(miou_svg,
                    line_chart_svg("mIoU over steps", "step", "IoU (%)",
                                   miou_series(metrics, summary ? &*summary : nullptr)));
  written.push_back(miou_svg);

  const fs::path drift_path = run_dir / "drift.csv";
  std::optional<CsvTable> drift;
  if (fs::exists(drift_path)) drift = read_csv(drift_path);
  if (!drift || drift->rows.empty()) {
    spdlog::warn("{}: no drift data, skipping drift.svg", run_dir.string());
    return written;
  }
  const fs::path drift_svg = run_dir / "drift.svg";
  write_file_atomic(drift_svg,
                    line_chart_svg("Logit drift from the previous model",
                                   "iteration", "RMS change",
                                   drift_series(*drift)));
  written.push_back(drift_svg);
  return written;
}

namespace {

struct RunFinal {
  std::string group;
  std::string scenario;
  double miou_b = 0, miou_n = 0, hiou = 0, miou_all = 0;
};

RunFinal load_final(const fs::path& dir) {
  const fs::path path = dir / "summary.json";
  if (!fs::exists(path)) {
    throw ConfigError(fmt::format("{}: not a completed run (no summary.json)",
                                  dir.string()));
  }
  try {
    const json doc = json::parse(read_file(path));
    const json& last = doc.at("steps").back();
    auto num = [](const json& v) { return v.is_null() ? 0.0 : v.get<double>(); };
    RunFinal r;
    r.group = doc.at("group").get<std::string>();
    r.scenario = fmt::format("{} {} K={}", doc.at("scenario").get<std::string>(),
                             doc.at("setting").get<std::string>(),
                             doc.at("num_classes").get<int>());
    r.miou_b = num(last.at("miou_b"));
    r.miou_n = num(last.at("miou_n"));
    r.hiou = num(last.at("hiou"));
    r.miou_all = num(last.at("miou_all"));
    return r;
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string cell(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return fmt::format("{:.2f}", mean);
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return fmt::format("{:.2f} ± {:.2f}", mean, sd);
}

// Display width; counts UTF-8 code points.
std::size_t width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
  return n;
}

}  // namespace

std::string compare_runs(const std::vector<fs::path>& run_dirs) {
  if (run_dirs.empty()) throw ConfigError("compare: no run directories given");
  std::vector<RunFinal> finals;
  for (const fs::path& d : run_dirs) finals.push_back(load_final(d));
  for (std::size_t i = 1; i < finals.size(); ++i) {
    if (finals[i].scenario != finals[0].scenario) {
      throw ConfigError(fmt::format(
          "compare: {} ran scenario '{}' but {} ran '{}'",
          run_dirs[i].string(), finals[i].scenario, run_dirs[0].string(),
          finals[0].scenario));
    }
  }

  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunFinal*>> groups;
  for (const RunFinal& r : finals) {
    if (!groups.contains(r.group)) order.push_back(r.group);
    groups[r.group].push_back(&r);
  }

  std::vector<std::vector<std::string>> table = {
      {"run", "n", "mIoU_b", "mIoU_n", "hIoU", "mIoU_all"}};
  for (const std::string& g : order) {
    const auto& runs = groups[g];
    std::vector<double> b, n, h, a;
    for (const RunFinal* r : runs) {
      b.push_back(r->miou_b);
      n.push_back(r->miou_n);
      h.push_back(r->hiou);
      a.push_back(r->miou_all);
    }
    table.push_back({g, std::to_string(runs.size()), cell(b), cell(n), cell(h),
                     cell(a)});
  }

  std::vector<std::size_t> widths(table[0].size(), 3);
  for (const auto& row : table) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      widths[c] = std::max(widths[c], width(row[c]));
    }
  }
  auto render = [&](const std::vector<std::string>& row) {
    std::string line = "|";
    for (std::size_t c = 0; c < row.size(); ++c) {
      const std::string pad(widths[c] - width(row[c]), ' ');
      line += " " + (c == 0 ? row[c] + pad : pad + row[c]) + " |";
    }
    return line + "\n";
  };
  std::string out = render(table[0]);
  out += "|";
  for (std::size_t c = 0; c < widths.size(); ++c) {
    out += c == 0 ? " " + std::string(widths[c], '-') + " |"
                  : " " + std::string(widths[c] - 1, '-') + ": |";
  }
  out += "\n";
  for (std::size_t r = 1; r < table.size(); ++r) out += render(table[r]);
  return out;
}

}  // namespace ciss::cli
