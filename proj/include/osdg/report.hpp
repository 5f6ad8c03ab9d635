#pragma once

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "osdg/config.hpp"
#include "osdg/metrics.hpp"

// Run-directory artifacts: files, manifest and small SVG plots.
namespace osdg::report {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

/// Every artifact written through a RunDir is listed in manifest.json with
/// its size and checksum. The creation time is the only volatile field.
class RunDir {
 public:
  explicit RunDir(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
    const auto mpath = root_ / "manifest.json";
    if (std::filesystem::exists(mpath)) manifest_ = nlohmann::json::parse(read_file(mpath));
    if (!manifest_.is_object()) manifest_ = nlohmann::json::object();
    if (!manifest_.contains("artifacts")) manifest_["artifacts"] = nlohmann::json::object();
  }

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path(const std::string& name) const { return root_ / name; }
  bool has(const std::string& name) const { return std::filesystem::exists(root_ / name); }
  std::string read(const std::string& name) const { return read_file(root_ / name); }

  void write(const std::string& name, const std::string& bytes, const std::string& kind) {
    write_file(root_ / name, bytes);
    manifest_["artifacts"][name] = {{"bytes", bytes.size()}, {"fnv1a64", hex64(fnv1a(bytes))}, {"kind", kind}};
    save_manifest();
  }

  void set_config_hash(const std::string& hash) {
    manifest_["config_hash"] = hash;
    save_manifest();
  }

  const nlohmann::json& manifest() const { return manifest_; }

 private:
  void save_manifest() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    manifest_["updated"] = buf;
    write_file(root_ / "manifest.json", manifest_.dump(2) + "\n");
  }

  std::filesystem::path root_;
  nlohmann::json manifest_;
};

// ---- SVG ----------------------------------------------------------------------

namespace detail {

inline std::string num(double v) { return metrics::fixed(v, 2); }

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

inline const char* series_color(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  return colors[i % 6];
}

constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 20, kTop = 40, kBottom = 60;

inline std::string frame(const std::string& title, const std::string& xlabel, const std::string& ylabel, double ymin,
                         double ymax) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 " << kW
    << ' ' << kH << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
    << escape(title) << "</text>\n"
    << "<line x1=\"" << kLeft << "\" y1=\"" << kH - kBottom << "\" x2=\"" << kW - kRight << "\" y2=\"" << kH - kBottom
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kH - kBottom
    << "\" stroke=\"black\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"12\">" << escape(xlabel) << "</text>\n"
    << "<text x=\"14\" y=\"" << kH / 2 << "\" transform=\"rotate(-90 14 " << kH / 2
    << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << escape(ylabel) << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = ymin + (ymax - ymin) * i / 4.0;
    const double y = kH - kBottom - (kH - kTop - kBottom) * i / 4.0;
    s << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(y + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << metrics::fixed(v, 2) << "</text>\n";
  }
  return s.str();
}

}  // namespace detail

struct Series {
  std::string name;
  std::vector<double> values;
};

/// Grouped bar chart; every series has one value per category.
inline std::string bar_chart(const std::string& title, const std::vector<std::string>& categories,
                             const std::vector<Series>& series, const std::string& ylabel) {
  using namespace detail;
  double ymax = 0.0;
  for (const auto& s : series) {
    if (s.values.size() != categories.size()) throw std::invalid_argument("bar_chart: series length mismatch");
    for (double v : s.values) ymax = std::max(ymax, v);
  }
  if (!(ymax > 0.0)) ymax = 1.0;
  std::ostringstream s;
  s << frame(title, "", ylabel, 0.0, ymax);
  const double plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
  const double group_w = plot_w / static_cast<double>(std::max<std::size_t>(categories.size(), 1));
  const double bar_w = 0.8 * group_w / static_cast<double>(std::max<std::size_t>(series.size(), 1));
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const double gx = kLeft + group_w * static_cast<double>(c) + 0.1 * group_w;
    for (std::size_t k = 0; k < series.size(); ++k) {
      const double h = plot_h * series[k].values[c] / ymax;
      s << "<rect x=\"" << num(gx + bar_w * static_cast<double>(k)) << "\" y=\"" << num(kH - kBottom - h)
        << "\" width=\"" << num(bar_w) << "\" height=\"" << num(h) << "\" fill=\"" << series_color(k) << "\"/>\n";
    }
    s << "<text x=\"" << num(gx + 0.4 * group_w) << "\" y=\"" << kH - kBottom + 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << escape(categories[c])
      << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k)
    s << "<rect x=\"" << kW - 150 << "\" y=\"" << 40 + 16 * k << "\" width=\"10\" height=\"10\" fill=\""
      << series_color(k) << "\"/><text x=\"" << kW - 135 << "\" y=\"" << 49 + 16 * k
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(series[k].name) << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

struct ScatterSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

inline std::string scatter_plot(const std::string& title, const std::vector<ScatterSeries>& series,
                                const std::string& xlabel, const std::string& ylabel) {
  using namespace detail;
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
  bool first = true;
  for (const auto& sr : series)
    for (auto [x, y] : sr.points) {
      if (first) xmin = xmax = x, ymin = ymax = y, first = false;
      xmin = std::min(xmin, x), xmax = std::max(xmax, x), ymin = std::min(ymin, y), ymax = std::max(ymax, y);
    }
  if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
  if (ymax - ymin < 1e-12) ymax = ymin + 1.0;
  std::ostringstream s;
  s << frame(title, xlabel, ylabel, ymin, ymax);
  const double plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
  for (int i = 0; i <= 4; ++i)
    s << "<text x=\"" << num(kLeft + plot_w * i / 4.0) << "\" y=\"" << kH - kBottom + 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
      << metrics::fixed(xmin + (xmax - xmin) * i / 4.0, 2) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    for (auto [x, y] : series[k].points)
      s << "<circle cx=\"" << num(kLeft + plot_w * (x - xmin) / (xmax - xmin)) << "\" cy=\""
        << num(kH - kBottom - plot_h * (y - ymin) / (ymax - ymin)) << "\" r=\"2\" fill=\"" << series_color(k)
        << "\" fill-opacity=\"0.6\"/>\n";
    s << "<rect x=\"" << kW - 150 << "\" y=\"" << 40 + 16 * k << "\" width=\"10\" height=\"10\" fill=\""
      << series_color(k) << "\"/><text x=\"" << kW - 135 << "\" y=\"" << 49 + 16 * k
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(series[k].name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

// ---- CSV reading for plots ------------------------------------------------------

using CsvRows = std::vector<std::vector<std::string>>;

/// Minimal reader for the unquoted CSV files this project writes.
inline CsvRows parse_csv(const std::string& text) {
  CsvRows rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace osdg::report
