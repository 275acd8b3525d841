/* Copyright 2026 The smokedet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "report.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace smokedet {

namespace fs = std::filesystem;

namespace {

using Pairs = std::vector<std::pair<std::string, std::string>>;

Pairs read_two_column(const fs::path& path, const std::string& header) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing " + path.filename().string() + " in " +
                                    path.parent_path().string());
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw std::runtime_error(path.string() + ": expected header '" + header + "'");
  }
  Pairs out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error(path.string() + ": malformed row");
    out.emplace_back(line.substr(0, comma), line.substr(comma + 1));
  }
  return out;
}

std::string lookup(const Pairs& p, const std::string& key) {
  for (const auto& [k, v] : p) {
    if (k == key) return v;
  }
  return "NA";
}

std::string escape_xml(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

const std::vector<std::string> kRunColumns{"run", "sampling_mode", "param_count",
                                           "ccpe_param_count"};

}  // namespace

ReportTable merge_reports(const std::vector<fs::path>& dirs) {
  if (dirs.empty()) throw std::invalid_argument("report: at least one run dir is required");
  ReportTable t;
  std::vector<std::string> metric_keys;
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    const auto& dir = dirs[i];
    if (!fs::exists(dir / "summary.csv")) {
      throw std::runtime_error("report: missing summary.csv in " + dir.string());
    }
    const Pairs summary = read_two_column(dir / "summary.csv", "metric,value");
    std::vector<std::string> keys;
    for (const auto& [k, v] : summary) keys.push_back(k);
    if (i == 0) {
      metric_keys = keys;
    } else if (keys != metric_keys) {
      throw std::runtime_error("report: " + dir.string() + " has a different metric schema than " +
                               dirs[0].string());
    }
    Pairs run;
    if (fs::exists(dir / "run.csv")) run = read_two_column(dir / "run.csv", "key,value");
    std::string name = fs::path(dir).lexically_normal().filename().string();
    if (name.empty()) name = fs::path(dir).lexically_normal().parent_path().filename().string();
    std::vector<std::string> row{name, lookup(run, "sampling_mode"), lookup(run, "param_count"),
                                 lookup(run, "ccpe_param_count")};
    for (const auto& [k, v] : summary) row.push_back(v);
    t.rows.push_back(std::move(row));
  }
  t.columns = kRunColumns;
  t.columns.insert(t.columns.end(), metric_keys.begin(), metric_keys.end());
  return t;
}

std::string table_csv(const ReportTable& t) {
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << "\n";
  };
  emit(t.columns);
  for (const auto& r : t.rows) emit(r);
  return os.str();
}

std::string table_svg(const ReportTable& t) {
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  const std::size_t first_metric = kRunColumns.size();
  std::vector<std::size_t> metric_cols;
  for (std::size_t c = first_metric; c < t.columns.size(); ++c) {
    if (t.columns[c] != "ttd") metric_cols.push_back(c);  // minutes, not a [0,1] score
  }
  constexpr double W = 900, H = 500, L = 60, R = 160, T = 40, B = 80;
  const double group_w = (W - L - R) / std::max<std::size_t>(metric_cols.size(), 1);
  const double bar_w = group_w * 0.8 / std::max<std::size_t>(t.rows.size(), 1);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"900\" height=\"500\" "
        "viewBox=\"0 0 900 500\">\n<rect width=\"900\" height=\"500\" fill=\"white\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L
     << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = H - B - k / 4.0 * (H - T - B);
    os << "<text x=\"" << L - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
       << k / 4.0 << "</text>\n";
  }
  for (std::size_t m = 0; m < metric_cols.size(); ++m) {
    const double gx = L + m * group_w + group_w * 0.1;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const std::string& cell = t.rows[r][metric_cols[m]];
      if (cell == "NA") continue;
      const double v = std::clamp(std::stod(cell), 0.0, 1.0);
      const double h = v * (H - T - B);
      os << "<rect x=\"" << gx + r * bar_w << "\" y=\"" << H - B - h << "\" width=\"" << bar_w
         << "\" height=\"" << h << "\" fill=\"" << kColors[r % 8] << "\"/>\n";
    }
    os << "<text x=\"" << gx + 0.4 * group_w << "\" y=\"" << H - B + 18
       << "\" text-anchor=\"middle\" font-size=\"11\">" << escape_xml(t.columns[metric_cols[m]])
       << "</text>\n";
  }
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double y = T + 20.0 * r;
    os << "<rect x=\"" << W - R + 15 << "\" y=\"" << y << "\" width=\"12\" height=\"12\" fill=\""
       << kColors[r % 8] << "\"/>\n<text x=\"" << W - R + 32 << "\" y=\"" << y + 10
       << "\" font-size=\"12\">" << escape_xml(t.rows[r][0] + " (" + t.rows[r][1] + ")")
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace smokedet
