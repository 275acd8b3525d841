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

#ifndef SMOKEDET_REPORT_HPP_
#define SMOKEDET_REPORT_HPP_

#include <filesystem>
#include <string>
#include <vector>

namespace smokedet {

struct ReportTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

/// One row per report dir: run name, sampling mode, parameter counts, then the
/// summary metrics. Fails without output if any dir lacks summary.csv or the
/// metric sets differ.
ReportTable merge_reports(const std::vector<std::filesystem::path>& dirs);

std::string table_csv(const ReportTable& t);
/// Grouped bar chart of the metric columns, one colour per run.
std::string table_svg(const ReportTable& t);

}  // namespace smokedet

#endif  // SMOKEDET_REPORT_HPP_
