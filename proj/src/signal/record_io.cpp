// SPDX-License-Identifier: Apache-2.0
#include "signal/record_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "core/tensor.hpp"
#include "signal/peaks.hpp"

namespace bpc {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

double parse_number(const std::string& cell, const std::filesystem::path& path, int line) {
  double v = 0.0;
  const auto* first = cell.data();
  const auto* last = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw Error(fmt::format("{}:{}: cannot parse '{}' as a number", path.string(), line, cell));
  return v;
}

}  // namespace

SubjectRecord load_record_csv(const std::filesystem::path& path, const std::string& id) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(path.string() + ": empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(trim(cell));
  }
  if (header != std::vector<std::string>{"time", "ppg", "abp"})
    throw Error(path.string() + ": expected header 'time,ppg,abp'");

  SubjectRecord rec;
  rec.id = id.empty() ? path.stem().string() : id;
  std::vector<double> t;
  int lineno = 1, with_abp = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (cells.size() == 2) cells.emplace_back();
    if (cells.size() != 3) throw Error(fmt::format("{}:{}: expected 3 columns", path.string(), lineno));
    t.push_back(parse_number(cells[0], path, lineno));
    rec.ppg.push_back(parse_number(cells[1], path, lineno));
    if (!cells[2].empty()) {
      rec.abp.push_back(parse_number(cells[2], path, lineno));
      ++with_abp;
    }
  }
  if (with_abp != 0 && with_abp != static_cast<int>(t.size()))
    throw Error(path.string() + ": abp column is only partially filled");
  if (t.size() < 2) throw Error(path.string() + ": need at least two samples");
  std::vector<double> dt;
  for (std::size_t i = 1; i < t.size(); ++i) dt.push_back(t[i] - t[i - 1]);
  const double step = median(dt);
  if (!(step > 0.0)) throw Error(path.string() + ": time column must increase");
  rec.fs = std::round(1e6 / step) / 1e6;  // absorb printing error in the time column
  return rec;
}

void save_record_csv(const SubjectRecord& rec, const std::filesystem::path& path) {
  if (!rec.abp.empty() && rec.abp.size() != rec.ppg.size()) throw Error("save_record_csv: length mismatch");
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "time,ppg,abp\n";
  for (std::size_t i = 0; i < rec.ppg.size(); ++i) {
    out << fmt::format("{:.17g},{:.17g},", static_cast<double>(i) / rec.fs, rec.ppg[i]);
    if (!rec.abp.empty()) out << fmt::format("{:.17g}", rec.abp[i]);
    out << '\n';
  }
}

std::vector<SubjectRecord> load_record_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<SubjectRecord> out;
  for (const auto& f : files) out.push_back(load_record_csv(f));
  return out;
}

}  // namespace bpc
