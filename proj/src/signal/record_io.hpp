// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "signal/records.hpp"

namespace bpc {

/// Reads a per-subject CSV with header `time,ppg,abp` (seconds, a.u., mmHg).
/// The sampling rate is taken from the median time step. An empty abp
/// column is allowed when every abp cell is empty.
SubjectRecord load_record_csv(const std::filesystem::path& path, const std::string& id = "");

void save_record_csv(const SubjectRecord& rec, const std::filesystem::path& path);

/// Loads every *.csv in a directory, sorted by file name; the stem is the subject id.
std::vector<SubjectRecord> load_record_dir(const std::filesystem::path& dir);

}  // namespace bpc
