// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "core/graph.hpp"

namespace bpc {

/// Writes `<stem>.json` (graph descriptor and parameter table) and
/// `<stem>.bin` (little-endian float64 parameter values, in table order).
void save_graph(const ModelGraph& g, const std::filesystem::path& stem);
ModelGraph load_graph(const std::filesystem::path& stem);

/// Descriptor plus parameter table; `blob` receives the raw parameter bytes.
nlohmann::json graph_document(const ModelGraph& g, std::string& blob);
ModelGraph graph_from_document(const nlohmann::json& doc, const std::string& blob);

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, const std::string& bytes);

/// Little-endian helpers shared by the binary formats.
void put_f64(std::string& out, double v);
double get_f64(const std::string& in, std::size_t off);
void put_i32(std::string& out, std::int32_t v);
std::int32_t get_i32(const std::string& in, std::size_t off);

}  // namespace bpc
