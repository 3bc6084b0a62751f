// SPDX-License-Identifier: Apache-2.0
#include "core/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace bpc {

using nlohmann::json;

namespace {

template <class T>
void put_le(std::string& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(const std::string& in, std::size_t off) {
  if (off + sizeof(T) > in.size()) throw Error("binary blob truncated");
  unsigned char b[sizeof(T)];
  std::memcpy(b, in.data() + off, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace

void put_f64(std::string& out, double v) { put_le(out, v); }
double get_f64(const std::string& in, std::size_t off) { return get_le<double>(in, off); }
void put_i32(std::string& out, std::int32_t v) { put_le(out, v); }
std::int32_t get_i32(const std::string& in, std::size_t off) { return get_le<std::int32_t>(in, off); }

std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write '" + p.string() + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("short write to '" + p.string() + "'");
}

json graph_document(const ModelGraph& g, std::string& blob) {
  json doc = g.to_json();
  json table = json::array();
  blob.clear();
  for (int i = 0; i < g.params.size(); ++i) {
    const Param& p = g.params.at(i);
    table.push_back({{"name", p.name},
                     {"role", role_name(p.role)},
                     {"shape", p.value.shape()},
                     {"offset", blob.size()},
                     {"weight_decay", p.weight_decay}});
    for (double v : p.value.data()) put_f64(blob, v);
  }
  doc["params"] = table;
  doc["blob"] = {{"dtype", "float64-le"}, {"bytes", blob.size()}};
  return doc;
}

ModelGraph graph_from_document(const json& doc, const std::string& blob) {
  if (doc.at("blob").at("dtype") != "float64-le") throw Error("unsupported weight blob dtype");
  if (doc.at("blob").at("bytes").get<std::size_t>() != blob.size())
    throw Error(fmt::format("weight blob has {} bytes, descriptor says {}", blob.size(),
                            doc.at("blob").at("bytes").get<std::size_t>()));
  ParamStore ps;
  for (const auto& pj : doc.at("params")) {
    Shape shape = pj.at("shape").get<Shape>();
    std::vector<double> vals(shape_numel(shape));
    std::size_t off = pj.at("offset").get<std::size_t>();
    for (double& v : vals) {
      v = get_f64(blob, off);
      off += 8;
    }
    ps.add(pj.at("name").get<std::string>(), Tensor(shape, std::move(vals)),
           role_from_name(pj.at("role").get<std::string>()), pj.value("weight_decay", 0.0));
  }
  return ModelGraph::from_json(doc, std::move(ps));
}

void save_graph(const ModelGraph& g, const std::filesystem::path& stem) {
  std::string blob;
  json doc = graph_document(g, blob);
  doc["blob"]["file"] = stem.filename().string() + ".bin";
  write_file(std::filesystem::path(stem.string() + ".json"), doc.dump(1));
  write_file(std::filesystem::path(stem.string() + ".bin"), blob);
}

ModelGraph load_graph(const std::filesystem::path& stem) {
  const json doc = json::parse(read_file(std::filesystem::path(stem.string() + ".json")));
  return graph_from_document(doc, read_file(std::filesystem::path(stem.string() + ".bin")));
}

}  // namespace bpc
