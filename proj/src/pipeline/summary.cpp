// SPDX-License-Identifier: Apache-2.0
#include "pipeline/summary.hpp"

#include <algorithm>
#include <map>

#include <fmt/format.h>

#include "core/serialize.hpp"
#include "mps/mps.hpp"

namespace bpc {

namespace fs = std::filesystem;

std::vector<LayerSummary> summarize_layers(const ModelGraph& g) {
  std::map<std::string, std::string> choice;  // site -> label
  if (g.meta.contains("nas_choices"))
    for (const auto& r : g.meta["nas_choices"]) choice[r.at("site").get<std::string>()] = r.at("choice").get<std::string>();
  std::map<std::string, std::pair<int, int>> kept;
  if (g.meta.contains("pit_kept"))
    for (const auto& r : g.meta["pit_kept"]) kept[r.at("node").get<std::string>()] = {r.at("kept").get<int>(), r.at("total").get<int>()};

  std::map<std::string, int> precision;  // layers still searching report their argmax
  for (const auto& p : summarize_precision(g)) precision[p.id] = p.bits;

  std::vector<LayerSummary> rows;
  std::map<std::string, bool> seen_site;
  for (int i = 0; i < g.size(); ++i) {
    const auto* conv = dynamic_cast<const Conv1d*>(g.node(i).layer.get());
    if (conv == nullptr) continue;
    const std::string& id = g.node(i).id;
    LayerSummary s;
    s.layer = id;
    // NAS splits a site into "<site>.dw" and "<site>.pw".
    std::string site = id;
    if (const auto dot = id.rfind('.'); dot != std::string::npos) site = id.substr(0, dot);
    if (auto it = choice.find(site); it != choice.end()) {
      s.op = it->second;
      seen_site[site] = true;
    } else {
      s.op = conv->spec().depthwise() ? "DW" : (conv->is_linear() ? "linear" : "conv");
    }
    s.total = s.kept = conv->spec().out_ch;
    if (auto it = kept.find(id); it != kept.end()) {
      s.kept = it->second.first;
      s.total = it->second.second;
    }
    s.retained = s.total > 0 ? static_cast<double>(s.kept) / s.total : 1.0;
    s.bits = conv->wq ? (conv->wq->frozen > 0 ? conv->wq->frozen : precision[id]) : 32;
    s.params = conv->param_count(g.params);
    rows.push_back(s);
  }
  for (const auto& [site, label] : choice) {
    if (seen_site.count(site)) continue;
    LayerSummary s;
    s.layer = site;
    s.op = label;
    s.bypassed = true;
    s.bits = 0;
    rows.push_back(s);
  }
  return rows;
}

std::string layers_csv(const std::vector<LayerSummary>& rows) {
  std::string out = "layer,op,bypassed,kept,total,retained,bits,params\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{},{},{},{:.4f},{},{}\n", r.layer, r.op, r.bypassed ? "yes" : "no", r.kept, r.total,
                       r.retained, r.bits, r.params);
  return out;
}

int summarize_outputs(const fs::path& root) {
  if (!fs::exists(root)) throw Error("no outputs at " + root.string());
  std::vector<fs::path> models;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "model.json") models.push_back(e.path());
  std::sort(models.begin(), models.end());
  std::string table = "reference,stage,lambda,params,bits,mae_sbp,mae_dbp\n";
  int n = 0;
  for (const auto& m : models) {
    const fs::path dir = m.parent_path();
    const ModelGraph g = load_graph(dir / "model");
    const auto rows = summarize_layers(g);
    write_file(dir / "layers.csv", layers_csv(rows));
    ++n;
    if (!fs::exists(dir / "metrics.json")) continue;
    const auto j = nlohmann::json::parse(read_file(dir / "metrics.json")).at("point");
    table += fmt::format("{},{},{:.6g},{},{},{:.4f},{:.4f}\n", fs::relative(dir, root).generic_string(),
                         j.value("stage", ""), j.value("lambda", 0.0), j.value("params", 0.0), j.value("bits", 0.0),
                         j.value("mae_sbp", 0.0), j.value("mae_dbp", 0.0));
  }
  write_file(root / "models.csv", table);
  return n;
}

}  // namespace bpc
