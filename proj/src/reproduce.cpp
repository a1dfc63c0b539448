#include "opspam/reproduce.hpp"

#include <algorithm>
#include <cstdlib>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "opspam/error.hpp"
#include "opspam/pipeline.hpp"

namespace opspam {
namespace {

double to_real(const std::string& where, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ParseError(where + ": expected a number, got '" + v + "'");
  }
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

}  // namespace

bool TablePreset::needs_embeddings() const {
  return std::any_of(rows.begin(), rows.end(),
                     [](const PresetRow& r) { return !r.embeddings_file.empty(); });
}

TablePreset TablePreset::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("preset file " + path.string() + " not found");
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(std::string("preset: ") + e.what());
  }
  TablePreset p;
  for (const auto& [section, body] : tree) {
    const auto where = path.filename().string() + " [" + section + "]";
    if (section == "table") {
      for (const auto& [key, value] : body) {
        const auto& v = value.data();
        if (key == "number") {
          p.number = static_cast<int>(to_real(where, v));
        } else if (key == "title") {
          p.title = v;
        } else if (key == "seeds") {
          for (const auto& s : split_list(v)) {
            p.seeds.push_back(static_cast<std::uint64_t>(to_real(where, s)));
          }
        } else if (key == "metrics") {
          p.metrics = split_list(v);
        } else {
          throw ParseError(where + ": unknown key '" + key + "'");
        }
      }
    } else if (starts_with(section, "row")) {
      PresetRow row;
      for (const auto& [key, value] : body) {
        const auto& v = value.data();
        if (key == "label") {
          row.label = v;
        } else if (key == "embeddings_file") {
          row.embeddings_file = v;
        } else if (starts_with(key, "set.")) {
          row.settings.emplace_back(key.substr(4), v);
        } else if (starts_with(key, "reference.")) {
          row.reference[key.substr(10)] = to_real(where, v);
        } else if (starts_with(key, "band.")) {
          const auto parts = split_list(v);
          if (parts.size() != 2) throw ParseError(where + ": band needs 'lo,hi'");
          row.bands[key.substr(5)] = Band{to_real(where, parts[0]), to_real(where, parts[1])};
        } else {
          throw ParseError(where + ": unknown key '" + key + "'");
        }
      }
      if (row.label.empty()) throw ParseError(where + ": row without a label");
      p.rows.push_back(std::move(row));
    } else if (starts_with(section, "check")) {
      PresetCheck c;
      for (const auto& [key, value] : body) {
        const auto& v = value.data();
        if (key == "description") {
          c.description = v;
        } else if (key == "left") {
          c.left = v;
        } else if (key == "right") {
          c.right = v;
        } else if (key == "metric") {
          c.metric = v;
        } else if (key == "mode") {
          if (v != "mean_greater" && v != "seed_wins") {
            throw ParseError(where + ": mode must be mean_greater or seed_wins");
          }
          c.mode = v;
        } else if (key == "tolerance") {
          c.tolerance = to_real(where, v);
        } else if (key == "min_wins") {
          c.min_wins = static_cast<int>(to_real(where, v));
        } else {
          throw ParseError(where + ": unknown key '" + key + "'");
        }
      }
      p.checks.push_back(std::move(c));
    } else {
      throw ParseError(where + ": unknown section");
    }
  }
  if (p.rows.empty()) throw ParseError(path.string() + ": preset has no rows");
  if (p.seeds.empty()) p.seeds.push_back(42);
  for (const auto& c : p.checks) {
    auto has = [&](const std::string& l) {
      return std::any_of(p.rows.begin(), p.rows.end(), [&](const PresetRow& r) { return r.label == l; });
    };
    if (!has(c.left) || !has(c.right)) {
      throw ParseError(path.string() + ": check '" + c.description + "' names an unknown row");
    }
  }
  return p;
}

std::filesystem::path default_preset_dir() {
  if (const char* env = std::getenv("OPSPAM_PRESET_DIR"); env && *env) return env;
  return std::filesystem::path(OPSPAM_SOURCE_DIR) / "presets";
}

std::filesystem::path preset_path(int table, const std::filesystem::path& dir) {
  return dir / ("table" + std::to_string(table) + ".ini");
}

std::optional<double> metric_value(const EvalReport& report, std::optional<double> train_accuracy,
                                   const std::string& metric) {
  if (metric == "accuracy") return report.accuracy;
  if (metric == "precision") return report.precision;
  if (metric == "recall") return report.recall;
  if (metric == "f1") return report.f1;
  if (metric == "auc") return report.auc;
  if (metric == "train_accuracy") return train_accuracy;
  throw UsageError("unknown metric '" + metric + "'");
}

std::vector<double> RowResult::values(const std::string& metric) const {
  std::vector<double> out;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (auto v = metric_value(runs[i], train_accuracy[i], metric)) out.push_back(*v);
  }
  return out;
}

const RowResult& ReproduceResult::row(const std::string& label) const {
  for (const auto& r : rows) {
    if (r.label == label) return r;
  }
  throw UsageError("no row '" + label + "' in the result");
}

bool ReproduceResult::all_passed() const {
  for (const auto& r : rows) {
    for (const auto& [m, ok] : r.band_pass) {
      if (!ok) return false;
    }
  }
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

ReproduceResult reproduce(const TablePreset& preset, const std::vector<Document>& corpus,
                          const ReproduceOptions& options) {
  ReproduceResult result;
  result.preset = preset;
  result.seeds = options.seeds.value_or(preset.seeds);

  for (const auto& row : preset.rows) {
    if (!options.only_rows.empty() &&
        std::find(options.only_rows.begin(), options.only_rows.end(), row.label) ==
            options.only_rows.end()) {
      continue;
    }
    RowResult rr;
    rr.label = row.label;
    for (const auto seed : result.seeds) {
      RunConfig cfg = options.base;
      for (const auto& [k, v] : row.settings) cfg.set(k, v);
      if (!row.embeddings_file.empty()) {
        const auto file = options.embeddings_dir / row.embeddings_file;
        if (!std::filesystem::exists(file)) {
          throw Error("row '" + row.label + "' needs embeddings " + file.string() +
                      " (pass --embeddings-dir)");
        }
        cfg.set("neural.embeddings", file.string());
      }
      cfg.set("split.seed", std::to_string(seed));
      cfg.finalize();
      if (options.progress) options.progress(row.label + " seed " + std::to_string(seed));
      auto art = train_model(cfg, corpus);
      art.report.model = row.label;
      rr.runs.push_back(art.report);
      rr.train_accuracy.push_back(art.train_accuracy);
    }
    std::vector<std::string> metric_names = preset.metrics;
    for (const auto& [m, b] : row.bands) {
      if (std::find(metric_names.begin(), metric_names.end(), m) == metric_names.end()) {
        metric_names.push_back(m);
      }
    }
    for (const auto& m : metric_names) {
      const auto vals = rr.values(m);
      if (vals.empty()) continue;
      rr.mean[m] = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
    }
    for (const auto& [m, band] : row.bands) {
      const auto it = rr.mean.find(m);
      rr.band_pass[m] = it != rr.mean.end() && band.contains(it->second);
    }
    result.rows.push_back(std::move(rr));
  }

  for (const auto& c : preset.checks) {
    const auto has = [&](const std::string& l) {
      return std::any_of(result.rows.begin(), result.rows.end(),
                         [&](const RowResult& r) { return r.label == l; });
    };
    if (!has(c.left) || !has(c.right)) continue;
    const auto lv = result.row(c.left).values(c.metric);
    const auto rv = result.row(c.right).values(c.metric);
    CheckResult cr;
    cr.description = c.description;
    std::ostringstream detail;
    detail << std::fixed << std::setprecision(4);
    if (c.mode == "mean_greater") {
      const double lm = result.row(c.left).mean.at(c.metric);
      const double rm = result.row(c.right).mean.at(c.metric);
      cr.passed = lm > rm - c.tolerance;
      detail << c.left << ' ' << lm << " vs " << c.right << ' ' << rm << " (tolerance "
             << c.tolerance << ')';
    } else {
      int wins = 0;
      for (std::size_t i = 0; i < std::min(lv.size(), rv.size()); ++i) wins += lv[i] > rv[i] ? 1 : 0;
      cr.passed = wins >= c.min_wins;
      detail << c.left << " beats " << c.right << " on " << wins << " of "
             << std::min(lv.size(), rv.size()) << " seeds (need " << c.min_wins << ')';
    }
    cr.detail = detail.str();
    result.checks.push_back(std::move(cr));
  }
  return result;
}

nlohmann::json ReproduceResult::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    const PresetRow* pr = nullptr;
    for (const auto& p : preset.rows) {
      if (p.label == r.label) pr = &p;
    }
    nlohmann::json runs = nlohmann::json::array();
    for (std::size_t i = 0; i < r.runs.size(); ++i) {
      auto j = r.runs[i].to_json();
      if (r.train_accuracy[i]) j["train_accuracy"] = *r.train_accuracy[i];
      runs.push_back(j);
    }
    nlohmann::json bands = nlohmann::json::object();
    for (const auto& [m, b] : pr->bands) {
      bands[m] = {{"lo", b.lo}, {"hi", b.hi}, {"pass", r.band_pass.at(m)}};
    }
    rows_json.push_back({{"label", r.label},
                         {"mean", r.mean},
                         {"reference", pr->reference},
                         {"bands", bands},
                         {"runs", runs}});
  }
  nlohmann::json checks_json = nlohmann::json::array();
  for (const auto& c : checks) {
    checks_json.push_back({{"description", c.description}, {"pass", c.passed}, {"detail", c.detail}});
  }
  return {{"table", preset.number}, {"title", preset.title}, {"seeds", seeds},
          {"rows", rows_json},      {"checks", checks_json}, {"all_passed", all_passed()}};
}

void ReproduceResult::print(std::ostream& out) const {
  out << "Table " << preset.number << ": " << preset.title << "\n";
  out << "seeds:";
  for (auto s : seeds) out << ' ' << s;
  out << "\n\n";
  std::size_t label_w = 5;
  for (const auto& r : rows) label_w = std::max(label_w, r.label.size());

  out << std::left << std::setw(static_cast<int>(label_w)) << "Row";
  for (const auto& m : preset.metrics) out << "  " << std::setw(24) << m;
  out << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    const PresetRow* pr = nullptr;
    for (const auto& p : preset.rows) {
      if (p.label == r.label) pr = &p;
    }
    out << std::setw(static_cast<int>(label_w)) << r.label;
    for (const auto& m : preset.metrics) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(4);
      const auto mi = r.mean.find(m);
      if (mi == r.mean.end()) {
        cell << "-";
      } else {
        cell << mi->second;
      }
      const auto pi = pr->reference.find(m);
      cell << " / ";
      if (pi == pr->reference.end()) {
        cell << "-";
      } else {
        cell << pi->second;
      }
      const auto bi = r.band_pass.find(m);
      if (bi != r.band_pass.end()) cell << (bi->second ? " ok" : " OUT");
      out << "  " << std::setw(24) << cell.str();
    }
    out << '\n';
  }
  out << "\n(cells: ours / reference; ok or OUT against the acceptance band)\n";
  for (const auto& r : rows) {
    const PresetRow* pr = nullptr;
    for (const auto& p : preset.rows) {
      if (p.label == r.label) pr = &p;
    }
    for (const auto& [m, b] : pr->bands) {
      if (r.band_pass.count(m) == 0 || preset.metrics.end() != std::find(preset.metrics.begin(), preset.metrics.end(), m)) continue;
      out << r.label << ' ' << m << ' ' << (r.mean.count(m) ? r.mean.at(m) : 0.0) << " band ["
          << b.lo << ", " << b.hi << "] " << (r.band_pass.at(m) ? "ok" : "OUT") << '\n';
    }
  }
  for (const auto& c : checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.description << ": " << c.detail << '\n';
  }
  out.unsetf(std::ios::floatfield);
  out << std::right;
}

}  // namespace opspam
