#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "opspam/config.hpp"
#include "opspam/corpus.hpp"
#include "opspam/metrics.hpp"

namespace opspam {

struct Band {
  double lo = 0.0;
  double hi = 1.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct PresetRow {
  std::string label;
  // Config overrides applied on top of the base RunConfig, in file order.
  std::vector<std::pair<std::string, std::string>> settings;
  // Embedding file name, resolved against the embeddings directory.
  std::string embeddings_file;
  std::map<std::string, double> reference;
  std::map<std::string, Band> bands;
};

// Cross-row comparison. "mean_greater": mean(left) > mean(right) - tolerance.
// "seed_wins": left beats right on at least min_wins seeds.
struct PresetCheck {
  std::string description;
  std::string left;
  std::string right;
  std::string metric = "accuracy";
  std::string mode = "mean_greater";
  double tolerance = 0.0;
  int min_wins = 0;
};

struct TablePreset {
  int number = 0;
  std::string title;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> metrics;
  std::vector<PresetRow> rows;
  std::vector<PresetCheck> checks;

  bool needs_embeddings() const;
  static TablePreset load(const std::filesystem::path& path);
};

// Directory holding table<N>.ini: $OPSPAM_PRESET_DIR when set, else the
// presets/ directory of the source tree.
std::filesystem::path default_preset_dir();
std::filesystem::path preset_path(int table, const std::filesystem::path& dir = default_preset_dir());

// Names understood in metrics lists, bands and checks: accuracy, precision,
// recall, f1, auc, train_accuracy.
std::optional<double> metric_value(const EvalReport& report, std::optional<double> train_accuracy,
                                   const std::string& metric);

struct RowResult {
  std::string label;
  std::vector<EvalReport> runs;  // one per seed
  std::vector<std::optional<double>> train_accuracy;
  std::map<std::string, double> mean;
  std::map<std::string, bool> band_pass;

  std::vector<double> values(const std::string& metric) const;
};

struct CheckResult {
  std::string description;
  bool passed = false;
  std::string detail;
};

struct ReproduceResult {
  TablePreset preset;
  std::vector<std::uint64_t> seeds;
  std::vector<RowResult> rows;
  std::vector<CheckResult> checks;

  const RowResult& row(const std::string& label) const;
  bool all_passed() const;
  nlohmann::json to_json() const;
  // Measured value next to the reference value for every metric, with band verdicts.
  void print(std::ostream& out) const;
};

struct ReproduceOptions {
  RunConfig base;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::filesystem::path embeddings_dir;
  // Rows to run (by label); empty runs all.
  std::vector<std::string> only_rows;
  std::function<void(const std::string&)> progress;
};

ReproduceResult reproduce(const TablePreset& preset, const std::vector<Document>& corpus,
                          const ReproduceOptions& options);

}  // namespace opspam
