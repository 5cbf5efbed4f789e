#pragma once

// Experiment orchestration: flat dotted-key configs, the end-to-end run
// pipeline, parameter sweeps and run-directory persistence.

#include <filesystem>
#include <map>
#include <string>
#include <utility>

#include "bd/adaptive.hpp"
#include "bd/data.hpp"
#include "bd/defenses.hpp"
#include "bd/masks.hpp"
#include "bd/metrics.hpp"
#include "bd/model_zoo.hpp"
#include "bd/poison.hpp"

namespace bd::experiment {

/// Environment variable that overrides run.output_dir.
inline constexpr const char* kOutputRootEnv = "BD_OUTPUT_ROOT";

/// `key = value` lines, `#` comments. Keys are dotted names; duplicates and
/// unknown keys are configuration errors.
class Config {
 public:
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Overrides or adds a key (validated like parsed keys).
  void set(const std::string& key, const std::string& value);
  /// Canonical text: one `key = value` per line in key order.
  std::string echo() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

struct Seeds {
  std::uint64_t split = 0;
  std::uint64_t train = 0;
  std::uint64_t mask = 0;
  std::uint64_t injection = 0;
  std::uint64_t defense = 0;
};

struct RunConfig {
  std::string name = "run";
  std::filesystem::path output_dir = "runs";

  std::string data_source = "synthetic";  ///< "synthetic" or "idx"
  std::filesystem::path images;
  std::filesystem::path labels;
  int classes = 10;
  int per_class = 100;
  int image_size = 32;
  int subset = 0;   ///< stratified cap on the item count, 0 = all
  int augment = 0;  ///< transformed copies per item
  data::SplitPlan split;

  poison::Scenario scenario = poison::Scenario::bib_pkd;
  zoo::ArchitectureId architecture = zoo::ArchitectureId::tiny_synthetic;
  /// false: no poisoned training, the mask attacks the clean model directly.
  bool poison = true;

  masks::MaskKind mask_kind = masks::MaskKind::static_pattern;
  double intensity = 10.0;  ///< static c_m
  int region = 2;
  int pos_i = 0;
  int pos_j = 0;
  adaptive::UniversalParams universal;
  int mask_samples = 100;

  std::vector<std::pair<int, int>> pairs;
  int bib_count = 10;
  int per_batch = 1;
  bool blur_injection = false;

  poison::TrainConfig train;
  poison::BidConfig bid;
  defense::DefenseSpec defense;
  double low_freq_fraction = 0.25;
  bool save_models = true;

  std::uint64_t seed = 0;
  Seeds seeds;

  /// Throws ErrorCode::configuration on missing seed, bad pairs, bad values.
  static RunConfig from(const Config& config);
  /// Value shown in the c_m_or_xi column.
  double mask_intensity() const;
};

/// Output root after the environment override.
std::filesystem::path output_root(const RunConfig& config);

struct RunResult {
  std::filesystem::path directory;
  std::vector<metrics::ExperimentReport> reports;
  std::string csv;
};

/// Loads and splits the data named by the config.
data::Splits load_splits(const RunConfig& config);

/// Full pipeline for every pair; writes the run directory and returns the
/// reports and CSV text (per-pair rows then a mean row).
RunResult run(const Config& config);

enum class SweepAxis { injection, intensity, xi };
std::string_view to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(std::string_view name);

/// One run per value in `sweep.values`, sharing data, seeds and the
/// scenario models; consolidated CSV at <run dir>/sweep.csv.
RunResult sweep(const Config& config, SweepAxis axis);

/// Command wrappers: exit code 0 on success; on failure an error record
/// (error.json) is written to the run directory and 1 is returned.
int run_command(const std::filesystem::path& config_path, const std::vector<std::string>& overrides = {});
int sweep_command(const std::filesystem::path& config_path, SweepAxis axis,
                  const std::vector<std::string>& overrides = {});

/// Applies `key=value` override strings.
void apply_overrides(Config& config, const std::vector<std::string>& overrides);

}  // namespace bd::experiment
