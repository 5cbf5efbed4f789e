#include "bd/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

namespace bd::experiment {

namespace fs = std::filesystem;

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "run.name",          "run.output_dir",      "run.save_models",
      "data.source",       "data.images",         "data.labels",
      "data.classes",      "data.per_class",      "data.image_size",
      "data.subset",       "data.augment",        "split.major",
      "split.minor",       "split.test",          "split.validation",
      "scenario",          "architecture",        "poison",
      "mask.kind",         "mask.intensity",      "mask.region",
      "mask.pos_i",        "mask.pos_j",          "mask.xi",
      "mask.passes",       "mask.max_iter",       "mask.overshoot",
      "mask.samples",      "pairs",               "injection.count",
      "injection.per_batch", "injection.blur",    "train.epochs",
      "train.batch_size",  "train.learning_rate", "train.optimizer",
      "bid.batch_size",    "bid.horizon",         "bid.injection_stop",
      "bid.eval_every",    "defense.kind",        "defense.range",
      "defense.kernel",    "defense.sigma",       "metrics.low_freq_fraction",
      "seed",              "seed.split",          "seed.train",
      "seed.mask",         "seed.injection",      "seed.defense",
      "sweep.values",
  };
  return keys;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

[[noreturn]] void config_error(const std::string& message) { throw Error(ErrorCode::configuration, message); }

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  for (char ch : text) {
    if (ch == ',' || std::isspace(static_cast<unsigned char>(ch))) {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else {
      item.push_back(ch);
    }
  }
  if (!item.empty()) out.push_back(item);
  return out;
}

double parse_double(const std::string& key, const std::string& text) {
  if (text == "inf" || text == "+inf") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) config_error(key + ": not a number: " + text);
    return v;
  } catch (const std::logic_error&) {
    config_error(key + ": not a number: " + text);
  }
}

long long parse_int(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size()) config_error(key + ": not an integer: " + text);
    return v;
  } catch (const std::logic_error&) {
    config_error(key + ": not an integer: " + text);
  }
}

std::uint64_t parse_seed(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size() || text.front() == '-') config_error(key + ": not a seed: " + text);
    return v;
  } catch (const std::logic_error&) {
    config_error(key + ": not a seed: " + text);
  }
}

std::vector<std::pair<int, int>> parse_pairs(const std::string& text) {
  std::vector<std::pair<int, int>> pairs;
  for (const auto& item : split_list(text)) {
    const auto sep = item.find_first_of("-:");
    if (sep == std::string::npos || sep == 0) config_error("pairs: expected c-t, got " + item);
    const int c = static_cast<int>(parse_int("pairs", item.substr(0, sep)));
    const int t = static_cast<int>(parse_int("pairs", item.substr(sep + 1)));
    if (c == t) config_error("pairs: source and target must differ in " + item);
    if (c < 0 || t < 0) config_error("pairs: negative class in " + item);
    pairs.emplace_back(c, t);
  }
  return pairs;
}

std::string pair_name(int c, int t) { return std::to_string(c) + "-" + std::to_string(t); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::io, "write failed for " + path.string());
}

nlohmann::json manifest(const RunConfig& rc) {
  return {{"seeds",
           {{"seed", rc.seed},
            {"split", rc.seeds.split},
            {"train", rc.seeds.train},
            {"mask", rc.seeds.mask},
            {"injection", rc.seeds.injection},
            {"defense", rc.seeds.defense}}},
          {"formats",
           {{"checkpoint", "BDNET1"},
            {"mask", "BDMASK1"},
            {"dataset", "IDX"},
            {"report", 1},
            {"config", 1},
            {"csv_header", metrics::kCsvHeader}}},
          {"low_freq_fraction", rc.low_freq_fraction},
          {"scenario", std::string(poison::to_string(rc.scenario))},
          {"architecture", std::string(zoo::to_string(rc.architecture))}};
}

// Everything a run shares across pairs and sweep points.
struct Prepared {
  data::Splits splits;
  poison::ScenarioPlan plan;
  std::optional<poison::ResolvedScenario> resolved;
  nn::Model baseline;  ///< BIB: clean-trained victim; BID: the pre-trained model
  double baseline_accuracy = 0.0;
  int baseline_best_epoch = 0;
};

Prepared prepare(const RunConfig& rc) {
  Prepared p;
  p.splits = load_splits(rc);
  if (p.splits.test.empty()) config_error("test split is empty");
  for (const auto& [c, t] : rc.pairs) {
    if (c >= p.splits.test.class_count || t >= p.splits.test.class_count) {
      config_error("pair " + pair_name(c, t) + " outside the label range");
    }
  }
  const data::LabeledDataset none{{}, {}, p.splits.major.class_count};

  if (rc.poison) {
    p.resolved = poison::resolve_scenario(rc.scenario, p.splits, rc.architecture, rc.train, rc.seeds.train);
    p.plan = p.resolved->plan;
  } else {
    p.plan = poison::plan_scenario(rc.scenario, p.splits, rc.seeds.train);
  }

  if (poison::is_bid(rc.scenario)) {
    if (p.resolved && p.resolved->pretrained) {
      p.baseline = *p.resolved->pretrained;
    } else {
      // Same seed stream resolve_scenario uses for the pre-trained model.
      p.baseline = poison::train_bib(rc.architecture, p.plan.pretrain, none, rc.train,
                                     mix_seed(rc.seeds.train, 21))
                       .first;
    }
  } else {
    auto [model, report] = poison::train_bib(rc.architecture, p.plan.victim_train, none, rc.train, rc.seeds.train);
    p.baseline = std::move(model);
    p.baseline_best_epoch = report.best_epoch;
  }
  p.baseline_accuracy = metrics::accuracy(p.baseline, p.splits.test);
  return p;
}

struct PairOutcome {
  metrics::ExperimentReport report;
  nn::Model model;
  masks::PerturbationMask mask;
};

masks::PerturbationMask make_mask(const RunConfig& rc, const Prepared& p, const nn::Model& mask_model, int c, int t,
                                  std::size_t pair_index) {
  const Shape3 shape = p.splits.test.shape();
  if (rc.mask_kind == masks::MaskKind::static_pattern) {
    auto mask = masks::generate_static(shape.height, shape.width, shape.channels, rc.region, rc.pos_i, rc.pos_j,
                                       rc.intensity);
    mask.params["source"] = c;
    mask.params["target"] = t;
    return mask;
  }
  const data::LabeledDataset& pool = rc.poison ? p.plan.injection_pool : p.plan.victim_train;
  auto idx = pool.indices_of(c);
  if (idx.empty()) throw Error(ErrorCode::empty_source, "no class " + std::to_string(c) + " items for the mask");
  Rng rng(mix_seed(rc.seeds.mask, pair_index));
  rng.shuffle(idx);
  if (rc.mask_samples > 0 && idx.size() > static_cast<std::size_t>(rc.mask_samples)) {
    idx.resize(static_cast<std::size_t>(rc.mask_samples));
  }
  std::vector<Image> samples;
  samples.reserve(idx.size());
  for (auto i : idx) samples.push_back(pool.images[i]);

  adaptive::UniversalParams up = rc.universal;
  up.deepfool.source = c;
  up.deepfool.target = t;
  adaptive::UniversalStats stats;
  auto mask = adaptive::build_universal_mask(mask_model, std::span<const Image>(samples), up, &stats);
  mask.params["deepfool_calls"] = stats.deepfool_calls;
  mask.params["degenerate_skips"] = stats.degenerate_skips;
  return mask;
}

PairOutcome run_pair(const RunConfig& rc, const Prepared& p, int c, int t, std::size_t pair_index) {
  PairOutcome out;
  const bool bid = poison::is_bid(rc.scenario);
  const nn::Model& mask_model = rc.poison ? p.resolved->mask_model : p.baseline;
  out.mask = make_mask(rc, p, mask_model, c, t, pair_index);

  metrics::ExperimentReport& r = out.report;
  r.scenario = rc.poison ? std::string(poison::to_string(rc.scenario)) : "DIRECT";
  r.mask_kind = std::string(masks::to_string(rc.mask_kind));
  r.intensity = rc.mask_intensity();
  r.source = c;
  r.target = t;
  r.seed = rc.seed;
  r.baseline_accuracy = p.baseline_accuracy;
  r.extra["mask_max_intensity"] = out.mask.max_intensity;
  r.extra["mask_params"] = out.mask.params;
  r.extra["low_freq_fraction"] = rc.low_freq_fraction;
  r.extra["mask_source"] = rc.poison && p.plan.mask_model_source == poison::MaskModelSource::surrogate
                               ? "surrogate"
                               : (bid ? "pretrained" : "victim");

  poison::BackdoorProbe probe{&p.splits.test, &out.mask, c, t};
  if (!rc.poison) {
    r.injection = 0;
    out.model = p.baseline;
  } else {
    defense::DefenseSpec blur;
    blur.kind = defense::DefenseKind::blur;
    const defense::DefenseSpec* pre = rc.blur_injection ? &blur : nullptr;
    const auto& pool = p.plan.injection_pool;
    bool resampled = false;
    if (!bid) {
      r.injection = rc.bib_count;
      const auto inj = poison::build_injection_set(pool, c, t, out.mask, rc.bib_count,
                                                   mix_seed(rc.seeds.injection, pair_index), pre, &resampled);
      auto [model, report] = poison::train_bib(rc.architecture, p.plan.victim_train, inj, rc.train, rc.seeds.train,
                                               probe);
      out.model = std::move(model);
      r.injection_ratio = report.injection_ratio;
      r.extra["best_epoch"] = report.best_epoch;
      r.extra["baseline_best_epoch"] = p.baseline_best_epoch;
      nlohmann::json curve = nlohmann::json::array();
      for (const auto& e : report.epochs) {
        curve.push_back({{"epoch", e.epoch},
                         {"loss", e.mean_loss},
                         {"validation_accuracy", e.validation_accuracy},
                         {"success_rate", e.success_rate},
                         {"test_accuracy", e.test_accuracy}});
      }
      r.extra["epochs"] = curve;
    } else {
      r.injection = rc.per_batch;
      const int count = std::max<int>(rc.per_batch, static_cast<int>(pool.indices_of(c).size()));
      const auto inj = poison::build_injection_set(pool, c, t, out.mask, rc.per_batch > 0 ? count : 0,
                                                   mix_seed(rc.seeds.injection, pair_index), pre, &resampled);
      poison::BidConfig bc = rc.bid;
      bc.per_batch = rc.per_batch;
      auto [model, report] = poison::train_bid(p.baseline, p.plan.victim_train, inj, bc, rc.seeds.train, probe);
      out.model = std::move(model);
      r.series = report.series;
      r.injection_ratio =
          poison::injection_ratio(report.clean_consumed, report.injected);
      r.extra["batches"] = report.batches;
      r.extra["stream_passes"] = report.stream_passes;
      r.extra["injection_pool"] = inj.size();
    }
    r.extra["injection_resampled"] = resampled;
  }

  r.success_rate = metrics::attack_success_rate(out.model, p.splits.test, out.mask, c, t);
  r.clean_accuracy = metrics::accuracy(out.model, p.splits.test);
  r.accuracy_loss = metrics::accuracy_loss(p.baseline_accuracy, r.clean_accuracy);

  std::vector<Image> originals;
  for (auto i : p.splits.test.indices_of(c)) originals.push_back(p.splits.test.images[i]);
  const auto masked = masks::apply_all(originals, out.mask);
  double sim = 0.0;
  for (std::size_t i = 0; i < originals.size(); ++i) sim += metrics::phash_similarity(originals[i], masked[i]);
  r.phash_sim = sim / static_cast<double>(originals.size());
  const auto hf = metrics::high_freq_stats(masked, rc.low_freq_fraction);
  r.hf_mean = hf.mean;
  r.hf_stdev = hf.stdev;
  const auto hf_orig = metrics::high_freq_stats(originals, rc.low_freq_fraction);
  const masks::PerturbationMask mask_list[] = {out.mask};
  const auto hf_mask = metrics::high_freq_stats(std::span<const masks::PerturbationMask>(mask_list),
                                                rc.low_freq_fraction);
  r.extra["hf_original_mean"] = hf_orig.mean;
  r.extra["hf_original_stdev"] = hf_orig.stdev;
  r.extra["hf_mask"] = hf_mask.mean;

  if (rc.defense.kind != defense::DefenseKind::none) {
    const auto d = defense::evaluate_defense(out.model, p.splits.test, out.mask, c, t, rc.defense);
    r.extra["defense"] = {{"kind", std::string(defense::to_string(rc.defense.kind))},
                          {"success", d.success},
                          {"defended_success", d.defended_success},
                          {"accuracy", d.accuracy},
                          {"defended_accuracy", d.defended_accuracy},
                          {"success_drop", d.success_drop()},
                          {"accuracy_cost", d.accuracy_cost()}};
  }
  return out;
}

// Runs every pair into `dir` and returns the reports (CSV rows appended to `csv`).
std::vector<metrics::ExperimentReport> run_pairs(const RunConfig& rc, const Prepared& p, const fs::path& dir,
                                                 std::string& csv) {
  std::vector<metrics::ExperimentReport> reports;
  std::string jsonl;
  for (std::size_t i = 0; i < rc.pairs.size(); ++i) {
    const auto [c, t] = rc.pairs[i];
    PairOutcome o = run_pair(rc, p, c, t, i);
    const fs::path pair_dir = dir / ("pair_" + pair_name(c, t));
    fs::create_directories(pair_dir);
    masks::save_mask(o.mask, pair_dir / "mask.bdmask");
    if (rc.save_models) nn::save_checkpoint(o.model, pair_dir / "model.bdnet");
    const auto record = metrics::to_json(o.report);
    write_text(pair_dir / "report.json", record.dump(2) + "\n");
    jsonl += record.dump() + "\n";
    csv += metrics::csv_row(o.report) + "\n";
    reports.push_back(std::move(o.report));
  }
  csv += metrics::csv_mean_row(reports) + "\n";
  write_text(dir / "reports.jsonl", jsonl);
  return reports;
}

fs::path prepare_directory(const RunConfig& rc, const Config& config) {
  const fs::path dir = output_root(rc) / rc.name;
  fs::create_directories(dir);
  write_text(dir / "config.txt", config.echo());
  write_text(dir / "manifest.json", manifest(rc).dump(2) + "\n");
  std::error_code ec;
  fs::remove(dir / "error.json", ec);
  return dir;
}

fs::path error_directory(const Config* config) {
  RunConfig fallback;
  if (config != nullptr) {
    fallback.name = config->get_or("run.name", fallback.name);
    fallback.output_dir = config->get_or("run.output_dir", fallback.output_dir.string());
  }
  return output_root(fallback) / fallback.name;
}

int report_failure(const Config* config, const fs::path& config_path, ErrorCode code, const std::string& message) {
  std::cerr << "error [" << to_string(code) << "]: " << message << "\n";
  try {
    const fs::path dir = error_directory(config);
    fs::create_directories(dir);
    const nlohmann::json record = {{"status", "error"},
                                   {"code", std::string(to_string(code))},
                                   {"message", message},
                                   {"config", config_path.string()}};
    write_text(dir / "error.json", record.dump(2) + "\n");
  } catch (const std::exception& e) {
    std::cerr << "could not write the error record: " << e.what() << "\n";
  }
  return 1;
}

template <class Fn>
int guarded(const fs::path& config_path, const std::vector<std::string>& overrides, Fn&& body) {
  std::optional<Config> config;
  try {
    config = Config::load(config_path);
    apply_overrides(*config, overrides);
    body(*config);
    return 0;
  } catch (const Error& e) {
    return report_failure(config ? &*config : nullptr, config_path, e.code(), e.what());
  } catch (const std::exception& e) {
    return report_failure(config ? &*config : nullptr, config_path, ErrorCode::io, e.what());
  }
}

}  // namespace

Config Config::parse(std::string_view text) {
  Config config;
  std::istringstream in{std::string(text)};
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) config_error("line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (config.has(key)) config_error("line " + std::to_string(number) + ": duplicate key " + key);
    config.set(key, value);
  }
  return config;
}

Config Config::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) config_error("missing key " + key);
  return it->second;
}

std::string Config::get_or(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

long long Config::get_int(const std::string& key, long long fallback) const {
  return has(key) ? parse_int(key, get(key)) : fallback;
}

double Config::get_double(const std::string& key, double fallback) const {
  return has(key) ? parse_double(key, get(key)) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  config_error(key + ": not a boolean: " + v);
}

void Config::set(const std::string& key, const std::string& value) {
  if (key.empty()) config_error("empty key");
  if (known_keys().count(key) == 0) config_error("unknown key " + key);
  values_[key] = value;
}

std::string Config::echo() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

void apply_overrides(Config& config, const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) config_error("override must be key=value: " + item);
    config.set(trim(std::string_view(item).substr(0, eq)), trim(std::string_view(item).substr(eq + 1)));
  }
}

RunConfig RunConfig::from(const Config& c) {
  RunConfig rc;
  if (!c.has("seed")) config_error("seed is mandatory");
  rc.seed = parse_seed("seed", c.get("seed"));
  auto seed_for = [&](const char* key, std::uint64_t stream) {
    return c.has(key) ? parse_seed(key, c.get(key)) : mix_seed(rc.seed, stream);
  };
  rc.seeds.split = seed_for("seed.split", 1);
  rc.seeds.train = seed_for("seed.train", 2);
  rc.seeds.mask = seed_for("seed.mask", 3);
  rc.seeds.injection = seed_for("seed.injection", 4);
  rc.seeds.defense = seed_for("seed.defense", 5);

  rc.name = c.get_or("run.name", rc.name);
  if (rc.name.empty() || rc.name.find('/') != std::string::npos || rc.name == "." || rc.name == "..") {
    config_error("run.name must be a plain directory name");
  }
  rc.output_dir = c.get_or("run.output_dir", rc.output_dir.string());
  rc.save_models = c.get_bool("run.save_models", rc.save_models);

  rc.data_source = c.get_or("data.source", rc.data_source);
  if (rc.data_source != "synthetic" && rc.data_source != "idx") config_error("data.source must be synthetic or idx");
  if (rc.data_source == "idx") {
    rc.images = c.get("data.images");
    rc.labels = c.get("data.labels");
  }
  rc.classes = static_cast<int>(c.get_int("data.classes", rc.data_source == "idx" ? 0 : rc.classes));
  rc.per_class = static_cast<int>(c.get_int("data.per_class", rc.per_class));
  rc.image_size = static_cast<int>(c.get_int("data.image_size", rc.image_size));
  rc.subset = static_cast<int>(c.get_int("data.subset", rc.subset));
  rc.augment = static_cast<int>(c.get_int("data.augment", rc.augment));
  if (rc.subset < 0 || rc.augment < 0) config_error("data.subset and data.augment must be non-negative");
  rc.split.major = c.get_double("split.major", rc.split.major);
  rc.split.minor = c.get_double("split.minor", rc.split.minor);
  rc.split.test = c.get_double("split.test", rc.split.test);
  rc.split.validation = c.get_double("split.validation", rc.split.validation);
  rc.split.seed = rc.seeds.split;

  rc.scenario = poison::parse_scenario(c.get_or("scenario", "BIB-PKD"));
  rc.architecture = zoo::parse_architecture(c.get_or("architecture", "tiny-synthetic"));
  rc.poison = c.get_bool("poison", rc.poison);

  try {
    rc.mask_kind = masks::parse_mask_kind(c.get_or("mask.kind", "static"));
  } catch (const Error& e) {
    config_error(e.what());
  }
  rc.intensity = c.get_double("mask.intensity", rc.intensity);
  rc.region = static_cast<int>(c.get_int("mask.region", rc.region));
  rc.pos_i = static_cast<int>(c.get_int("mask.pos_i", rc.pos_i));
  rc.pos_j = static_cast<int>(c.get_int("mask.pos_j", rc.pos_j));
  rc.universal.xi = c.get_double("mask.xi", rc.universal.xi);
  rc.universal.max_passes = static_cast<int>(c.get_int("mask.passes", rc.universal.max_passes));
  rc.universal.deepfool.max_iterations = static_cast<int>(c.get_int("mask.max_iter", 50));
  rc.universal.deepfool.overshoot = c.get_double("mask.overshoot", 0.02);
  rc.mask_samples = static_cast<int>(c.get_int("mask.samples", rc.mask_samples));

  rc.pairs = parse_pairs(c.get("pairs"));
  if (rc.pairs.empty()) config_error("pairs must list at least one c-t pair");
  rc.bib_count = static_cast<int>(c.get_int("injection.count", rc.bib_count));
  rc.per_batch = static_cast<int>(c.get_int("injection.per_batch", rc.per_batch));
  rc.blur_injection = c.get_bool("injection.blur", rc.blur_injection);
  if (rc.bib_count < 0 || rc.per_batch < 0) config_error("injection counts must be non-negative");

  rc.train.epochs = static_cast<int>(c.get_int("train.epochs", rc.train.epochs));
  rc.train.batch_size = static_cast<int>(c.get_int("train.batch_size", rc.train.batch_size));
  rc.train.learning_rate = c.get_double("train.learning_rate", rc.train.learning_rate);
  const std::string opt = c.get_or("train.optimizer", "adam");
  if (opt == "adam") {
    rc.train.optimizer = nn::OptimizerKind::adam;
  } else if (opt == "sgd") {
    rc.train.optimizer = nn::OptimizerKind::sgd;
  } else {
    config_error("train.optimizer must be adam or sgd");
  }
  rc.train.validation_fraction = rc.split.validation;
  if (rc.train.epochs <= 0 || rc.train.batch_size <= 0) config_error("train.epochs and train.batch_size must be positive");

  rc.bid.batch_size = static_cast<int>(c.get_int("bid.batch_size", rc.bid.batch_size));
  rc.bid.horizon = static_cast<int>(c.get_int("bid.horizon", rc.bid.horizon));
  rc.bid.injection_stop = static_cast<int>(c.get_int("bid.injection_stop", rc.bid.injection_stop));
  rc.bid.eval_every = static_cast<int>(c.get_int("bid.eval_every", rc.bid.eval_every));
  rc.bid.learning_rate = rc.train.learning_rate;
  rc.bid.optimizer = rc.train.optimizer;

  try {
    rc.defense.kind = defense::parse_defense_kind(c.get_or("defense.kind", "none"));
  } catch (const Error& e) {
    config_error(e.what());
  }
  rc.defense.noise_range = static_cast<int>(c.get_int("defense.range", rc.defense.noise_range));
  rc.defense.kernel = static_cast<int>(c.get_int("defense.kernel", rc.defense.kernel));
  rc.defense.sigma = c.get_double("defense.sigma", rc.defense.sigma);
  rc.defense.seed = rc.seeds.defense;
  rc.defense.validate();

  rc.low_freq_fraction = c.get_double("metrics.low_freq_fraction", rc.low_freq_fraction);
  if (!(rc.low_freq_fraction > 0.0 && rc.low_freq_fraction < 1.0)) {
    config_error("metrics.low_freq_fraction must lie in (0, 1)");
  }
  return rc;
}

double RunConfig::mask_intensity() const {
  return mask_kind == masks::MaskKind::static_pattern ? intensity : universal.xi;
}

fs::path output_root(const RunConfig& config) {
  if (const char* env = std::getenv(kOutputRootEnv); env != nullptr && *env != '\0') return fs::path(env);
  return config.output_dir;
}

data::Splits load_splits(const RunConfig& rc) {
  data::LabeledDataset ds;
  if (rc.data_source == "idx") {
    ds = data::load_idx(rc.images, rc.labels, rc.classes);
  } else {
    ds = data::generate_synthetic(rc.classes, rc.per_class, rc.image_size, mix_seed(rc.seeds.split, 1));
  }
  if (rc.subset > 0 && static_cast<std::size_t>(rc.subset) < ds.size()) {
    const double fraction = static_cast<double>(rc.subset) / static_cast<double>(ds.size());
    ds = data::stratified_split(ds, fraction, mix_seed(rc.seeds.split, 2)).first;
  }
  data::Splits splits = data::split(ds, rc.split);
  if (rc.augment > 0) {
    splits.major = data::augment(splits.major, rc.augment, mix_seed(rc.seeds.split, 3));
    if (!splits.minor.empty()) splits.minor = data::augment(splits.minor, rc.augment, mix_seed(rc.seeds.split, 4));
  }
  return splits;
}

RunResult run(const Config& config) {
  const RunConfig rc = RunConfig::from(config);
  RunResult result;
  result.directory = prepare_directory(rc, config);
  const Prepared p = prepare(rc);
  result.csv = std::string(metrics::kCsvHeader) + "\n";
  result.reports = run_pairs(rc, p, result.directory, result.csv);
  write_text(result.directory / "summary.csv", result.csv);
  return result;
}

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::injection: return "injection";
    case SweepAxis::intensity: return "intensity";
    case SweepAxis::xi: return "xi";
  }
  return "unknown";
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "injection") return SweepAxis::injection;
  if (name == "intensity") return SweepAxis::intensity;
  if (name == "xi") return SweepAxis::xi;
  config_error("unknown sweep axis: " + std::string(name));
}

RunResult sweep(const Config& config, SweepAxis axis) {
  const RunConfig base = RunConfig::from(config);
  std::vector<double> values;
  for (const auto& item : split_list(config.get_or("sweep.values", ""))) {
    values.push_back(parse_double("sweep.values", item));
  }
  if (values.empty()) config_error("sweep.values lists no points for axis " + std::string(to_string(axis)));

  RunResult result;
  result.directory = prepare_directory(base, config);
  const Prepared p = prepare(base);
  result.csv = std::string(metrics::kCsvHeader) + "\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    RunConfig rc = base;
    const double v = values[i];
    switch (axis) {
      case SweepAxis::injection:
        if (v < 0 || v != std::floor(v)) config_error("injection sweep values must be non-negative integers");
        if (poison::is_bid(rc.scenario)) {
          rc.per_batch = static_cast<int>(v);
        } else {
          rc.bib_count = static_cast<int>(v);
        }
        break;
      case SweepAxis::intensity:
        rc.intensity = v;
        if (rc.mask_kind == masks::MaskKind::adaptive) rc.universal.xi = v;
        break;
      case SweepAxis::xi:
        rc.universal.xi = v;
        break;
    }
    char label[64];
    std::snprintf(label, sizeof label, "point_%02zu_%g", i, v);
    const fs::path dir = result.directory / label;
    fs::create_directories(dir);
    auto reports = run_pairs(rc, p, dir, result.csv);
    result.reports.insert(result.reports.end(), reports.begin(), reports.end());
  }
  write_text(result.directory / "sweep.csv", result.csv);
  return result;
}

int run_command(const fs::path& config_path, const std::vector<std::string>& overrides) {
  return guarded(config_path, overrides, [](const Config& config) {
    const auto result = run(config);
    std::cout << result.csv;
    std::cout << "run directory: " << result.directory.string() << "\n";
  });
}

int sweep_command(const fs::path& config_path, SweepAxis axis, const std::vector<std::string>& overrides) {
  return guarded(config_path, overrides, [axis](const Config& config) {
    const auto result = sweep(config, axis);
    std::cout << result.csv;
    std::cout << "run directory: " << result.directory.string() << "\n";
  });
}

}  // namespace bd::experiment
