#include "bd/poison.hpp"

#include <algorithm>
#include <cctype>
#include <string>

namespace bd::poison {

namespace {

struct ScenarioName {
  Scenario scenario;
  const char* name;
};

constexpr ScenarioName kScenarioNames[] = {
    {Scenario::bib_pkd, "BIB-PKD"}, {Scenario::bib_mk, "BIB-MK"},   {Scenario::bid_fk, "BID-FK"},
    {Scenario::bid_pkd, "BID-PKD"}, {Scenario::bid_pkm, "BID-PKM"}, {Scenario::bid_mk, "BID-MK"},
};

data::LabeledDataset empty_like(const data::LabeledDataset& ds) {
  data::LabeledDataset out;
  out.class_count = ds.class_count;
  return out;
}

// Evaluation-only helpers; the probe never feeds back into training.
void probe_into(const nn::Model& model, const BackdoorProbe& probe, double& success, double& accuracy) {
  if (!probe.active()) return;
  success = metrics::attack_success(model, *probe.test_set, *probe.mask, probe.source, probe.target).percent();
  accuracy = metrics::correct(model, *probe.test_set).percent();
}

}  // namespace

std::string_view to_string(Scenario s) {
  for (const auto& entry : kScenarioNames) {
    if (entry.scenario == s) return entry.name;
  }
  return "unknown";
}

Scenario parse_scenario(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char ch) { return std::toupper(ch); });
  std::replace(upper.begin(), upper.end(), '_', '-');
  for (const auto& entry : kScenarioNames) {
    if (upper == entry.name) return entry.scenario;
  }
  throw Error(ErrorCode::configuration, "unknown scenario: " + std::string(name));
}

bool is_bid(Scenario s) { return s != Scenario::bib_pkd && s != Scenario::bib_mk; }

void InjectionSpec::validate() const {
  if (source == target) throw Error(ErrorCode::spec, "source and target class must differ");
  if (source < 0 || target < 0) throw Error(ErrorCode::spec, "class indices must be non-negative");
  if (bib_count < 0 || per_batch < 0) throw Error(ErrorCode::spec, "injection counts must be non-negative");
  if (batch_size <= 0) throw Error(ErrorCode::spec, "batch size must be positive");
  if (per_batch >= batch_size) throw Error(ErrorCode::spec, "per-batch injection must be below the batch size");
  if (horizon <= 0) throw Error(ErrorCode::spec, "horizon must be positive");
}

data::LabeledDataset build_injection_set(const data::LabeledDataset& pool, int source, int target,
                                         const masks::PerturbationMask& mask, int count, std::uint64_t seed,
                                         const defense::DefenseSpec* preprocess, bool* resampled) {
  if (count < 0) throw Error(ErrorCode::spec, "injection count must be non-negative");
  if (source == target) throw Error(ErrorCode::spec, "source and target class must differ");
  if (target < 0 || (pool.class_count > 0 && target >= pool.class_count)) {
    throw Error(ErrorCode::class_index, "target class outside the label range");
  }
  if (resampled != nullptr) *resampled = false;
  data::LabeledDataset out = empty_like(pool);
  // A zero mask carries no trigger, so there is nothing to inject.
  const bool zero = std::all_of(mask.values.begin(), mask.values.end(), [](float v) { return v == 0.0f; });
  if (count == 0 || zero) return out;

  std::vector<std::size_t> candidates = pool.indices_of(source);
  if (candidates.empty()) {
    throw Error(ErrorCode::empty_source, "pool has no items of class " + std::to_string(source));
  }
  if (mask.shape() != pool.shape()) throw Error(ErrorCode::input_shape, "mask shape differs from the pool images");

  Rng rng(seed);
  rng.shuffle(candidates);
  std::vector<std::size_t> chosen(candidates.begin(),
                                  candidates.begin() + std::min<std::size_t>(candidates.size(), count));
  while (chosen.size() < static_cast<std::size_t>(count)) {
    if (resampled != nullptr) *resampled = true;
    chosen.push_back(candidates[rng.uniform_int(0, static_cast<std::int64_t>(candidates.size()) - 1)]);
  }

  for (std::size_t i = 0; i < chosen.size(); ++i) {
    Image img = masks::apply(pool.images[chosen[i]], mask);
    if (preprocess != nullptr) img = defense::defend(img, *preprocess, i);
    out.add(std::move(img), target);
  }
  return out;
}

double injection_ratio(std::size_t train_size, std::size_t injection_size) {
  const std::size_t total = train_size + injection_size;
  return total == 0 ? 0.0 : static_cast<double>(injection_size) / static_cast<double>(total);
}

TrainReport fit(nn::Model& model, const data::LabeledDataset& train, const data::LabeledDataset& validation,
                const TrainConfig& config, std::uint64_t seed, const BackdoorProbe& probe) {
  if (config.epochs <= 0) throw Error(ErrorCode::parameter, "epochs must be positive");
  if (config.batch_size <= 0) throw Error(ErrorCode::parameter, "batch size must be positive");
  if (train.empty()) throw Error(ErrorCode::empty_input, "training set is empty");
  if (train.shape() != model.input_shape) throw Error(ErrorCode::input_shape, "training images do not fit the model");

  TrainReport report;
  report.train_size = train.size();
  report.validation_size = validation.size();

  auto optimizer = nn::make_optimizer(config.optimizer, config.learning_rate, model);
  nn::Model best = model;
  double best_score = -1.0;
  std::vector<std::size_t> order(train.size());
  std::vector<const Image*> batch_images;
  std::vector<int> batch_labels;
  std::uint64_t step = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch_images.clear();
      batch_labels.clear();
      for (std::size_t k = start; k < end; ++k) {
        batch_images.push_back(&train.images[order[k]]);
        batch_labels.push_back(train.labels[order[k]]);
      }
      const auto inputs = nn::to_batch(std::span<const Image* const>(batch_images));
      auto result = nn::loss_and_param_gradients(model, inputs, std::span<const int>(batch_labels),
                                                 mix_seed(seed ^ 0x5eedULL, ++step));
      nn::optimizer_step(optimizer, model, result.grads);
      loss_sum += result.loss;
      ++batches;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / static_cast<double>(batches);
    stats.validation_accuracy = validation.empty() ? 0.0 : metrics::accuracy(model, validation);
    probe_into(model, probe, stats.success_rate, stats.test_accuracy);
    report.epochs.push_back(stats);

    // Without a validation set the last epoch wins.
    const double score = validation.empty() ? static_cast<double>(epoch) : stats.validation_accuracy;
    if (score > best_score) {
      best_score = score;
      best = model;
      report.best_epoch = epoch;
      report.best_validation_accuracy = stats.validation_accuracy;
    }
  }
  model = std::move(best);
  return report;
}

std::pair<nn::Model, TrainReport> train_bib(zoo::ArchitectureId arch, const data::LabeledDataset& train_set,
                                            const data::LabeledDataset& injection_set, const TrainConfig& config,
                                            std::uint64_t seed, const BackdoorProbe& probe) {
  if (train_set.empty()) throw Error(ErrorCode::empty_input, "training set is empty");
  if (!injection_set.empty() && injection_set.shape() != train_set.shape()) {
    throw Error(ErrorCode::input_shape, "injection images differ in shape from the training set");
  }
  auto [fit_part, validation] = data::carve_validation(train_set, config.validation_fraction, mix_seed(seed, 1));
  const data::LabeledDataset joint = injection_set.empty() ? fit_part : data::concat(fit_part, injection_set);

  nn::Model model = zoo::build(arch, train_set.shape(), train_set.class_count, mix_seed(seed, 2));
  TrainReport report = fit(model, joint, validation, config, mix_seed(seed, 3), probe);
  report.train_size = fit_part.size();
  report.injection_size = injection_set.size();
  report.injection_ratio = injection_ratio(train_set.size(), injection_set.size());
  return {std::move(model), std::move(report)};
}

std::pair<nn::Model, BidReport> train_bid(const nn::Model& pretrained, const data::LabeledDataset& stream,
                                          const data::LabeledDataset& injection_set, const BidConfig& config,
                                          std::uint64_t seed, const BackdoorProbe& probe) {
  if (config.batch_size <= 0) throw Error(ErrorCode::spec, "batch size must be positive");
  if (config.per_batch < 0) throw Error(ErrorCode::spec, "per-batch injection must be non-negative");
  if (config.per_batch >= config.batch_size) {
    throw Error(ErrorCode::spec, "per-batch injection must be below the batch size");
  }
  if (config.horizon <= 0) throw Error(ErrorCode::spec, "horizon must be positive");
  if (stream.empty()) throw Error(ErrorCode::empty_input, "update stream is empty");
  if (stream.shape() != pretrained.input_shape) {
    throw Error(ErrorCode::input_shape, "stream images do not fit the model");
  }

  nn::Model model = pretrained;
  auto optimizer = nn::make_optimizer(config.optimizer, config.learning_rate, model);
  BidReport report;
  Rng slot_rng(mix_seed(seed, 1));
  Rng pick_rng(mix_seed(seed, 2));

  std::vector<std::size_t> inject_order(injection_set.size());
  for (std::size_t i = 0; i < inject_order.size(); ++i) inject_order[i] = i;
  pick_rng.shuffle(inject_order);
  std::size_t inject_cursor = 0;
  std::size_t clean_cursor = 0;

  auto record = [&](int step) {
    if (!probe.active()) return;
    metrics::TimePoint point;
    point.step = step;
    probe_into(model, probe, point.success_rate, point.accuracy);
    report.series.push_back(point);
  };
  if (config.eval_every > 0) record(0);

  std::vector<const Image*> images(config.batch_size);
  std::vector<int> labels(config.batch_size);
  std::vector<std::size_t> slots(config.batch_size);
  for (int b = 1; b <= config.horizon; ++b) {
    const bool injecting = config.injection_stop < 0 || b <= config.injection_stop;
    const int injected = injecting && !injection_set.empty() ? config.per_batch : 0;

    for (int s = 0; s < config.batch_size; ++s) slots[s] = static_cast<std::size_t>(s);
    slot_rng.shuffle(slots);
    std::vector<bool> is_backdoor(config.batch_size, false);
    for (int s = 0; s < injected; ++s) is_backdoor[slots[s]] = true;

    for (int s = 0; s < config.batch_size; ++s) {
      if (is_backdoor[s]) {
        if (inject_cursor == inject_order.size()) {
          pick_rng.shuffle(inject_order);
          inject_cursor = 0;
        }
        const std::size_t idx = inject_order[inject_cursor++];
        images[s] = &injection_set.images[idx];
        labels[s] = injection_set.labels[idx];
        ++report.injected;
      } else {
        if (clean_cursor == stream.size()) {
          clean_cursor = 0;
          ++report.stream_passes;
        }
        images[s] = &stream.images[clean_cursor];
        labels[s] = stream.labels[clean_cursor];
        ++clean_cursor;
        ++report.clean_consumed;
      }
    }

    const auto inputs = nn::to_batch(std::span<const Image* const>(images));
    auto result = nn::loss_and_param_gradients(model, inputs, std::span<const int>(labels),
                                               mix_seed(seed ^ 0xb1dULL, static_cast<std::uint64_t>(b)));
    nn::optimizer_step(optimizer, model, result.grads);
    report.batches = b;
    if (config.eval_every > 0 && (b % config.eval_every == 0 || b == config.horizon)) record(b);
  }
  if (clean_cursor == stream.size()) ++report.stream_passes;
  return {std::move(model), std::move(report)};
}

ScenarioPlan plan_scenario(Scenario scenario, const data::Splits& splits, std::uint64_t seed) {
  if (splits.major.empty()) throw Error(ErrorCode::configuration, "scenario needs a non-empty major split");
  const bool minor_known = scenario == Scenario::bib_mk || scenario == Scenario::bid_pkm || scenario == Scenario::bid_mk;
  const bool minor_in_training = scenario == Scenario::bib_pkd || scenario == Scenario::bid_fk ||
                                 scenario == Scenario::bid_pkd;
  if (minor_known && splits.minor.empty()) {
    throw Error(ErrorCode::configuration,
                std::string("scenario ") + std::string(to_string(scenario)) + " needs a non-empty minor split");
  }

  ScenarioPlan plan;
  plan.scenario = scenario;
  const data::LabeledDataset victim_data =
      minor_in_training && !splits.minor.empty() ? data::concat(splits.major, splits.minor) : splits.major;

  if (!is_bid(scenario)) {
    plan.victim_train = victim_data;
    plan.mask_model_source = MaskModelSource::surrogate;
    if (scenario == Scenario::bib_pkd) {
      plan.injection_pool = victim_data;
      plan.surrogate_train = victim_data;
    } else {
      plan.injection_pool = splits.minor;
      plan.surrogate_train = splits.minor;
    }
    return plan;
  }

  auto [pre, rest] = data::stratified_split(victim_data, 0.5, mix_seed(seed, 11));
  if (pre.empty() || rest.empty()) {
    throw Error(ErrorCode::configuration, "training data too small to split into pre-training and update halves");
  }
  plan.pretrain = std::move(pre);
  plan.victim_train = std::move(rest);
  switch (scenario) {
    case Scenario::bid_fk:
      plan.injection_pool = plan.pretrain;
      plan.mask_model_source = MaskModelSource::pretrained;
      break;
    case Scenario::bid_pkd:
      plan.injection_pool = plan.pretrain;
      plan.surrogate_train = plan.pretrain;
      plan.mask_model_source = MaskModelSource::surrogate;
      break;
    case Scenario::bid_pkm:
      plan.injection_pool = splits.minor;
      plan.mask_model_source = MaskModelSource::pretrained;
      break;
    case Scenario::bid_mk:
      plan.injection_pool = splits.minor;
      plan.surrogate_train = splits.minor;
      plan.mask_model_source = MaskModelSource::surrogate;
      break;
    default:
      break;
  }
  return plan;
}

ResolvedScenario resolve_scenario(Scenario scenario, const data::Splits& splits, zoo::ArchitectureId victim_arch,
                                  const TrainConfig& config, std::uint64_t seed) {
  ResolvedScenario out{plan_scenario(scenario, splits, seed), std::nullopt, nn::Model{}};
  const ScenarioPlan& plan = out.plan;

  if (is_bid(scenario)) {
    auto [pre_model, pre_report] =
        train_bib(victim_arch, plan.pretrain, empty_like(plan.pretrain), config, mix_seed(seed, 21));
    out.pretrained = std::move(pre_model);
  }

  if (plan.mask_model_source == MaskModelSource::pretrained) {
    out.mask_model = *out.pretrained;
    return out;
  }

  const data::LabeledDataset& sg_data = plan.surrogate_train;
  if (sg_data.empty()) throw Error(ErrorCode::configuration, "surrogate training data is empty");
  auto [sg_fit, sg_val] = data::carve_validation(sg_data, config.validation_fraction, mix_seed(seed, 31));
  out.mask_model = zoo::build_surrogate(victim_arch, sg_data.shape(), sg_data.class_count, mix_seed(seed, 32));
  fit(out.mask_model, sg_fit, sg_val, config, mix_seed(seed, 33));
  return out;
}

}  // namespace bd::poison
