#pragma once

// Poisoned training: injection-set construction, backdoor injection before
// training (BIB), injection during streaming updates (BID), and the six
// adversary-knowledge scenarios that decide which data and model the
// attacker works with.

#include <optional>
#include <string_view>

#include "bd/data.hpp"
#include "bd/defenses.hpp"
#include "bd/masks.hpp"
#include "bd/metrics.hpp"
#include "bd/model_zoo.hpp"
#include "bd/nn.hpp"

namespace bd::poison {

enum class Scenario { bib_pkd, bib_mk, bid_fk, bid_pkd, bid_pkm, bid_mk };

std::string_view to_string(Scenario s);
/// Accepts "BIB-PKD", "bib-pkd", ...
Scenario parse_scenario(std::string_view name);
bool is_bid(Scenario s);

struct InjectionSpec {
  int source = 0;
  int target = 1;
  masks::PerturbationMask mask;
  int bib_count = 0;     ///< total backdoor samples for BIB
  int per_batch = 0;     ///< backdoor samples per BID batch
  int batch_size = 128;
  int horizon = 250;     ///< BID evaluation point, in batches

  void validate() const;
};

/// Every item is apply(image, mask) of a class-`source` pool image, labelled
/// `target`. Draws without replacement while the pool allows, then with
/// replacement (reported through `resampled`). `preprocess`, when given, is
/// applied to each backdoor image afterwards (e.g. blurred injections).
/// An all-zero mask yields an empty set.
data::LabeledDataset build_injection_set(const data::LabeledDataset& pool, int source, int target,
                                         const masks::PerturbationMask& mask, int count, std::uint64_t seed,
                                         const defense::DefenseSpec* preprocess = nullptr,
                                         bool* resampled = nullptr);

/// |D_A| / (|D_T| + |D_A|).
double injection_ratio(std::size_t train_size, std::size_t injection_size);

/// Optional probe evaluated during training for the report curves.
struct BackdoorProbe {
  const data::LabeledDataset* test_set = nullptr;
  const masks::PerturbationMask* mask = nullptr;
  int source = 0;
  int target = 0;

  bool active() const { return test_set != nullptr && mask != nullptr; }
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 64;
  double learning_rate = 1e-3;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
  double validation_fraction = 0.2;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double validation_accuracy = 0.0;
  double success_rate = -1.0;  ///< -1 when no probe is attached
  double test_accuracy = -1.0;
};

struct TrainReport {
  int best_epoch = 0;
  double best_validation_accuracy = 0.0;
  std::size_t train_size = 0;      ///< clean samples actually fitted
  std::size_t validation_size = 0;
  std::size_t injection_size = 0;
  double injection_ratio = 0.0;
  std::vector<EpochStats> epochs;
};

/// Mini-batch training of `model` on `train` with per-epoch seeded shuffling;
/// keeps the parameters from the epoch with the best validation accuracy.
TrainReport fit(nn::Model& model, const data::LabeledDataset& train, const data::LabeledDataset& validation,
                const TrainConfig& config, std::uint64_t seed, const BackdoorProbe& probe = {});

/// BIB: holds out validation_fraction of `train_set`, trains a fresh `arch`
/// model on the rest jointly shuffled with `injection_set`, and returns the
/// best-validation checkpoint. An empty injection set gives clean training.
std::pair<nn::Model, TrainReport> train_bib(zoo::ArchitectureId arch, const data::LabeledDataset& train_set,
                                            const data::LabeledDataset& injection_set, const TrainConfig& config,
                                            std::uint64_t seed, const BackdoorProbe& probe = {});

struct BidConfig {
  int batch_size = 128;
  int per_batch = 0;
  int horizon = 250;
  /// Batches after which injection stops (clean updating continues); -1 keeps injecting.
  int injection_stop = -1;
  int eval_every = 25;
  double learning_rate = 1e-3;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
};

struct BidReport {
  int batches = 0;
  std::size_t clean_consumed = 0;
  std::size_t injected = 0;
  int stream_passes = 0;
  std::vector<metrics::TimePoint> series;
};

/// BID: updates a copy of `pretrained` on consecutive batches of `stream`.
/// Each batch takes batch_size - per_batch clean items in stream order and
/// places per_batch backdoor items from `injection_set` at seeded random
/// slots, so batches stay at batch_size and each clean item is used once per
/// pass. An empty injection set means clean updating. Stops after `horizon`
/// batches.
std::pair<nn::Model, BidReport> train_bid(const nn::Model& pretrained, const data::LabeledDataset& stream,
                                          const data::LabeledDataset& injection_set, const BidConfig& config,
                                          std::uint64_t seed, const BackdoorProbe& probe = {});

enum class MaskModelSource { surrogate, pretrained };

/// Which data each party uses under a scenario.
struct ScenarioPlan {
  Scenario scenario = Scenario::bib_pkd;
  data::LabeledDataset victim_train;  ///< D_T for BIB; the update stream for BID
  data::LabeledDataset pretrain;      ///< BID only: half of D_T used to pre-train
  data::LabeledDataset injection_pool;
  MaskModelSource mask_model_source = MaskModelSource::surrogate;
  data::LabeledDataset surrogate_train;  ///< surrogate scenarios only
};

/// Resolves the data roles of a scenario from the major/minor/test splits.
/// Throws ErrorCode::configuration when a needed split is empty.
ScenarioPlan plan_scenario(Scenario scenario, const data::Splits& splits, std::uint64_t seed);

struct ResolvedScenario {
  ScenarioPlan plan;
  std::optional<nn::Model> pretrained;  ///< BID: M_pre
  nn::Model mask_model;                 ///< M_pre or the surrogate M_sg
};

/// Plans the scenario and trains whatever models it needs: M_pre for BID and
/// a surrogate (zoo::build_surrogate) where the adversary lacks the model.
ResolvedScenario resolve_scenario(Scenario scenario, const data::Splits& splits, zoo::ArchitectureId victim_arch,
                                  const TrainConfig& config, std::uint64_t seed);

}  // namespace bd::poison
