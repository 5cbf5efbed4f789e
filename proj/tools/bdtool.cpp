// bdtool: command-line front end for the backdoor toolkit.

#include <CLI11.hpp>
#include <cmath>
#include <iostream>
#include <limits>

#include "bd/adaptive.hpp"
#include "bd/data.hpp"
#include "bd/defenses.hpp"
#include "bd/experiment.hpp"
#include "bd/masks.hpp"
#include "bd/metrics.hpp"
#include "bd/model_zoo.hpp"
#include "bd/poison.hpp"

namespace {

using namespace bd;
namespace fs = std::filesystem;

Shape3 parse_size(const std::string& text) {
  int h = 0, w = 0, c = 0;
  char x1 = 0, x2 = 0;
  std::istringstream in(text);
  if (!(in >> h >> x1 >> w >> x2 >> c) || x1 != 'x' || x2 != 'x') {
    throw Error(ErrorCode::configuration, "size must look like 32x32x3, got " + text);
  }
  return {h, w, c};
}

std::pair<int, int> parse_pos(const std::string& text) {
  const auto sep = text.find(',');
  if (sep == std::string::npos) throw Error(ErrorCode::configuration, "pos must look like i,j, got " + text);
  return {std::stoi(text.substr(0, sep)), std::stoi(text.substr(sep + 1))};
}

double parse_xi(const std::string& text) {
  if (text == "inf") return std::numeric_limits<double>::infinity();
  return std::stod(text);
}

struct DefenseArgs {
  std::string kind = "none";
  int range = 20;
  int kernel = 5;
  double sigma = 0.0;
  std::uint64_t seed = 0;

  defense::DefenseSpec spec() const {
    defense::DefenseSpec s;
    s.kind = defense::parse_defense_kind(kind);
    s.noise_range = range;
    s.kernel = kernel;
    s.sigma = sigma;
    s.seed = seed;
    s.validate();
    return s;
  }
};

void add_defense_options(CLI::App* cmd, DefenseArgs& args, bool required_kind) {
  auto* opt = cmd->add_option("--kind", args.kind, "none | noise | blur");
  if (required_kind) opt->required();
  cmd->add_option("--range", args.range, "noise amplitude a for uniform [-a, a]");
  cmd->add_option("--kernel", args.kernel, "odd Gaussian kernel size");
  cmd->add_option("--sigma", args.sigma, "Gaussian sigma (<= 0 selects the kernel-size rule)");
  cmd->add_option("--seed", args.seed, "noise seed");
}

int print_json(const nlohmann::json& j) {
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor injection toolkit"};
  app.require_subcommand(1);

  // train-clean
  std::string tc_config;
  std::vector<std::string> tc_set;
  std::string tc_out;
  auto* train_clean = app.add_subcommand("train-clean", "train a clean victim on the configured data");
  train_clean->add_option("--config", tc_config, "experiment config")->required()->check(CLI::ExistingFile);
  train_clean->add_option("--set", tc_set, "key=value config override");
  train_clean->add_option("--out", tc_out, "checkpoint path")->required();

  // mask
  auto* mask = app.add_subcommand("mask", "generate perturbation masks");
  mask->require_subcommand(1);
  std::string ms_size, ms_pos = "0,0", ms_out;
  int ms_region = 2;
  double ms_intensity = 10.0;
  auto* gen_static = mask->add_subcommand("gen-static", "patterned static mask");
  gen_static->add_option("--size", ms_size, "HxWxC, e.g. 32x32x3")->required();
  gen_static->add_option("--region", ms_region, "sub-region size r");
  gen_static->add_option("--pos", ms_pos, "position i,j inside the sub-region");
  gen_static->add_option("--intensity", ms_intensity, "intensity c_m");
  gen_static->add_option("--out", ms_out, "mask path")->required();

  std::string ma_model, ma_samples, ma_labels, ma_out, ma_xi = "10";
  int ma_class = 0, ma_target = 1, ma_iter = 50, ma_passes = 10, ma_limit = 0;
  double ma_overshoot = 0.02;
  auto* gen_adaptive = mask->add_subcommand("gen-adaptive", "universal targeted mask from a model");
  gen_adaptive->add_option("--model", ma_model, "checkpoint")->required()->check(CLI::ExistingFile);
  gen_adaptive->add_option("--class", ma_class, "source class c")->required();
  gen_adaptive->add_option("--target", ma_target, "target class t")->required();
  gen_adaptive->add_option("--xi", ma_xi, "l-infinity bound, or inf");
  gen_adaptive->add_option("--max-iter", ma_iter, "DeepFool iterations per sample");
  gen_adaptive->add_option("--passes", ma_passes, "passes over the samples");
  gen_adaptive->add_option("--overshoot", ma_overshoot, "DeepFool overshoot");
  gen_adaptive->add_option("--samples", ma_samples, "IDX images holding class-c samples")->required();
  gen_adaptive->add_option("--labels", ma_labels, "IDX labels for --samples")->required();
  gen_adaptive->add_option("--limit", ma_limit, "use at most this many class-c samples (0 = all)");
  gen_adaptive->add_option("--out", ma_out, "mask path")->required();

  // attack
  auto* attack = app.add_subcommand("attack", "poisoned training runs");
  attack->require_subcommand(1);
  std::string at_config;
  std::vector<std::string> at_set;
  auto* attack_bib = attack->add_subcommand("bib", "backdoor injection before training");
  auto* attack_bid = attack->add_subcommand("bid", "backdoor injection during updating");
  for (auto* cmd : {attack_bib, attack_bid}) {
    cmd->add_option("--config", at_config, "experiment config")->required()->check(CLI::ExistingFile);
    cmd->add_option("--set", at_set, "key=value config override");
  }

  // evaluate
  std::string ev_model, ev_mask, ev_images, ev_labels;
  int ev_class = 0, ev_target = 1;
  DefenseArgs ev_defense;
  auto* evaluate = app.add_subcommand("evaluate", "attack success and clean accuracy of a model");
  evaluate->add_option("--model", ev_model, "checkpoint")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--mask", ev_mask, "mask file")->check(CLI::ExistingFile);
  evaluate->add_option("--images", ev_images, "IDX test images")->required();
  evaluate->add_option("--labels", ev_labels, "IDX test labels")->required();
  evaluate->add_option("--class", ev_class, "source class c");
  evaluate->add_option("--target", ev_target, "target class t");
  add_defense_options(evaluate, ev_defense, false);

  // defend
  std::string df_images, df_labels, df_out_images, df_out_labels;
  DefenseArgs df_args;
  auto* defend = app.add_subcommand("defend", "apply a preprocessing defense to an IDX dataset");
  add_defense_options(defend, df_args, true);
  defend->add_option("--images", df_images, "IDX images")->required();
  defend->add_option("--labels", df_labels, "IDX labels")->required();
  defend->add_option("--out-images", df_out_images, "output IDX images")->required();
  defend->add_option("--out-labels", df_out_labels, "output IDX labels")->required();

  // sweep / run
  std::string sw_config, sw_axis;
  std::vector<std::string> sw_set;
  auto* sweep = app.add_subcommand("sweep", "one run per axis value");
  sweep->add_option("--config", sw_config, "experiment config")->required()->check(CLI::ExistingFile);
  sweep->add_option("--axis", sw_axis, "injection | intensity | xi")->required();
  sweep->add_option("--set", sw_set, "key=value config override");

  std::string run_config;
  std::vector<std::string> run_set;
  auto* run = app.add_subcommand("run", "full pipeline for every configured pair");
  run->add_option("--config", run_config, "experiment config")->required();
  run->add_option("--set", run_set, "key=value config override");

  CLI11_PARSE(app, argc, argv);

  if (*run) return experiment::run_command(run_config, run_set);
  if (*sweep) {
    experiment::SweepAxis axis;
    try {
      axis = experiment::parse_sweep_axis(sw_axis);
    } catch (const Error& e) {
      std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
      return 2;
    }
    return experiment::sweep_command(sw_config, axis, sw_set);
  }
  if (*attack) {
    const bool want_bid = attack_bid->parsed();
    try {
      auto config = experiment::Config::load(at_config);
      experiment::apply_overrides(config, at_set);
      const auto scenario = poison::parse_scenario(config.get_or("scenario", "BIB-PKD"));
      if (poison::is_bid(scenario) != want_bid) {
        throw Error(ErrorCode::configuration, "scenario " + std::string(poison::to_string(scenario)) +
                                                  " does not match attack " + (want_bid ? "bid" : "bib"));
      }
    } catch (const Error& e) {
      std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
      return 1;
    }
    return experiment::run_command(at_config, at_set);
  }

  try {
    if (*train_clean) {
      auto config = experiment::Config::load(tc_config);
      experiment::apply_overrides(config, tc_set);
      const auto rc = experiment::RunConfig::from(config);
      const auto splits = experiment::load_splits(rc);
      const auto plan = poison::plan_scenario(rc.scenario, splits, rc.seeds.train);
      const auto& train_data = poison::is_bid(rc.scenario) ? plan.pretrain : plan.victim_train;
      const data::LabeledDataset none{{}, {}, train_data.class_count};
      auto [model, report] = poison::train_bib(rc.architecture, train_data, none, rc.train, rc.seeds.train);
      nn::save_checkpoint(model, tc_out);
      return print_json({{"checkpoint", tc_out},
                         {"best_epoch", report.best_epoch},
                         {"validation_accuracy", report.best_validation_accuracy},
                         {"test_accuracy", metrics::accuracy(model, splits.test)},
                         {"parameters", model.parameter_count()}});
    }
    if (*gen_static) {
      const Shape3 s = parse_size(ms_size);
      const auto [pi, pj] = parse_pos(ms_pos);
      const auto m = masks::generate_static(s.height, s.width, s.channels, ms_region, pi, pj, ms_intensity);
      masks::save_mask(m, ms_out);
      return print_json({{"mask", ms_out}, {"max_intensity", m.max_intensity}, {"params", m.params}});
    }
    if (*gen_adaptive) {
      const auto model = nn::load_checkpoint(ma_model);
      const auto ds = data::load_idx(ma_samples, ma_labels, model.class_count);
      std::vector<Image> samples;
      for (auto i : ds.indices_of(ma_class)) {
        if (ma_limit > 0 && samples.size() >= static_cast<std::size_t>(ma_limit)) break;
        samples.push_back(ds.images[i]);
      }
      if (samples.empty()) {
        throw Error(ErrorCode::empty_source, "no samples of class " + std::to_string(ma_class));
      }
      adaptive::UniversalParams up;
      up.xi = parse_xi(ma_xi);
      up.max_passes = ma_passes;
      up.deepfool.source = ma_class;
      up.deepfool.target = ma_target;
      up.deepfool.max_iterations = ma_iter;
      up.deepfool.overshoot = ma_overshoot;
      adaptive::UniversalStats stats;
      const auto m = adaptive::build_universal_mask(model, std::span<const Image>(samples), up, &stats);
      masks::save_mask(m, ma_out);
      return print_json({{"mask", ma_out},
                         {"max_intensity", m.max_intensity},
                         {"passes", stats.passes},
                         {"deepfool_calls", stats.deepfool_calls},
                         {"degenerate_skips", stats.degenerate_skips}});
    }
    if (*evaluate) {
      const auto model = nn::load_checkpoint(ev_model);
      const auto ds = data::load_idx(ev_images, ev_labels, model.class_count);
      nlohmann::json out = {{"accuracy", metrics::accuracy(model, ds)}};
      if (!ev_mask.empty()) {
        const auto m = masks::load_mask(ev_mask);
        out["success_rate"] = metrics::attack_success_rate(model, ds, m, ev_class, ev_target);
        const auto spec = ev_defense.spec();
        if (spec.kind != defense::DefenseKind::none) {
          const auto d = defense::evaluate_defense(model, ds, m, ev_class, ev_target, spec);
          out["defense"] = {{"kind", ev_defense.kind},
                            {"defended_success", d.defended_success},
                            {"defended_accuracy", d.defended_accuracy},
                            {"success_drop", d.success_drop()},
                            {"accuracy_cost", d.accuracy_cost()}};
        }
      }
      return print_json(out);
    }
    if (*defend) {
      const auto spec = df_args.spec();
      auto ds = data::load_idx(df_images, df_labels);
      for (std::size_t i = 0; i < ds.size(); ++i) ds.images[i] = defense::defend(ds.images[i], spec, i);
      data::save_idx(ds, df_out_images, df_out_labels);
      return print_json({{"images", df_out_images}, {"labels", df_out_labels}, {"count", ds.size()}});
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
