#include <doctest.h>

#include <map>
#include <set>

#include "bd/poison.hpp"

using namespace bd;
using poison::Scenario;

namespace {

data::LabeledDataset synthetic(int classes, int per_class, std::uint64_t seed) {
  return data::generate_synthetic(classes, per_class, 32, seed);
}

template <class Fn>
void expect_code(ErrorCode code, Fn&& fn) {
  try {
    fn();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == code);
  }
}

std::map<std::vector<std::uint8_t>, int> pixel_counts(const data::LabeledDataset& ds) {
  std::map<std::vector<std::uint8_t>, int> out;
  for (const auto& img : ds.images) ++out[img.pixels];
  return out;
}

}  // namespace

TEST_CASE("scenario names") {
  for (auto s : {Scenario::bib_pkd, Scenario::bib_mk, Scenario::bid_fk, Scenario::bid_pkd, Scenario::bid_pkm,
                 Scenario::bid_mk}) {
    CHECK(poison::parse_scenario(poison::to_string(s)) == s);
  }
  CHECK(poison::to_string(Scenario::bid_pkm) == "BID-PKM");
  CHECK(poison::parse_scenario("bib_mk") == Scenario::bib_mk);
  CHECK(poison::is_bid(Scenario::bid_fk));
  CHECK_FALSE(poison::is_bid(Scenario::bib_pkd));
  CHECK_THROWS_AS(poison::parse_scenario("BIB-FK"), Error);
}

TEST_CASE("injection set items are masked source images labelled target") {
  const auto pool = synthetic(4, 10, 3);
  const auto mask = masks::generate_static(32, 32, 3, 2, 0, 0, 10.0);
  bool resampled = true;
  const auto inj = poison::build_injection_set(pool, 1, 3, mask, 6, 5, nullptr, &resampled);
  CHECK_FALSE(resampled);
  REQUIRE(inj.size() == 6);
  std::set<std::vector<std::uint8_t>> expected;
  for (auto i : pool.indices_of(1)) expected.insert(masks::apply(pool.images[i], mask).pixels);
  std::set<std::vector<std::uint8_t>> seen;
  for (std::size_t i = 0; i < inj.size(); ++i) {
    CHECK(inj.labels[i] == 3);
    CHECK(expected.count(inj.images[i].pixels) == 1);
    seen.insert(inj.images[i].pixels);
  }
  CHECK(seen.size() == 6);  // without replacement while the pool allows

  const auto again = poison::build_injection_set(pool, 1, 3, mask, 6, 5);
  CHECK(again.images == inj.images);
}

TEST_CASE("a small pool is resampled with replacement") {
  const auto pool = synthetic(3, 4, 8);
  const auto mask = masks::generate_static(32, 32, 3, 2, 1, 1, 6.0);
  bool resampled = false;
  const auto inj = poison::build_injection_set(pool, 0, 2, mask, 11, 1, nullptr, &resampled);
  CHECK(resampled);
  CHECK(inj.size() == 11);
  // Every pool item appears at least once before any repeats.
  CHECK(pixel_counts(inj).size() == 4);
}

TEST_CASE("injection set edge cases") {
  const auto pool = synthetic(3, 5, 2);
  const auto mask = masks::generate_static(32, 32, 3, 2, 0, 0, 6.0);
  CHECK(poison::build_injection_set(pool, 0, 1, mask, 0, 1).empty());
  CHECK(poison::build_injection_set(pool, 0, 1, masks::zero_mask(mask.shape()), 10, 1).empty());

  expect_code(ErrorCode::spec, [&] { poison::build_injection_set(pool, 1, 1, mask, 3, 1); });
  expect_code(ErrorCode::spec, [&] { poison::build_injection_set(pool, 0, 1, mask, -1, 1); });
  expect_code(ErrorCode::class_index, [&] { poison::build_injection_set(pool, 0, 7, mask, 3, 1); });

  auto no_source = pool;
  no_source.class_count = 4;
  expect_code(ErrorCode::empty_source, [&] { poison::build_injection_set(no_source, 3, 1, mask, 3, 1); });
}

TEST_CASE("blurred injection preprocessing") {
  const auto pool = synthetic(3, 5, 4);
  const auto mask = masks::generate_static(32, 32, 3, 2, 0, 0, 10.0);
  defense::DefenseSpec blur;
  blur.kind = defense::DefenseKind::blur;
  const auto plain = poison::build_injection_set(pool, 0, 1, mask, 5, 3);
  const auto blurred = poison::build_injection_set(pool, 0, 1, mask, 5, 3, &blur);
  REQUIRE(plain.size() == blurred.size());
  for (std::size_t i = 0; i < plain.size(); ++i) CHECK(blurred.images[i] == defense::defend(plain.images[i], blur, i));
}

TEST_CASE("injection ratio") {
  CHECK(poison::injection_ratio(990, 10) == doctest::Approx(0.01));
  CHECK(poison::injection_ratio(100, 0) == 0.0);
  CHECK(poison::injection_ratio(0, 0) == 0.0);
}

TEST_CASE("injection spec validation") {
  poison::InjectionSpec spec;
  spec.mask = masks::generate_static(8, 8, 1, 2, 0, 0, 1.0);
  spec.source = 0;
  spec.target = 1;
  spec.per_batch = 4;
  spec.batch_size = 128;
  CHECK_NOTHROW(spec.validate());
  spec.per_batch = 128;
  expect_code(ErrorCode::spec, [&] { spec.validate(); });
  spec.per_batch = 1;
  spec.target = 0;
  expect_code(ErrorCode::spec, [&] { spec.validate(); });
}

TEST_CASE("zero mask poisoned training equals clean training") {
  const auto train = synthetic(3, 20, 6);
  const auto mask = masks::zero_mask({32, 32, 3});
  const auto inj = poison::build_injection_set(train, 0, 1, mask, 10, 2);
  poison::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  const auto [clean, r1] = poison::train_bib(zoo::ArchitectureId::tiny_synthetic, train, {}, cfg, 9);
  const auto [poisoned, r2] = poison::train_bib(zoo::ArchitectureId::tiny_synthetic, train, inj, cfg, 9);
  CHECK(nn::encode_checkpoint(clean) == nn::encode_checkpoint(poisoned));
  CHECK(r2.injection_size == 0);
}

TEST_CASE("BIB training is reproducible and reports its sizes") {
  const auto train = synthetic(3, 20, 7);
  const auto mask = masks::generate_static(32, 32, 3, 2, 0, 0, 10.0);
  const auto inj = poison::build_injection_set(train, 0, 1, mask, 6, 2);
  poison::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  const auto [a, ra] = poison::train_bib(zoo::ArchitectureId::tiny_synthetic, train, inj, cfg, 4);
  const auto [b, rb] = poison::train_bib(zoo::ArchitectureId::tiny_synthetic, train, inj, cfg, 4);
  CHECK(nn::encode_checkpoint(a) == nn::encode_checkpoint(b));
  CHECK(ra.train_size + ra.validation_size == train.size());
  CHECK(ra.validation_size == 12);
  CHECK(ra.injection_size == 6);
  CHECK(ra.injection_ratio == doctest::Approx(6.0 / 66.0));
  CHECK(ra.epochs.size() == 2);
  CHECK(ra.best_epoch >= 1);
}

TEST_CASE("BID consumes every clean item once per pass and keeps batch size") {
  const auto stream = synthetic(3, 20, 10);  // 60 items
  const auto mask = masks::generate_static(32, 32, 3, 2, 0, 0, 10.0);
  const auto inj = poison::build_injection_set(stream, 0, 1, mask, 5, 2);
  const auto pre = zoo::build(zoo::ArchitectureId::tiny_synthetic, {32, 32, 3}, 3, 1);
  poison::BidConfig cfg;
  cfg.batch_size = 16;
  cfg.per_batch = 4;
  cfg.horizon = 10;
  cfg.eval_every = 5;
  const auto test = synthetic(3, 4, 99);
  const poison::BackdoorProbe probe{&test, &mask, 0, 1};
  const auto [model, report] = poison::train_bid(pre, stream, inj, cfg, 3, probe);
  CHECK(report.batches == 10);
  CHECK(report.clean_consumed == 10u * 12u);
  CHECK(report.injected == 10u * 4u);
  CHECK(report.stream_passes == 2);  // 120 clean draws over 60 items
  // Probe points at 0, 5 and 10.
  REQUIRE(report.series.size() == 3);
  CHECK(report.series[0].step == 0);
  CHECK(report.series[2].step == 10);

  cfg.injection_stop = 3;
  const auto [m2, r2] = poison::train_bid(pre, stream, inj, cfg, 3);
  CHECK(r2.injected == 3u * 4u);
  CHECK(r2.clean_consumed == 3u * 12u + 7u * 16u);
}

TEST_CASE("BID with an empty injection set is clean updating and is reproducible") {
  const auto stream = synthetic(3, 10, 11);
  const auto pre = zoo::build(zoo::ArchitectureId::tiny_synthetic, {32, 32, 3}, 3, 1);
  poison::BidConfig cfg;
  cfg.batch_size = 8;
  cfg.per_batch = 2;
  cfg.horizon = 4;
  const auto [a, ra] = poison::train_bid(pre, stream, {}, cfg, 5);
  const auto [b, rb] = poison::train_bid(pre, stream, {}, cfg, 5);
  CHECK(ra.injected == 0);
  CHECK(ra.clean_consumed == 4u * 8u);
  CHECK(nn::encode_checkpoint(a) == nn::encode_checkpoint(b));
  CHECK(nn::encode_checkpoint(a) != nn::encode_checkpoint(pre));
}

TEST_CASE("BID rejects per-batch counts that fill the batch") {
  const auto stream = synthetic(3, 4, 12);
  const auto inj = poison::build_injection_set(stream, 0, 1, masks::generate_static(32, 32, 3, 2, 0, 0, 5.0), 3, 1);
  const auto pre = zoo::build(zoo::ArchitectureId::tiny_synthetic, {32, 32, 3}, 3, 1);
  poison::BidConfig cfg;
  cfg.batch_size = 8;
  cfg.per_batch = 8;
  expect_code(ErrorCode::spec, [&] { poison::train_bid(pre, stream, inj, cfg, 1); });
  cfg.per_batch = 1;
  cfg.horizon = 0;
  expect_code(ErrorCode::spec, [&] { poison::train_bid(pre, stream, inj, cfg, 1); });
}

TEST_CASE("scenario data roles") {
  const auto all = synthetic(4, 50, 13);
  const auto splits = data::split(all, {0.8, 0.1, 0.1, 0.2, 1});
  const auto n_major = splits.major.size();
  const auto n_minor = splits.minor.size();

  const auto pkd = poison::plan_scenario(Scenario::bib_pkd, splits, 1);
  CHECK(pkd.victim_train.size() == n_major + n_minor);
  CHECK(pkd.injection_pool.size() == n_major + n_minor);
  CHECK(pkd.surrogate_train.size() == n_major + n_minor);

  const auto mk = poison::plan_scenario(Scenario::bib_mk, splits, 1);
  CHECK(mk.victim_train.images == splits.major.images);
  CHECK(mk.injection_pool.images == splits.minor.images);
  CHECK(mk.surrogate_train.images == splits.minor.images);
  CHECK(mk.mask_model_source == poison::MaskModelSource::surrogate);

  const auto fk = poison::plan_scenario(Scenario::bid_fk, splits, 1);
  CHECK(fk.pretrain.size() + fk.victim_train.size() == n_major + n_minor);
  CHECK(fk.pretrain.size() == (n_major + n_minor) / 2);
  CHECK(fk.injection_pool.images == fk.pretrain.images);
  CHECK(fk.mask_model_source == poison::MaskModelSource::pretrained);

  const auto bpkd = poison::plan_scenario(Scenario::bid_pkd, splits, 1);
  CHECK(bpkd.mask_model_source == poison::MaskModelSource::surrogate);
  CHECK(bpkd.surrogate_train.images == bpkd.pretrain.images);

  const auto pkm = poison::plan_scenario(Scenario::bid_pkm, splits, 1);
  CHECK(pkm.pretrain.size() + pkm.victim_train.size() == n_major);
  CHECK(pkm.injection_pool.images == splits.minor.images);
  CHECK(pkm.mask_model_source == poison::MaskModelSource::pretrained);

  const auto bmk = poison::plan_scenario(Scenario::bid_mk, splits, 1);
  CHECK(bmk.injection_pool.images == splits.minor.images);
  CHECK(bmk.surrogate_train.images == splits.minor.images);

  // Same seed, same halves.
  CHECK(poison::plan_scenario(Scenario::bid_fk, splits, 1).pretrain.images == fk.pretrain.images);
}

TEST_CASE("scenarios needing an empty split are configuration errors") {
  const auto all = synthetic(3, 10, 14);
  const auto no_minor = data::split(all, {0.9, 0.0, 0.1, 0.2, 1});
  expect_code(ErrorCode::configuration, [&] { poison::plan_scenario(Scenario::bib_mk, no_minor, 1); });
  expect_code(ErrorCode::configuration, [&] { poison::plan_scenario(Scenario::bid_pkm, no_minor, 1); });
  CHECK_NOTHROW(poison::plan_scenario(Scenario::bib_pkd, no_minor, 1));
  const auto no_major = data::split(all, {0.0, 0.9, 0.1, 0.2, 1});
  expect_code(ErrorCode::configuration, [&] { poison::plan_scenario(Scenario::bid_fk, no_major, 1); });
}
