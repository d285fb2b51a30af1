#include <gtest/gtest.h>

#include "metairnet/meta_train.hpp"
#include "metairnet/probes.hpp"
#include "metairnet/synthetic.hpp"

namespace metairnet {
namespace {

TEST(ConfidenceInterval, HandCases) {
  auto [m0, c0] = confidence_interval({50, 50, 50});
  EXPECT_EQ(m0, 50.0);
  EXPECT_EQ(c0, 0.0);
  auto [m1, c1] = confidence_interval({0, 100});
  EXPECT_EQ(m1, 50.0);
  EXPECT_NEAR(c1, 1.96 * std::sqrt(5000.0) / std::sqrt(2.0), 1e-9);  // 98.0
  EXPECT_NEAR(c1, 98.0, 1e-9);
  auto [m2, c2] = confidence_interval({70, 80, 90});
  EXPECT_EQ(m2, 80.0);
  EXPECT_NEAR(c2, 1.96 * 10.0 / std::sqrt(3.0), 1e-9);
  EXPECT_THROW(confidence_interval({1.0}), std::invalid_argument);
  EXPECT_THROW(confidence_interval({}), std::invalid_argument);
}

TEST(ModelSelection, ArgmaxWithEarliestTie) {
  EXPECT_EQ(select_best_epoch({60, 70}), 1u);
  EXPECT_EQ(select_best_epoch({70, 60}), 0u);
  EXPECT_EQ(select_best_epoch({50, 70, 70, 65}), 1u);
  EXPECT_THROW(select_best_epoch({}), std::invalid_argument);
}

class MetaFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    dataset = make_synthetic_birds({8, 6, 16, 5, 1.0, 1.0});
    split.base = {0, 1, 2, 3};
    split.val = {4, 5};
    split.novel = {6, 7};
    Rng rng(9);
    for (const auto& item : dataset.items()) {
      std::vector<Image> v;
      for (int k = 0; k < 3; ++k) v.push_back(uniform_tensor<float>(item.image.shape(), rng, -1, 1));
      generated.insert(item.id, std::move(v));
    }
    config.n = 2;
    config.m = 1;
    config.q = 2;
    config.episodes_per_epoch = 4;
    config.epochs = 2;
    config.val_episodes = 6;
    config.seed = 3;
    config.classifier = {2, 4, 16};
    config.fusion = {3, {2, 4, 16}};
  }

  EvalOptions eval_options(AugmentationMode mode, std::size_t episodes = 8) const {
    EvalOptions opt;
    opt.n = 2;
    opt.m = 1;
    opt.q = 2;
    opt.episodes = episodes;
    opt.seed = 21;
    opt.mode = mode;
    return opt;
  }

  Dataset dataset;
  ClassSplit split;
  InMemoryLookup generated;
  TrainConfig config;
};

std::vector<float> flat_params(const MetaModel& model) {
  std::vector<float> out;
  for (const auto& p : model.params()) out.insert(out.end(), p.var.value().values().begin(), p.var.value().values().end());
  return out;
}

TEST_F(MetaFixture, TrainingIsDeterministic) {
  config.mode = AugmentationMode::metairnet;
  auto a = run_meta_training(config, dataset, split, &generated);
  auto b = run_meta_training(config, dataset, split, &generated);
  EXPECT_EQ(a.val_accuracy, b.val_accuracy);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_EQ(a.best_epoch, b.best_epoch);
  EXPECT_EQ(flat_params(a.model), flat_params(b.model));
}

TEST_F(MetaFixture, FusionReceivesGradientOnFirstStep) {
  config.mode = AugmentationMode::metairnet;
  config.epochs = 1;
  auto r = run_meta_training(config, dataset, split, &generated);
  EXPECT_GT(r.first_step_fusion_grad_norm, 0.0);
  ASSERT_TRUE(r.model.fusion);

  config.mode = AugmentationMode::none;
  auto plain = run_meta_training(config, dataset, split);
  EXPECT_FALSE(plain.model.fusion);
  EXPECT_EQ(plain.first_step_fusion_grad_norm, 0.0);
}

TEST_F(MetaFixture, ReturnedModelIsTheBestEpoch) {
  config.mode = AugmentationMode::metairnet;
  config.epochs = 3;
  auto r = run_meta_training(config, dataset, split, &generated);
  ASSERT_EQ(r.val_accuracy.size(), 3u);
  EXPECT_EQ(r.best_epoch, select_best_epoch(r.val_accuracy) + 1);
  auto again = evaluate_model(r.model, dataset, split.val, validation_options(config), &generated);
  EXPECT_EQ(again.mean_accuracy, r.val_accuracy[r.best_epoch - 1]);
}

TEST_F(MetaFixture, ZeroAugmentationMatchesPlainEvaluation) {
  config.mode = AugmentationMode::metairnet;
  config.epochs = 1;
  auto r = run_meta_training(config, dataset, split, &generated);
  auto plain = evaluate_model(r.model, dataset, split.novel, eval_options(AugmentationMode::none), &generated);
  auto sweep = run_naug_sweep(r.model, dataset, split.novel, eval_options(AugmentationMode::metairnet), {0, 1, 3},
                              &generated);
  ASSERT_EQ(sweep.size(), 3u);
  EXPECT_EQ(sweep[0].per_episode, plain.per_episode);
  for (const auto& rep : sweep) EXPECT_EQ(rep.episode_count, 8u);
}

TEST_F(MetaFixture, EveryModeEvaluates) {
  config.mode = AugmentationMode::metairnet;
  config.epochs = 1;
  auto r = run_meta_training(config, dataset, split, &generated);
  for (const auto& [mode, name] : augmentation_mode_names()) {
    auto opt = eval_options(mode, 5);
    opt.flip_enabled = mode == AugmentationMode::mixup;
    auto rep = evaluate_model(r.model, dataset, split.novel, opt, &generated);
    EXPECT_EQ(rep.episode_count, 5u) << name;
    for (double a : rep.per_episode) {
      EXPECT_GE(a, 0.0) << name;
      EXPECT_LE(a, 100.0) << name;
    }
  }
}

TEST_F(MetaFixture, FusionModesNeedAFusionNetwork) {
  config.mode = AugmentationMode::none;
  config.epochs = 1;
  auto r = run_meta_training(config, dataset, split);
  EXPECT_THROW(evaluate_model(r.model, dataset, split.novel, eval_options(AugmentationMode::metairnet), &generated),
               ConfigError);
  // Test-time baselines run on the plain model.
  EXPECT_NO_THROW(evaluate_model(r.model, dataset, split.novel, eval_options(AugmentationMode::cutmix)));
}

TEST_F(MetaFixture, RawGeneratedVariantsAreUsedUnchanged) {
  // With every support image replaced by a constant generated image, raw mode
  // adds exactly that image's embedding.
  auto model = make_model(config);
  InMemoryLookup fixed;
  for (const auto& item : dataset.items()) fixed.insert(item.id, {item.image});
  auto opt = eval_options(AugmentationMode::finetunegan_raw);
  auto raw = evaluate_model(model, dataset, split.novel, opt, &fixed);
  auto plain = evaluate_model(model, dataset, split.novel, eval_options(AugmentationMode::none));
  // Duplicating each support image leaves the prototypes, hence accuracy, unchanged.
  EXPECT_EQ(raw.per_episode, plain.per_episode);
}

TEST_F(MetaFixture, MissingCacheFailsBeforeTraining) {
  config.mode = AugmentationMode::metairnet;
  InMemoryLookup partial;
  for (std::size_t i = 1; i < dataset.size(); ++i) partial.insert(dataset[i].id, {dataset[i].image});
  try {
    run_meta_training(config, dataset, split, &partial);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(dataset[0].id), std::string::npos) << e.what();
  }
  EXPECT_THROW(run_meta_training(config, dataset, split, nullptr), DataError);
}

TEST_F(MetaFixture, ConfigValidation) {
  config.n = 1;
  EXPECT_THROW(run_meta_training(config, dataset, split), ConfigError);
  config.n = 2;
  config.learning_rate = 0;
  EXPECT_THROW(run_meta_training(config, dataset, split), ConfigError);
  config.learning_rate = 0.001;
  config.n = 5;  // only 4 base classes
  EXPECT_THROW(run_meta_training(config, dataset, split), DataError);
}

TEST(Probes, SeparableFeatures) {
  FeatureMatrix support(3, 2), query(3, 2);
  support << 0, 0, 10, 0, 0, 10;
  query << 1, 1, 9, 1, 1, 8;
  for (auto kind : {ProbeKind::nearest_neighbor, ProbeKind::one_vs_all_logistic, ProbeKind::softmax_regression}) {
    auto scores = probe_scores(kind, support, {0, 1, 2}, query, 3);
    for (Eigen::Index i = 0; i < 3; ++i) {
      Eigen::Index best = 0;
      scores.row(i).maxCoeff(&best);
      EXPECT_EQ(best, i) << to_string(kind);
    }
  }
}

TEST_F(MetaFixture, ProbesShareEpisodes) {
  auto model = make_model(config);
  auto a = evaluate_frozen_probes(*model.classifier, dataset, split.novel, 2, 1, 2, 20, 4);
  auto b = evaluate_frozen_probes(*model.classifier, dataset, split.novel, 2, 1, 2, 20, 4);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(a[k].report.per_episode, b[k].report.per_episode);
    EXPECT_EQ(a[k].report.episode_count, 20u);
  }
  // Nearest neighbour with one shot equals the prototype classifier.
  auto proto = evaluate_model(model, dataset, split.novel, [] {
    EvalOptions o;
    o.n = 2, o.m = 1, o.q = 2, o.episodes = 20, o.seed = 4;
    return o;
  }());
  EXPECT_EQ(a[0].report.per_episode, proto.per_episode);
}

}  // namespace
}  // namespace metairnet
