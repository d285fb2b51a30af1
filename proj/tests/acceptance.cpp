// Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Criteria 5 and 8-10 run the scratch toy pipeline
// (20 synthetic classes at 64x64) inside the work directory given as argv[1].
//
//   acceptance [work_dir] [--only 1,2,...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "metairnet/commands.hpp"
#include "support/gradcheck.hpp"

namespace {

using namespace metairnet;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fixed(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

bool bit_equal(const Image& a, const Image& b) {
  return a.shape() == b.shape() && std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(float)) == 0;
}

// ------------------------------------------------------------ criterion 1

Outcome mixing_identities() {
  Rng rng(101);
  std::size_t violations = 0, identity_failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t g = trial % 2 ? 5 : 3;
    const std::size_t h = g + uniform_index(rng, 40), w = g + uniform_index(rng, 40);
    Image a = uniform_tensor<float>({3, h, w}, rng, -1, 1), b = uniform_tensor<float>({3, h, w}, rng, -1, 1);
    const auto ones = expand_weight_grid(WeightGrid<double>{g, Tensor<double>({g, g}, 1.0)}, h, w);
    const auto zeros = expand_weight_grid(WeightGrid<double>{g, Tensor<double>({g, g}, 0.0)}, h, w);
    identity_failures += !bit_equal(fuse_images(a, b, ones), a);
    identity_failures += !bit_equal(fuse_images(a, b, zeros), b);

    // Block weights and free per-pixel weights, both including the endpoints.
    WeightGrid<double> grid{g, uniform_tensor<double>({g, g}, rng, 0, 1)};
    grid.weights[0] = 0.0;
    grid.weights[g * g - 1] = 1.0;
    for (const auto& map : {expand_weight_grid(grid, h, w), uniform_tensor<double>({h, w}, rng, 0, 1)}) {
      const auto out = fuse_images(a, b, map);
      for (std::size_t i = 0; i < out.size(); ++i) {
        violations += out[i] < std::min(a[i], b[i]) || out[i] > std::max(a[i], b[i]);
      }
    }
  }
  return {identity_failures == 0 && violations == 0,
          "1000 pairs, identity mismatches " + std::to_string(identity_failures) + ", convexity violations " +
              std::to_string(violations)};
}

// ------------------------------------------------------------ criterion 2

Outcome grid_partition() {
  std::size_t bad = 0, cases = 0;
  for (std::size_t g : {3, 5})
    for (std::size_t h : {6, 7, 64, 224})
      for (std::size_t w : {6, 7, 64, 224}) {
        ++cases;
        Tensor<double> cells({g, g});
        std::iota(cells.values().begin(), cells.values().end(), 0.0);
        const auto map = expand_weight_grid(WeightGrid<double>{g, cells}, h, w);
        std::vector<std::size_t> coverage(g * g, 0);
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const double v = map[y * w + x];
            const auto cell = static_cast<std::size_t>(v);
            if (v != static_cast<double>(cell) || cell >= g * g) {
              ++bad;
              continue;
            }
            const std::size_t i = cell / g, j = cell % g;
            // Pixel must sit inside the floor-boundary band of its cell.
            const bool inside = i * h / g <= y && y < (i + 1) * h / g && j * w / g <= x && x < (j + 1) * w / g;
            bad += !inside;
            ++coverage[cell];
          }
        std::size_t total = 0;
        for (std::size_t c = 0; c < g * g; ++c) {
          const std::size_t i = c / g, j = c % g;
          bad += coverage[c] != ((i + 1) * h / g - i * h / g) * ((j + 1) * w / g - j * w / g);
          total += coverage[c];
        }
        bad += total != h * w;
      }
  return {bad == 0, std::to_string(cases) + " (g, H, W) cases, " + std::to_string(bad) + " coverage errors"};
}

// ------------------------------------------------------------ criterion 3

Outcome prototype_oracle() {
  Rng rng(303);
  double worst = 0;
  for (int e = 0; e < 100; ++e) {
    const std::size_t n = 2 + uniform_index(rng, 4), m = 1 + uniform_index(rng, 3);
    const std::size_t d = 2 + uniform_index(rng, 7), nq = 1 + uniform_index(rng, 6);
    std::vector<std::size_t> labels;
    for (std::size_t c = 0; c < n; ++c) labels.insert(labels.end(), m, c);
    std::shuffle(labels.begin(), labels.end(), rng);
    const auto emb = uniform_tensor<double>({n * m, d}, rng, -2, 2);
    const auto queries = uniform_tensor<double>({nq, d}, rng, -2, 2);
    const auto protos = compute_prototypes(constant(emb), labels, n);
    const auto probs = query_class_probabilities(protos, constant(queries));

    std::vector<double> mean(n * d, 0.0);
    for (std::size_t r = 0; r < labels.size(); ++r)
      for (std::size_t k = 0; k < d; ++k) mean[labels[r] * d + k] += emb[r * d + k] / static_cast<double>(m);
    for (std::size_t i = 0; i < n * d; ++i) worst = std::max(worst, std::abs(protos.value()[i] - mean[i]));

    for (std::size_t q = 0; q < nq; ++q) {
      std::vector<double> logit(n);
      for (std::size_t c = 0; c < n; ++c) {
        double ss = 0;
        for (std::size_t k = 0; k < d; ++k) ss += std::pow(queries[q * d + k] - mean[c * d + k], 2);
        logit[c] = -std::sqrt(ss);
      }
      const double top = *std::max_element(logit.begin(), logit.end());
      double z = 0;
      for (double l : logit) z += std::exp(l - top);
      for (std::size_t c = 0; c < n; ++c) {
        worst = std::max(worst, std::abs(probs[q * n + c] - std::exp(logit[c] - top) / z));
      }
    }
  }

  double uniform_err = 0;
  for (std::size_t n : {2, 5, 20}) {
    // Identical prototypes are equidistant from any query.
    const auto row = uniform_tensor<double>({1, 4}, rng, -1, 1);
    std::vector<Tensor<double>> rows(n, row.reshaped({4}));
    const auto protos = constant(stack(rows).reshaped({n, 4}));
    const auto probs = query_class_probabilities(protos, constant(uniform_tensor<double>({3, 4}, rng, -1, 1)));
    for (double p : probs.values()) uniform_err = std::max(uniform_err, std::abs(p - 1.0 / static_cast<double>(n)));
  }
  const double ln5 = episode_cross_entropy(Tensor<double>({4, 5}, 0.2), {0, 1, 3, 4});
  const double ln5_logits = episode_cross_entropy(constant(Tensor<double>({4, 5}, 0.0)), {2, 2, 0, 1}).item();
  const double ln5_err = std::max(std::abs(ln5 - std::log(5.0)), std::abs(ln5_logits - std::log(5.0)));
  return {worst <= 1e-6 && uniform_err <= 1e-9 && ln5_err <= 1e-6 && std::abs(ln5 - 1.6094) < 1e-4,
          "100 episodes max err " + fixed(worst * 1e9, 3) + "e-9, uniform err " + fixed(uniform_err * 1e12, 3) +
              "e-12, uniform 5-way loss " + fixed(ln5, 6)};
}

// ------------------------------------------------------------ criterion 4

Outcome gradient_checks() {
  Rng rng(404);
  GeneratorArch arch;
  arch.latent_dim = 8;
  arch.embed_dim = 4;
  arch.num_classes = 3;
  arch.image_size = 8;
  arch.channels = {8, 4};
  auto gen = init_generator<double>(arch, rng);
  for (auto& layer : gen.bn.layers) {
    for (auto* t : {&layer.gamma_weight, &layer.gamma_bias, &layer.beta_weight, &layer.beta_bias}) {
      if (!t->empty()) *t = normal_tensor<double>(t->shape(), rng, 0.3);
    }
  }
  const auto frozen = weight_vars(*gen.weights, false);
  auto bn = bn_vars(gen.bn, true);
  auto z = parameter(normal_tensor<double>({1, arch.latent_dim}, rng));
  auto e = parameter(normal_tensor<double>({1, arch.embed_dim}, rng));
  const auto target = constant(uniform_tensor<double>({1, 3, 8, 8}, rng, -1, 1));
  const auto r = normal_tensor<double>({arch.latent_dim}, rng);
  RandomConvExtractor<double> extractor(5, {4, 4});
  std::function<Var<double>()> gen_objective = [&]() {
    return generator_loss(generate(arch, frozen, bn, z, e), target, z, r, extractor, 0.1, 0.1).total;
  };
  std::vector<std::pair<std::string, Var<double>>> gen_leaves{{"z", z}, {"embedding", e}};
  for (std::size_t i = 0; i < bn.layers.size(); ++i) {
    const auto& l = bn.layers[i];
    gen_leaves.push_back({"gamma_w" + std::to_string(i), l.gamma_weight});
    gen_leaves.push_back({"gamma_b" + std::to_string(i), l.gamma_bias});
    gen_leaves.push_back({"beta_w" + std::to_string(i), l.beta_weight});
    gen_leaves.push_back({"beta_b" + std::to_string(i), l.beta_bias});
  }
  const auto a = testing::check_gradients<double>(gen_objective, gen_leaves, 8, 41);

  FusionConfig fc;
  fc.grid = 3;
  fc.encoder = {2, 3, 8};
  FusionNetwork<double> fusion(fc, rng);
  ConvEncoder<double> classifier({2, 3, 8}, rng);
  auto support = constant(uniform_tensor<double>({3, 3, 8, 8}, rng, -1, 1));
  auto generated = constant(uniform_tensor<double>({3, 3, 8, 8}, rng, -1, 1));
  auto queries = constant(uniform_tensor<double>({6, 3, 8, 8}, rng, -1, 1));
  const std::vector<std::size_t> support_labels{0, 1, 2, 0, 1, 2};
  const std::vector<std::size_t> query_labels{0, 0, 1, 1, 2, 2};
  std::function<Var<double>()> episode_objective = [&]() {
    auto w = fusion.weights(support, generated, true);
    auto fused = ops::fuse_blocks(support, generated, w, 3);
    auto emb = classifier.forward(ops::concat<double>({support, fused, queries}), true);
    auto protos = compute_prototypes(ops::slice_rows(emb, 0, 6), support_labels, 3);
    return episode_cross_entropy(query_logits(protos, ops::slice_rows(emb, 6, 12)), query_labels);
  };
  ParamList<double> params;
  fusion.collect(params, "fusion");
  std::vector<std::pair<std::string, Var<double>>> fusion_leaves;
  for (const auto& p : params) fusion_leaves.emplace_back(p.name, p.var);
  const auto b = testing::check_gradients<double>(episode_objective, fusion_leaves, 4, 42);

  return {a.max_rel_error <= 1e-3 && b.max_rel_error <= 1e-3 && a.checked > 20 && b.checked > 20,
          "generator loss " + std::to_string(a.checked) + " coords max rel " + fixed(a.max_rel_error * 1e6, 3) +
              "e-6, episode loss " + std::to_string(b.checked) + " fusion coords max rel " +
              fixed(b.max_rel_error * 1e6, 3) + "e-6"};
}

// ------------------------------------------------------------ criterion 6

Outcome em_brute_force() {
  Rng rng(606);
  std::size_t mismatches = 0, cases = 0;
  for (std::size_t d = 2; d <= 6; ++d)
    for (int trial = 0; trial < 40; ++trial) {
      // Quarter-integers keep every partial sum exact, so equality is exact.
      Tensor<double> z({d}), r({d});
      for (std::size_t i = 0; i < d; ++i) {
        z[i] = static_cast<double>(static_cast<int>(uniform_index(rng, 81)) - 40) / 4.0;
        r[i] = static_cast<double>(static_cast<int>(uniform_index(rng, 81)) - 40) / 4.0;
      }
      std::vector<std::size_t> perm(d);
      std::iota(perm.begin(), perm.end(), 0);
      double best = 1e300;
      do {
        double cost = 0;
        for (std::size_t i = 0; i < d; ++i) cost += std::abs(z[i] - r[perm[i]]);
        best = std::min(best, cost / static_cast<double>(d));
      } while (std::next_permutation(perm.begin(), perm.end()));
      mismatches += em_regularizer(z, r) != best;
      mismatches += em_regularizer(z, z) != 0.0;
      ++cases;
    }
  return {mismatches == 0, std::to_string(cases) + " cases over d=2..6, " + std::to_string(mismatches) + " mismatches"};
}

// ------------------------------------------------------------ criterion 7

Outcome diversity_oracles() {
  Rng rng(707);
  std::size_t bad = 0;
  for (std::size_t n = 2; n <= 50; ++n) {
    Features f(static_cast<Eigen::Index>(n), 5);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = uniform_real(rng, -3, 3);
    std::vector<double> oracle;
    for (Eigen::Index i = 0; i < f.rows(); ++i)
      for (Eigen::Index j = i + 1; j < f.rows(); ++j) {
        double ss = 0;
        for (Eigen::Index k = 0; k < f.cols(); ++k) ss += (f(i, k) - f(j, k)) * (f(i, k) - f(j, k));
        oracle.push_back(std::sqrt(ss));
      }
    double sum = 0;
    for (double v : oracle) sum += v;
    const double mean = sum / static_cast<double>(oracle.size());
    double var = 0;
    for (double v : oracle) var += (v - mean) * (v - mean);
    const auto s = pairwise_distance_stats(f);
    const std::size_t counted = std::accumulate(s.counts.begin(), s.counts.end(), std::size_t{0});
    bad += s.mean != mean || s.stddev != std::sqrt(var / static_cast<double>(oracle.size())) ||
           s.pair_count != n * (n - 1) / 2 || counted != s.pair_count;
  }

  Features line(2, 2);
  line << 1, 0, -1, 0;
  const auto two = pca_eigenspectrum(line, 2).eigenvalues;
  const bool example = std::abs(two[0] - 2.0) < 1e-12 && two[1] == 0.0;

  double trace_err = 0;
  for (auto [n, d] : {std::pair<Eigen::Index, Eigen::Index>{30, 6}, {6, 30}}) {
    Features f(n, d);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = uniform_real(rng, -1, 1);
    const Features centered = f.rowwise() - f.colwise().mean();
    const double trace = centered.squaredNorm() / static_cast<double>(n - 1);
    const auto ev = pca_eigenspectrum(f, static_cast<std::size_t>(d)).eigenvalues;
    trace_err = std::max(trace_err, std::abs(std::accumulate(ev.begin(), ev.end(), 0.0) - trace) / trace);
  }

  Features four(4, 2);
  four << 0, 0, 0, 1, 5, 0, 5, 1;
  const auto split = class_conditional_distance_stats(four, {0, 0, 1, 1});
  const bool partition = split.intra.pair_count == 2 && split.inter.pair_count == 4;

  const bool pass = bad == 0 && example && trace_err <= 1e-6 && partition;
  std::string detail = "double-loop mismatches " + std::to_string(bad) + " for N=2..50, (1,0) spectrum [" +
                       fixed(two[0]) + ", " + fixed(two[1]) + "], trace rel err " + fixed(trace_err * 1e12, 3) +
                       "e-12, intra/inter pairs " + std::to_string(split.intra.pair_count) + "/" +
                       std::to_string(split.inter.pair_count);
  return {pass, detail};
}

// ------------------------------------------------------ toy pipeline

/// Builds the toy experiment lazily. Every stage runs in a fresh work directory.
class ToyPipeline {
 public:
  explicit ToyPipeline(fs::path root) : root_(std::move(root)) {}

  ExperimentConfig config(const std::string& mode, const std::string& run) const {
    GeneratorArch full;
    const auto quarter = quarter_width(full);
    nlohmann::json j = {
        {"dataset", {{"kind", "synthetic"}, {"image_size", 64}, {"synthetic", {{"classes", 20}, {"per_class", 20}, {"seed", 0}}}}},
        {"split",
         {{"classes",
           {{"base", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}}, {"val", {10, 11, 12, 13, 14}}, {"novel", {15, 16, 17, 18, 19}}}}}},
        {"generator",
         {{"checkpoint", (root_ / "generator.ckpt").string()},
          {"arch", {{"latent_dim", 64}, {"embed_dim", 16}, {"image_size", 64}, {"channels", quarter.channels}}},
          {"train", {{"epochs", 150}, {"batch_size", 16}}}}},
        {"adapt", {{"steps", kAdaptSteps}, {"num_variants", 5}}},
        {"episode", {{"n", 5}, {"m", 1}, {"q", 16}}},
        {"backbone", {{"depth", 4}, {"width", 32}}},
        {"fusion", {{"grid", 3}, {"depth", 4}, {"width", 16}}},
        {"train", {{"mode", mode}, {"epochs", 10}, {"episodes_per_epoch", 100}, {"val_episodes", 100}}},
        {"eval", {{"episodes", 300}}},
        {"seed", 1},
        {"output_dir", (root_ / run).string()},
        {"cache_dir", (root_ / "cache").string()}};
    return parse_config(j);
  }

  const Session& session() {
    if (!session_) {
      fs::remove_all(root_);
      fs::create_directories(root_);
      session_ = open_session(config("metairnet", "metairnet"));
    }
    return *session_;
  }

  /// Trained toy generator (base classes only).
  const PretrainedGenerator<float>& generator() {
    if (!generator_) {
      const auto& s = session();
      timed("train-toy-generator", [&] { cmd_train_toy_generator(s, s.config.generator_checkpoint); });
      generator_ = load_generator(s.config.generator_checkpoint);
    }
    return *generator_;
  }

  /// Cache filled, both models trained.
  void ensure_trained() {
    if (trained_) return;
    generator();
    const auto& s = session();
    timed("finetune-gan", [&] { cmd_finetune_gan(s); });
    none_ = std::make_unique<Session>(open_session(config("none", "none")));
    timed("meta-train metairnet", [&] { cmd_meta_train(s); });
    timed("meta-train none", [&] { cmd_meta_train(*none_); });
    trained_ = true;
  }

  const Session& none_session() {
    ensure_trained();
    return *none_;
  }

  static void timed(const std::string& what, const std::function<void()>& f) {
    const auto start = std::chrono::steady_clock::now();
    f();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cerr << "  " << what << ": " << fixed(s, 1) << " s\n";
  }

  static constexpr std::size_t kAdaptSteps = 150;

 private:
  fs::path root_;
  std::optional<Session> session_;
  std::optional<PretrainedGenerator<float>> generator_;
  std::unique_ptr<Session> none_;
  bool trained_ = false;
};

// ------------------------------------------------------------ criterion 5

Outcome freezing_contract(ToyPipeline& toy) {
  const auto& gen = toy.generator();
  const auto& s = toy.session();
  const GeneratorWeights<float> before = *gen.weights;
  const BNParamSet<float> bn_before = gen.bn;
  const auto extractor = perceptual_extractor(s.config);
  auto targets = s.dataset.indices_in(s.split.novel);
  std::size_t decreased = 0, unchanged = 0;
  double worst_ratio = 0;
  for (std::size_t t = 0; t < 10; ++t) {
    const auto& item = s.dataset[targets[t * targets.size() / 10]];
    Rng rng = make_rng(s.config.seed, streams::kAdapt, fnv1a(item.id));
    const auto state = adapt_generator_to_image(gen, item.image, s.config.adapt, rng, extractor);
    const double first = state.loss_trace.front().total, last = state.loss_trace.back().total;
    decreased += last < first;
    worst_ratio = std::max(worst_ratio, last / first);
    unchanged += *state.generator == before && *gen.weights == before && gen.bn == bn_before;
  }
  return {decreased == 10 && unchanged == 10,
          std::to_string(unchanged) + "/10 snapshots unchanged, " + std::to_string(decreased) +
              "/10 losses decreased (worst final/initial " + fixed(worst_ratio, 3) + ")"};
}

// ------------------------------------------------------------ criterion 8

Outcome toy_non_inferiority(ToyPipeline& toy) {
  toy.ensure_trained();
  const auto& meta = toy.session();
  const auto& none = toy.none_session();
  const auto m = cmd_evaluate(meta, meta.config.checkpoint_path(), {AugmentationMode::metairnet, std::nullopt});
  const auto p = cmd_evaluate(none, none.config.checkpoint_path(), {AugmentationMode::none, std::nullopt});
  // Raw generated images added to the plain prototypical model's support set.
  const auto r = cmd_evaluate(none, none.config.checkpoint_path(), {AugmentationMode::finetunegan_raw, std::nullopt});
  const bool counts = m.episode_count == 300 && p.episode_count == 300 && r.episode_count == 300;
  return {counts && m.mean_accuracy >= p.mean_accuracy - 1.0 && r.mean_accuracy <= m.mean_accuracy,
          "300 episodes: metairnet " + fixed(m.mean_accuracy, 2) + " +- " + fixed(m.ci95, 2) + ", none " +
              fixed(p.mean_accuracy, 2) + " +- " + fixed(p.ci95, 2) + ", finetunegan_raw " + fixed(r.mean_accuracy, 2) +
              " +- " + fixed(r.ci95, 2)};
}

// ------------------------------------------------------------ criterion 9

Outcome diversity_ordering(ToyPipeline& toy) {
  toy.ensure_trained();
  const auto& s = toy.session();
  AnalyzeOptions opt;
  opt.checkpoint = s.config.checkpoint_path();
  opt.embedder_checkpoint = toy.none_session().config.checkpoint_path();
  const auto report = cmd_analyze_diversity(s, opt);
  std::map<std::string, double> mean;
  for (const auto& a : report.sets) mean[a.name] = a.stats.mean;
  const double o = mean.at("original"), g = mean.at("generated"), f = mean.at("fused");
  return {g < o && f >= 0.95 * o,
          "mean pairwise distance: original " + fixed(o) + ", generated " + fixed(g) + ", fused " + fixed(f) +
              " (fused/original " + fixed(f / o, 3) + ")"};
}

// ----------------------------------------------------------- criterion 10

Outcome evaluation_protocol(ToyPipeline& toy) {
  const auto& s = toy.none_session();
  const MetaModel model = load_model(s.config.checkpoint_path(), s.config.train);
  EvalOptions opt = test_options(s.config, AugmentationMode::none);
  opt.episodes = 1000;
  opt.q = 16;  // 5 classes x 16 = 80 queries per episode
  const auto a = evaluate_model(model, s.dataset, s.split.novel, opt);
  const auto b = evaluate_model(model, s.dataset, s.split.novel, opt);
  const bool deterministic = a.episode_count == 1000 && a.per_episode == b.per_episode &&
                             a.mean_accuracy == b.mean_accuracy && a.ci95 == b.ci95;

  const double ci_a = confidence_interval({0.0, 100.0}).second;
  const double ci_b = confidence_interval({70.0, 80.0, 90.0}).second;
  const bool hand = std::abs(ci_a - 98.0) <= 1e-3 && std::abs(ci_b - 11.316) <= 1e-3;
  return {deterministic && hand, "1000 x 80-query episodes repeated " + std::string(deterministic ? "identically" : "DIFFERENTLY") +
                                     " (" + fixed(a.mean_accuracy, 2) + " +- " + fixed(a.ci95, 2) + "), CI hand cases " +
                                     fixed(ci_a) + ", " + fixed(ci_b)};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "metairnet_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else {
      work = arg;
    }
  }
  spdlog::set_level(spdlog::level::warn);
  ToyPipeline toy(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"mixing identities and convexity", mixing_identities},
      {"grid expansion floor partition", grid_partition},
      {"prototype and softmax oracle", prototype_oracle},
      {"finite-difference gradient checks", gradient_checks},
      {"adaptation freezing contract", [&] { return freezing_contract(toy); }},
      {"earth mover brute force", em_brute_force},
      {"diversity oracles", diversity_oracles},
      {"toy end-to-end non-inferiority", [&] { return toy_non_inferiority(toy); }},
      {"toy diversity ordering", [&] { return diversity_ordering(toy); }},
      {"evaluation protocol", [&] { return evaluation_protocol(toy); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome out;
    const auto start = std::chrono::steady_clock::now();
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !out.pass;
    std::cout << (out.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first
              << "): " << out.detail << " [" << fixed(secs, 1) << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
