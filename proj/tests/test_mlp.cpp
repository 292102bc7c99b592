#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fcmstab/mlp.hpp"

using namespace fcmstab;

namespace {

FeatureVector random_features(std::mt19937_64& rng) {
  // log-uniform over the clamped distance range
  std::uniform_real_distribution<double> u(std::log(1e-10), std::log(2.0 * std::sqrt(2.0)));
  FeatureVector x;
  for (auto& v : x) v = std::exp(u(rng));
  return x;
}

// Reasonable standardization stats so random features map to O(1) inputs.
void set_plain_stats(MlpModel& m) {
  for (int c = 0; c < m.input_dim; ++c) {
    m.norm_mean[static_cast<size_t>(c)] = -3.0;
    m.norm_std[static_cast<size_t>(c)] = 5.0;
  }
}

bool same_weights(const MlpModel& a, const MlpModel& b) {
  if (a.weights.size() != b.weights.size()) return false;
  for (size_t k = 0; k < a.weights.size(); ++k) {
    if (std::memcmp(a.weights[k].a.data(), b.weights[k].a.data(),
                    a.weights[k].a.size() * sizeof(double)) != 0)
      return false;
    if (a.biases[k] != b.biases[k]) return false;
  }
  return true;
}

// Synthetic regression set: every feature column carries the same x, target
// is 2 ln x. Stats are the population stats of the inputs.
TrainingArrays synth_arrays(int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.01, 2.0);
  TrainingArrays t;
  t.X.resize(n, 12);
  t.y.resize(n, 1);
  for (int r = 0; r < n; ++r) {
    const double lx = std::log(u(rng));
    for (int c = 0; c < 12; ++c) t.X.at(r, c) = lx;
    t.y.at(r, 0) = 2.0 * lx;
  }
  for (int c = 0; c < 12; ++c) {
    double m = 0.0;
    for (int r = 0; r < n; ++r) m += t.X.at(r, c);
    m /= n;
    double v = 0.0;
    for (int r = 0; r < n; ++r) v += (t.X.at(r, c) - m) * (t.X.at(r, c) - m);
    t.mean[static_cast<size_t>(c)] = m;
    t.stdev[static_cast<size_t>(c)] = std::sqrt(v / n);
  }
  return t;
}

void adopt_stats(MlpModel& m, const TrainingArrays& t) {
  m.norm_mean.assign(t.mean.begin(), t.mean.end());
  m.norm_std.assign(t.stdev.begin(), t.stdev.end());
}

}  // namespace

TEST_CASE("initialization is seed-deterministic with zero biases") {
  const MlpModel a = init_model({16, 16}, 7);
  const MlpModel b = init_model({16, 16}, 7);
  const MlpModel c = init_model({16, 16}, 8);
  CHECK(same_weights(a, b));
  CHECK_FALSE(same_weights(a, c));
  for (const auto& bias : a.biases)
    for (double v : bias) CHECK(v == 0.0);
  REQUIRE(a.weights.size() == 3);
  CHECK(a.weights[0].rows == 12);
  CHECK(a.weights[2].cols == 1);
}

TEST_CASE("initial weight spread follows the 2/fan_in rule") {
  const MlpModel m = init_model({256}, 1);
  const Mat& w0 = m.weights[0];  // 12 x 256, fan_in 12
  double ss = 0.0;
  for (int i = 0; i < w0.rows; ++i)
    for (int j = 0; j < w0.cols; ++j) ss += w0.at(i, j) * w0.at(i, j);
  const double var = ss / (w0.rows * w0.cols);
  CHECK(var == Catch::Approx(2.0 / 12.0).epsilon(0.15));
}

TEST_CASE("zero weights reduce forward to the output bias") {
  MlpModel m = init_model({8, 8}, 3);
  set_plain_stats(m);
  for (Mat& w : m.weights) w.zero();
  m.biases[0][2] = 1.3;  // dead: feeds a zero weight matrix
  m.biases.back()[0] = 0.37;
  std::mt19937_64 rng(4);
  const double want = std::exp(0.37);
  for (int i = 0; i < 50; ++i) CHECK(forward(m, random_features(rng)) == want);
  m.log_output = false;
  CHECK(forward(m, random_features(rng)) == 0.37);
}

TEST_CASE("forward rejects non-finite and non-positive features") {
  MlpModel m = init_model({8}, 5);
  set_plain_stats(m);
  std::mt19937_64 rng(6);
  FeatureVector x = random_features(rng);
  x[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_MATCHES(forward(m, x), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == Errc::bad_input;
                       }));
  x[3] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(forward(m, x), Error);
  x[3] = 0.0;  // log transform needs positive input
  CHECK_THROWS_AS(forward(m, x), Error);
  x[3] = -0.5;
  CHECK_THROWS_AS(forward(m, x), Error);
}

TEST_CASE("predictions stay positive and finite across the input domain") {
  MlpModel m = init_model({32, 32}, 11);
  set_plain_stats(m);
  std::mt19937_64 rng(12);
  const size_t n = 100000;
  std::vector<FeatureVector> xs(n);
  for (auto& x : xs) x = random_features(rng);
  const std::vector<double> out = forward_batch(m, xs.data(), n, 8192);
  for (double v : out) {
    REQUIRE(std::isfinite(v));
    REQUIRE(v > 0.0);
  }
}

TEST_CASE("batched inference equals per-sample inference bit-exactly") {
  MlpModel m = init_model({16, 16}, 5);
  set_plain_stats(m);
  std::mt19937_64 rng(9);
  const size_t n = 100;
  std::vector<FeatureVector> xs(n);
  for (auto& x : xs) x = random_features(rng);

  const std::vector<double> whole = forward_batch(m, xs.data(), n, 8192);
  const std::vector<double> tiny = forward_batch(m, xs.data(), n, 7);
  for (size_t i = 0; i < n; ++i) {
    CHECK(whole[i] == forward(m, xs[i]));
    CHECK(whole[i] == tiny[i]);
  }

  std::vector<FeatureVector> rev(xs.rbegin(), xs.rend());
  const std::vector<double> rout = forward_batch(m, rev.data(), n, 8192);
  for (size_t i = 0; i < n; ++i) CHECK(rout[n - 1 - i] == whole[i]);
}

TEST_CASE("learning rate schedule halves at each period boundary") {
  CHECK(schedule_lr(5e-4, 100, 0) == 5e-4);
  CHECK(schedule_lr(5e-4, 100, 99) == 5e-4);
  CHECK(schedule_lr(5e-4, 100, 100) == 2.5e-4);
  CHECK(schedule_lr(5e-4, 100, 199) == 2.5e-4);
  CHECK(schedule_lr(5e-4, 100, 400) == 3.125e-5);
}

TEST_CASE("training fits a closed-form log map") {
  const TrainingArrays tr = synth_arrays(512, 21);
  const TrainingArrays va = synth_arrays(128, 22);
  MlpModel m = init_model({32}, 2);
  adopt_stats(m, tr);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 64;
  cfg.lr0 = 5e-3;
  cfg.seed = 2;
  const TrainHistory h = train(m, tr, va, cfg);
  REQUIRE(h.val_loss.size() == 200);
  CHECK(h.best_val_loss < 1e-4);

  // checkpoint contract: reported best is the running minimum, and the
  // returned model reproduces it
  double lo = h.val_loss[0];
  for (double v : h.val_loss) lo = std::min(lo, v);
  CHECK(h.best_val_loss == lo);
  CHECK(h.val_loss[static_cast<size_t>(h.best_epoch)] == h.best_val_loss);

  double sse = 0.0;
  for (int r = 0; r < va.X.rows; ++r) {
    FeatureVector x;
    for (int c = 0; c < 12; ++c) x[static_cast<size_t>(c)] = std::exp(va.X.at(r, c));
    const double pred = std::log(forward(m, x));
    sse += (pred - va.y.at(r, 0)) * (pred - va.y.at(r, 0));
  }
  CHECK(sse / va.X.rows == Catch::Approx(h.best_val_loss).epsilon(1e-9));
}

TEST_CASE("training is reproducible for a fixed seed") {
  const TrainingArrays tr = synth_arrays(256, 31);
  const TrainingArrays va = synth_arrays(64, 32);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 32;
  cfg.seed = 77;

  MlpModel m1 = init_model({16}, 1);
  adopt_stats(m1, tr);
  MlpModel m2 = init_model({16}, 1);
  adopt_stats(m2, tr);
  const TrainHistory h1 = train(m1, tr, va, cfg);
  const TrainHistory h2 = train(m2, tr, va, cfg);
  CHECK(h1.train_loss == h2.train_loss);
  CHECK(h1.val_loss == h2.val_loss);
  CHECK(same_weights(m1, m2));

  cfg.seed = 78;
  MlpModel m3 = init_model({16}, 1);
  adopt_stats(m3, tr);
  const TrainHistory h3 = train(m3, tr, va, cfg);
  CHECK(h3.train_loss != h1.train_loss);
}

TEST_CASE("threaded training matches single-threaded bit for bit") {
  const TrainingArrays tr = synth_arrays(256, 41);
  const TrainingArrays va = synth_arrays(64, 42);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 64;
  cfg.seed = 5;

  MlpModel m1 = init_model({24}, 3);
  adopt_stats(m1, tr);
  const TrainHistory h1 = train(m1, tr, va, cfg);

  cfg.threads = 4;
  MlpModel m4 = init_model({24}, 3);
  adopt_stats(m4, tr);
  const TrainHistory h4 = train(m4, tr, va, cfg);
  CHECK(h1.train_loss == h4.train_loss);
  CHECK(same_weights(m1, m4));
}

TEST_CASE("divergence is reported with the epoch index") {
  const TrainingArrays tr = synth_arrays(128, 51);
  const TrainingArrays va = synth_arrays(32, 52);
  MlpModel m = init_model({16}, 4);
  adopt_stats(m, tr);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 32;
  // Adam's normalized step shrugs off merely large rates; this one pushes the
  // weights far enough that the next forward pass overflows to infinity
  cfg.lr0 = 1e100;
  cfg.seed = 1;
  CHECK_THROWS_MATCHES(train(m, tr, va, cfg), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == Errc::diverged &&
                                std::string(e.what()).find("epoch") != std::string::npos;
                       }));
}

TEST_CASE("analytic gradients agree with finite differences") {
  for (unsigned seed : {60u, 61u, 62u, 63u, 64u}) {
    MlpModel m = init_model({8, 8}, seed);
    std::mt19937_64 rng(seed + 1000);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    Mat x(4, 12), y(4, 1);
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 12; ++c) x.at(r, c) = u(rng);
      y.at(r, 0) = u(rng);
    }
    // keep every pre-activation clear of the rectifier kink so the 1e-6
    // parameter perturbation cannot flip a unit's state
    std::vector<Mat> acts;
    for (size_t k = 0; k + 1 < m.weights.size(); ++k) {
      const Mat& in = k == 0 ? x : acts[k - 1];
      Mat z(in.rows, m.weights[k].cols);
      gemm(in, m.weights[k], z, 1);
      for (int j = 0; j < z.cols; ++j) {
        for (int r = 0; r < z.rows; ++r) {
          const double pre = z.at(r, j) + m.biases[k][static_cast<size_t>(j)];
          if (std::abs(pre) < 1e-3) m.biases[k][static_cast<size_t>(j)] += 2e-3;
        }
      }
      detail::add_bias_activate(z, m.biases[k], true);
      acts.push_back(std::move(z));
    }
    CHECK(gradient_check(m, x, y) <= 1e-5);
  }
}

TEST_CASE("gradient check at an exact linear interpolation is clean") {
  MlpModel m = init_model({}, 70);  // single linear layer
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat x(4, 12), y(4, 1);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 12; ++c) x.at(r, c) = u(rng);
  // targets produced by the model itself: residuals are exactly zero
  std::vector<Mat> acts;
  const Mat& out = detail::forward_packed(m, x, acts, 1);
  for (int r = 0; r < 4; ++r) y.at(r, 0) = out.at(r, 0);
  CHECK(gradient_check(m, x, y) <= 1e-7);
}

TEST_CASE("evaluation of a self-consistent model reports zero error") {
  MlpModel m = init_model({8}, 80);
  set_plain_stats(m);
  std::mt19937_64 rng(81);
  Dataset d;
  for (int i = 0; i < 64; ++i) {
    StabilizationSample s;
    s.features = random_features(rng);
    s.lambda = forward(m, s.features);
    d.samples.push_back(s);
  }
  const EvalReport rep = evaluate(m, d);
  CHECK(rep.mse == 0.0);
  CHECK(rep.outlier_fraction == 0.0);
  CHECK(rep.p50 == 0.0);
  CHECK(rep.p95 == 0.0);
  CHECK(rep.p100 == 0.0);
  for (double e : rep.rel_error) CHECK(e == 0.0);
}

TEST_CASE("evaluation percentiles are monotone") {
  MlpModel m = init_model({8}, 90);
  set_plain_stats(m);
  std::mt19937_64 rng(91);
  std::uniform_real_distribution<double> lam(0.5, 50.0);
  Dataset d;
  for (int i = 0; i < 500; ++i) {
    StabilizationSample s;
    s.features = random_features(rng);
    s.lambda = lam(rng);
    d.samples.push_back(s);
  }
  const EvalReport rep = evaluate(m, d);
  CHECK(rep.rel_error.size() == 500);
  CHECK(rep.p50 <= rep.p95);
  CHECK(rep.p95 <= rep.p100);
  CHECK(rep.outlier_fraction >= 0.0);
  CHECK(rep.outlier_fraction <= 1.0);
}

TEST_CASE("saved models load back with bit-identical predictions") {
  MlpModel m = init_model({16, 8}, 9);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-2.0, 0.5);
  for (int c = 0; c < 12; ++c) {
    m.norm_mean[static_cast<size_t>(c)] = u(rng);
    m.norm_std[static_cast<size_t>(c)] = 0.5 + std::abs(u(rng));
  }
  const std::string path = "model_roundtrip.json";
  save(m, path);
  const MlpModel back = load(path);
  CHECK(back.hidden == std::vector<int>{16, 8});
  CHECK(back.layout == std::string(feature_layout_id()));
  CHECK(back.input_dim == 12);
  CHECK(back.cell_side == 2.0);
  CHECK(back.norm_mean == m.norm_mean);
  CHECK(back.norm_std == m.norm_std);
  for (int i = 0; i < 100; ++i) {
    const FeatureVector x = random_features(rng);
    CHECK(forward(back, x) == forward(m, x));
  }
  std::remove(path.c_str());
}

TEST_CASE("model loading rejects damaged and foreign files") {
  const MlpModel m = init_model({8}, 12);
  const std::string path = "model_damage.json";
  save(m, path);

  const auto slurp = [&]() {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  const auto spit = [&](const std::string& s) {
    std::ofstream f(path, std::ios::trunc);
    f << s;
  };
  const auto expect_code = [&](Errc want) {
    try {
      load(path);
      FAIL("load should have thrown");
    } catch (const Error& e) {
      CHECK(e.code() == want);
    }
  };
  const std::string original = slurp();

  spit(original.substr(0, original.size() / 2));  // truncated
  expect_code(Errc::corrupt_file);

  nlohmann::json j = nlohmann::json::parse(original);
  j["layout"] = "other-layout";
  spit(j.dump());
  expect_code(Errc::version_mismatch);

  j = nlohmann::json::parse(original);
  j["version"] = kModelFormatVersion + 1;
  spit(j.dump());
  expect_code(Errc::version_mismatch);

  j = nlohmann::json::parse(original);
  j["input_dim"] = 11;
  spit(j.dump());
  expect_code(Errc::version_mismatch);

  j = nlohmann::json::parse(original);
  j["layers"][0]["w"].erase(0);  // length no longer rows*cols
  spit(j.dump());
  expect_code(Errc::corrupt_file);

  j = nlohmann::json::parse(original);
  j["layers"][1]["rows"] = 5;  // breaks the shape chain
  spit(j.dump());
  expect_code(Errc::corrupt_file);

  j = nlohmann::json::parse(original);
  j["norm_std"][3] = 0.0;
  spit(j.dump());
  expect_code(Errc::corrupt_file);

  j = nlohmann::json::parse(original);
  j.erase("activation");
  spit(j.dump());
  expect_code(Errc::corrupt_file);

  std::remove(path.c_str());
}
