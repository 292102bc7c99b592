#pragma once

// Fully connected regression network for the stabilization surrogate:
// rectifier hidden layers, a linear scalar output, Adam on the mean squared
// error of ln lambda. Inputs enter as ln(features) standardized by the
// training statistics stored on the model; the target stays un-standardized
// in log space.
//
// All batch kernels go through the padded GEMM, whose results do not depend
// on the thread count, so training is bit-reproducible for a fixed seed even
// in threaded mode.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fcmstab/dataset.hpp"

namespace fcmstab {

struct MlpModel {
  std::string layout = feature_layout_id();
  int input_dim = kFeatureCount;
  double cell_side = 2.0;
  bool log_input = true;
  bool log_output = true;
  std::vector<double> norm_mean;  // size input_dim
  std::vector<double> norm_std;   // size input_dim, all > 0
  std::vector<int> hidden;        // widths of the rectifier layers
  std::vector<Mat> weights;       // weights[k]: (fan_in x fan_out)
  std::vector<std::vector<double>> biases;

  int layer_count() const { return static_cast<int>(weights.size()); }
};

// He-style initialization: weights ~ N(0, 2/fan_in), biases zero. The draw
// order (layer by layer, row-major) is part of the determinism contract.
inline MlpModel init_model(const std::vector<int>& hidden, std::uint64_t seed) {
  MlpModel m;
  for (int h : hidden) require(h >= 1, Errc::bad_input, "layer width must be positive");
  m.hidden = hidden;
  m.norm_mean.assign(static_cast<size_t>(m.input_dim), 0.0);
  m.norm_std.assign(static_cast<size_t>(m.input_dim), 1.0);
  std::mt19937_64 rng(seed);
  std::vector<int> dims{m.input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  for (size_t k = 0; k + 1 < dims.size(); ++k) {
    const int fin = dims[k], fout = dims[k + 1];
    std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / fin));
    Mat w(fin, fout);
    for (int i = 0; i < fin; ++i)
      for (int j = 0; j < fout; ++j) w.at(i, j) = gauss(rng);
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(static_cast<size_t>(fout), 0.0);
  }
  return m;
}

namespace detail {

inline void add_bias_activate(Mat& z, const std::vector<double>& b, bool rectify) {
  for (int r = 0; r < z.rows; ++r) {
    double* row = z.row(r);
    for (int c = 0; c < z.cols; ++c) {
      double v = row[c] + b[static_cast<size_t>(c)];
      if (rectify && v < 0.0) v = 0.0;
      row[c] = v;
    }
  }
}

// Net output for standardized inputs already packed into a0. The activations
// vector is a reusable workspace; acts[k] holds layer k's output.
inline const Mat& forward_packed(const MlpModel& m, const Mat& a0, std::vector<Mat>& acts,
                                 int threads) {
  const int layers = m.layer_count();
  acts.resize(static_cast<size_t>(layers));
  const Mat* in = &a0;
  for (int k = 0; k < layers; ++k) {
    Mat& out = acts[static_cast<size_t>(k)];
    if (out.rows != a0.rows || out.cols != m.weights[static_cast<size_t>(k)].cols)
      out.resize(a0.rows, m.weights[static_cast<size_t>(k)].cols);
    gemm(*in, m.weights[static_cast<size_t>(k)], out, threads);
    add_bias_activate(out, m.biases[static_cast<size_t>(k)], k + 1 < layers);
    in = &out;
  }
  return *in;
}

// ln + standardize one raw feature vector into row r of dst.
inline void pack_features(const MlpModel& m, const FeatureVector& x, Mat& dst, int r) {
  for (int c = 0; c < m.input_dim; ++c) {
    double v = x[static_cast<size_t>(c)];
    require(std::isfinite(v), Errc::bad_input, "non-finite feature");
    if (m.log_input) {
      require(v > 0.0, Errc::bad_input, "feature must be positive for the log transform");
      v = std::log(v);
    }
    dst.at(r, c) = (v - m.norm_mean[static_cast<size_t>(c)]) / m.norm_std[static_cast<size_t>(c)];
  }
}

}  // namespace detail

inline double forward(const MlpModel& m, const FeatureVector& x) {
  Mat a0(1, m.input_dim);
  detail::pack_features(m, x, a0, 0);
  std::vector<Mat> acts;
  const double net = detail::forward_packed(m, a0, acts, 1).at(0, 0);
  return m.log_output ? std::exp(net) : net;
}

// Batched inference; identical results to calling forward per element.
inline std::vector<double> forward_batch(const MlpModel& m, const FeatureVector* xs, size_t n,
                                         int batch_size = 8192, int threads = 1) {
  require(batch_size >= 1, Errc::bad_input, "batch size must be positive");
  std::vector<double> out(n);
  std::vector<Mat> acts;
  Mat a0;
  for (size_t lo = 0; lo < n; lo += static_cast<size_t>(batch_size)) {
    const int b = static_cast<int>(std::min<size_t>(static_cast<size_t>(batch_size), n - lo));
    if (a0.rows != b || a0.cols != m.input_dim) a0.resize(b, m.input_dim);
    for (int r = 0; r < b; ++r) detail::pack_features(m, xs[lo + static_cast<size_t>(r)], a0, r);
    const Mat& net = detail::forward_packed(m, a0, acts, threads);
    for (int r = 0; r < b; ++r)
      out[lo + static_cast<size_t>(r)] = m.log_output ? std::exp(net.at(r, 0)) : net.at(r, 0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  int epochs = 2000;
  int batch_size = 0;         // 0: min(n_train/4, 65536), at least 1
  double lr0 = 5e-4;
  int lr_halving_period = 0;  // 0: epochs/4
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct TrainHistory {
  std::vector<double> train_loss;  // per epoch, MSE over the epoch's batches
  std::vector<double> val_loss;    // per epoch
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

// Step schedule: halve every `period` epochs.
inline double schedule_lr(double lr0, int period, int epoch) {
  return lr0 * std::pow(0.5, epoch / period);
}

namespace detail {

// Standardize ln-space columns with the model's stats.
inline Mat standardize(const MlpModel& m, const Mat& ln_x) {
  require(ln_x.cols == m.input_dim, Errc::bad_input, "feature width mismatch");
  Mat out(ln_x.rows, ln_x.cols);
  for (int r = 0; r < ln_x.rows; ++r)
    for (int c = 0; c < ln_x.cols; ++c)
      out.at(r, c) =
          (ln_x.at(r, c) - m.norm_mean[static_cast<size_t>(c)]) / m.norm_std[static_cast<size_t>(c)];
  return out;
}

struct AdamState {
  std::vector<Mat> mw, vw;
  std::vector<std::vector<double>> mb, vb;
  long step = 0;

  explicit AdamState(const MlpModel& m) {
    for (const Mat& w : m.weights) {
      mw.emplace_back(w.rows, w.cols);
      vw.emplace_back(w.rows, w.cols);
    }
    for (const auto& b : m.biases) {
      mb.emplace_back(b.size(), 0.0);
      vb.emplace_back(b.size(), 0.0);
    }
  }
};

inline void adam_update(double& theta, double g, double& mm, double& vv, double lr, double b1,
                        double b2, double eps, double b1t, double b2t) {
  mm = b1 * mm + (1.0 - b1) * g;
  vv = b2 * vv + (1.0 - b2) * g * g;
  const double mhat = mm / (1.0 - b1t);
  const double vhat = vv / (1.0 - b2t);
  theta -= lr * mhat / (std::sqrt(vhat) + eps);
}

struct BackpropWorkspace {
  std::vector<Mat> acts;   // per-layer outputs
  std::vector<Mat> grads;  // per-layer dL/d(pre-activation), same shapes
  Mat at;                  // transposed activations
  Mat wt;                  // transposed weights
  Mat dw;                  // weight gradient
};

// One training step on the packed batch (x: B x in, y: B x 1). Returns the
// batch SSE. Gradient Mats live in ws and are reused across calls.
inline double train_step(MlpModel& m, AdamState& adam, const Mat& x, const Mat& y, double lr,
                         const TrainConfig& cfg, BackpropWorkspace& ws) {
  const int layers = m.layer_count();
  const int b = x.rows;
  const Mat& out = forward_packed(m, x, ws.acts, cfg.threads);

  double sse = 0.0;
  ws.grads.resize(static_cast<size_t>(layers));
  Mat& dout = ws.grads[static_cast<size_t>(layers - 1)];
  if (dout.rows != b || dout.cols != 1) dout.resize(b, 1);
  for (int r = 0; r < b; ++r) {
    const double diff = out.at(r, 0) - y.at(r, 0);
    sse += diff * diff;
    dout.at(r, 0) = 2.0 * diff / b;  // d(mean sq)/d(out)
  }

  adam.step += 1;
  const double b1t = std::pow(cfg.beta1, static_cast<double>(adam.step));
  const double b2t = std::pow(cfg.beta2, static_cast<double>(adam.step));

  for (int k = layers - 1; k >= 0; --k) {
    Mat& dz = ws.grads[static_cast<size_t>(k)];
    const Mat& a_prev = k == 0 ? x : ws.acts[static_cast<size_t>(k - 1)];
    Mat& w = m.weights[static_cast<size_t>(k)];

    // propagate before updating w
    if (k > 0) {
      Mat& da = ws.grads[static_cast<size_t>(k - 1)];
      if (da.rows != b || da.cols != w.rows) da.resize(b, w.rows);
      ws.wt = transpose(w);
      gemm(dz, ws.wt, da, cfg.threads);
      const Mat& a = ws.acts[static_cast<size_t>(k - 1)];
      for (int r = 0; r < b; ++r)
        for (int c = 0; c < da.cols; ++c)
          if (a.at(r, c) <= 0.0) da.at(r, c) = 0.0;  // rectifier mask
    }

    ws.at = transpose(a_prev);
    if (ws.dw.rows != w.rows || ws.dw.cols != w.cols) ws.dw.resize(w.rows, w.cols);
    gemm(ws.at, dz, ws.dw, cfg.threads);

    std::vector<double>& bias = m.biases[static_cast<size_t>(k)];
    Mat& mw = adam.mw[static_cast<size_t>(k)];
    Mat& vw = adam.vw[static_cast<size_t>(k)];
    for (int i = 0; i < w.rows; ++i)
      for (int j = 0; j < w.cols; ++j)
        adam_update(w.at(i, j), ws.dw.at(i, j), mw.at(i, j), vw.at(i, j), lr, cfg.beta1, cfg.beta2,
                    cfg.eps, b1t, b2t);
    std::vector<double>& mb = adam.mb[static_cast<size_t>(k)];
    std::vector<double>& vb = adam.vb[static_cast<size_t>(k)];
    for (int j = 0; j < w.cols; ++j) {
      double g = 0.0;
      for (int r = 0; r < b; ++r) g += dz.at(r, j);
      adam_update(bias[static_cast<size_t>(j)], g, mb[static_cast<size_t>(j)],
                  vb[static_cast<size_t>(j)], lr, cfg.beta1, cfg.beta2, cfg.eps, b1t, b2t);
    }
  }
  return sse;
}

inline double mse_packed(const MlpModel& m, const Mat& x_std, const Mat& y, int batch, int threads,
                         std::vector<Mat>& acts, Mat& xb) {
  double sse = 0.0;
  for (int lo = 0; lo < x_std.rows; lo += batch) {
    const int b = std::min(batch, x_std.rows - lo);
    if (xb.rows != b || xb.cols != x_std.cols) xb.resize(b, x_std.cols);
    for (int r = 0; r < b; ++r)
      std::memcpy(xb.row(r), x_std.row(lo + r), sizeof(double) * static_cast<size_t>(x_std.rstride));
    const Mat& out = forward_packed(m, xb, acts, threads);
    for (int r = 0; r < b; ++r) {
      const double diff = out.at(r, 0) - y.at(lo + r, 0);
      sse += diff * diff;
    }
  }
  return sse / x_std.rows;
}

}  // namespace detail

// Mini-batch Adam on the MSE of ln lambda. Expects m.norm_mean/std to hold
// the training statistics already (train.X/val.X carry raw ln features).
// Returns the per-epoch history; m is left at the best-validation checkpoint.
inline TrainHistory train(MlpModel& m, const TrainingArrays& train_set,
                          const TrainingArrays& val_set, const TrainConfig& cfg) {
  require(cfg.epochs >= 1, Errc::bad_input, "epochs must be positive");
  require(cfg.lr0 > 0.0, Errc::bad_input, "learning rate must be positive");
  const int n = train_set.X.rows;
  int batch = cfg.batch_size;
  if (batch <= 0) batch = std::max(1, std::min(n / 4, 65536));
  require(batch >= 1, Errc::bad_input, "batch size must be positive");
  int period = cfg.lr_halving_period;
  if (period <= 0) period = std::max(1, cfg.epochs / 4);

  const Mat x_std = detail::standardize(m, train_set.X);
  const Mat xv_std = detail::standardize(m, val_set.X);

  detail::AdamState adam(m);
  detail::BackpropWorkspace ws;
  std::vector<Mat> val_acts;
  Mat xb, yb, xvb;
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  std::mt19937_64 rng(cfg.seed);

  TrainHistory hist;
  std::vector<Mat> best_w = m.weights;
  auto best_b = m.biases;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = schedule_lr(cfg.lr0, period, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double sse = 0.0;
    for (int lo = 0; lo < n; lo += batch) {
      const int b = std::min(batch, n - lo);
      if (xb.rows != b || xb.cols != x_std.cols) xb.resize(b, x_std.cols);
      if (yb.rows != b || yb.cols != 1) yb.resize(b, 1);
      for (int r = 0; r < b; ++r) {
        const int src = order[static_cast<size_t>(lo + r)];
        std::memcpy(xb.row(r), x_std.row(src), sizeof(double) * static_cast<size_t>(x_std.rstride));
        yb.at(r, 0) = train_set.y.at(src, 0);
      }
      const double batch_sse = detail::train_step(m, adam, xb, yb, lr, cfg, ws);
      require(std::isfinite(batch_sse), Errc::diverged,
              "training loss became non-finite at epoch " + std::to_string(epoch));
      sse += batch_sse;
    }
    hist.train_loss.push_back(sse / n);
    const double vloss =
        detail::mse_packed(m, xv_std, val_set.y, batch, cfg.threads, val_acts, xvb);
    require(std::isfinite(vloss), Errc::diverged,
            "validation loss became non-finite at epoch " + std::to_string(epoch));
    hist.val_loss.push_back(vloss);
    if (vloss < best_val) {
      best_val = vloss;
      best_epoch = epoch;
      best_w = m.weights;
      best_b = m.biases;
    }
  }

  m.weights = std::move(best_w);
  m.biases = std::move(best_b);
  hist.best_epoch = best_epoch;
  hist.best_val_loss = best_val;
  return hist;
}

// ---------------------------------------------------------------------------
// Analytic-vs-finite-difference gradient comparison, for small models. The
// caller keeps pre-activations away from the rectifier kink (the check
// perturbs parameters by 1e-6). Returns the max relative deviation.
inline double gradient_check(MlpModel& m, const Mat& x, const Mat& y) {
  detail::BackpropWorkspace ws;
  const int layers = m.layer_count();
  std::vector<Mat> grad_w;
  std::vector<std::vector<double>> grad_b;
  {
    const Mat& out = detail::forward_packed(m, x, ws.acts, 1);
    ws.grads.resize(static_cast<size_t>(layers));
    Mat& dout = ws.grads[static_cast<size_t>(layers - 1)];
    dout.resize(x.rows, 1);
    for (int r = 0; r < x.rows; ++r) dout.at(r, 0) = 2.0 * (out.at(r, 0) - y.at(r, 0)) / x.rows;
    for (int k = layers - 1; k >= 0; --k) {
      Mat& dz = ws.grads[static_cast<size_t>(k)];
      const Mat& a_prev = k == 0 ? x : ws.acts[static_cast<size_t>(k - 1)];
      Mat& w = m.weights[static_cast<size_t>(k)];
      if (k > 0) {
        Mat& da = ws.grads[static_cast<size_t>(k - 1)];
        da.resize(x.rows, w.rows);
        ws.wt = transpose(w);
        gemm(dz, ws.wt, da, 1);
        const Mat& a = ws.acts[static_cast<size_t>(k - 1)];
        for (int r = 0; r < x.rows; ++r)
          for (int c = 0; c < da.cols; ++c)
            if (a.at(r, c) <= 0.0) da.at(r, c) = 0.0;
      }
      ws.at = transpose(a_prev);
      Mat dw(w.rows, w.cols);
      gemm(ws.at, dz, dw, 1);
      grad_w.insert(grad_w.begin(), std::move(dw));
      std::vector<double> db(static_cast<size_t>(w.cols), 0.0);
      for (int j = 0; j < w.cols; ++j)
        for (int r = 0; r < x.rows; ++r) db[static_cast<size_t>(j)] += dz.at(r, j);
      grad_b.insert(grad_b.begin(), std::move(db));
    }
  }

  std::vector<Mat> probe_acts;
  const auto loss_at = [&]() {
    const Mat& out = detail::forward_packed(m, x, probe_acts, 1);
    double sse = 0.0;
    for (int r = 0; r < x.rows; ++r) {
      const double diff = out.at(r, 0) - y.at(r, 0);
      sse += diff * diff;
    }
    return sse / x.rows;
  };

  const double h = 1e-6;
  double worst = 0.0;
  const auto probe = [&](double& theta, double analytic) {
    const double saved = theta;
    theta = saved + h;
    const double lp = loss_at();
    theta = saved - h;
    const double lm = loss_at();
    theta = saved;
    const double fd = (lp - lm) / (2.0 * h);
    // the central difference carries cancellation noise ~ eps*loss/h = 1e-10
    // per unit of loss; the floor keeps that noise from dominating the ratio
    // when both gradients are near zero
    const double dev =
        std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-4});
    worst = std::max(worst, dev);
  };
  for (int k = 0; k < layers; ++k) {
    Mat& w = m.weights[static_cast<size_t>(k)];
    for (int i = 0; i < w.rows; ++i)
      for (int j = 0; j < w.cols; ++j) probe(w.at(i, j), grad_w[static_cast<size_t>(k)].at(i, j));
    for (int j = 0; j < w.cols; ++j)
      probe(m.biases[static_cast<size_t>(k)][static_cast<size_t>(j)],
            grad_b[static_cast<size_t>(k)][static_cast<size_t>(j)]);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Evaluation against ground truth.

struct EvalReport {
  double mse = 0.0;                  // on ln lambda
  std::vector<double> rel_error;     // (pred - truth) / truth, per sample
  double outlier_fraction = 0.0;     // |rel_error| > 5%
  double p50 = 0.0, p95 = 0.0, p100 = 0.0;  // percentiles of |rel_error|
};

inline EvalReport evaluate(const MlpModel& m, const Dataset& d, int batch_size = 8192,
                           int threads = 1) {
  require(!d.samples.empty(), Errc::bad_input, "empty dataset");
  const size_t n = d.samples.size();
  std::vector<FeatureVector> xs(n);
  for (size_t i = 0; i < n; ++i) xs[i] = d.samples[i].features;
  const std::vector<double> pred = forward_batch(m, xs.data(), n, batch_size, threads);

  EvalReport rep;
  rep.rel_error.resize(n);
  size_t outliers = 0;
  double sse = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double truth = d.samples[i].lambda;
    rep.rel_error[i] = (pred[i] - truth) / truth;
    if (std::abs(rep.rel_error[i]) > 0.05) ++outliers;
    const double dl = std::log(pred[i]) - std::log(truth);
    sse += dl * dl;
  }
  rep.mse = sse / static_cast<double>(n);
  rep.outlier_fraction = static_cast<double>(outliers) / static_cast<double>(n);

  std::vector<double> mag(n);
  for (size_t i = 0; i < n; ++i) mag[i] = std::abs(rep.rel_error[i]);
  std::sort(mag.begin(), mag.end());
  const auto pct = [&](double q) {
    // nearest-rank on the sorted magnitudes
    const size_t idx = std::min(n - 1, static_cast<size_t>(std::ceil(q * static_cast<double>(n))) - 1);
    return mag[idx];
  };
  rep.p50 = pct(0.50);
  rep.p95 = pct(0.95);
  rep.p100 = mag.back();
  return rep;
}

// ---------------------------------------------------------------------------
// Persistence: JSON with round-trip-exact doubles.

inline void save(const MlpModel& m, const std::string& path) {
  nlohmann::json j;
  j["version"] = kModelFormatVersion;
  j["layout"] = m.layout;
  j["input_dim"] = m.input_dim;
  j["cell_side"] = m.cell_side;
  j["log_input"] = m.log_input;
  j["log_output"] = m.log_output;
  j["norm_mean"] = m.norm_mean;
  j["norm_std"] = m.norm_std;
  j["activation"] = "relu";
  nlohmann::json layers = nlohmann::json::array();
  for (size_t k = 0; k < m.weights.size(); ++k) {
    const Mat& w = m.weights[k];
    nlohmann::json layer;
    layer["rows"] = w.rows;
    layer["cols"] = w.cols;
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(w.rows) * static_cast<size_t>(w.cols));
    for (int i = 0; i < w.rows; ++i)
      for (int jcol = 0; jcol < w.cols; ++jcol) flat.push_back(w.at(i, jcol));
    layer["w"] = flat;
    layer["b"] = m.biases[k];
    layers.push_back(std::move(layer));
  }
  j["layers"] = std::move(layers);

  std::ofstream f(path, std::ios::binary);
  require(f.good(), Errc::bad_input, "cannot open for writing: " + path);
  f << j.dump();
  f.flush();
  require(f.good(), Errc::bad_input, "write failed: " + path);
}

inline MlpModel load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Errc::corrupt_file, "cannot open: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  const nlohmann::json j = nlohmann::json::parse(buf.str(), nullptr, false);
  require(!j.is_discarded() && j.is_object(), Errc::corrupt_file, "not a JSON model file: " + path);

  try {
    require(j.at("version").get<int>() == kModelFormatVersion, Errc::version_mismatch,
            "unsupported model format version");
    require(j.at("activation").get<std::string>() == "relu", Errc::version_mismatch,
            "unsupported activation");
    MlpModel m;
    m.layout = j.at("layout").get<std::string>();
    require(m.layout == feature_layout_id(), Errc::version_mismatch,
            "model trained on feature layout '" + m.layout + "', expected '" +
                feature_layout_id() + "'");
    m.input_dim = j.at("input_dim").get<int>();
    require(m.input_dim == kFeatureCount, Errc::version_mismatch,
            "model input width does not match the feature layout");
    m.cell_side = j.at("cell_side").get<double>();
    m.log_input = j.at("log_input").get<bool>();
    m.log_output = j.at("log_output").get<bool>();
    m.norm_mean = j.at("norm_mean").get<std::vector<double>>();
    m.norm_std = j.at("norm_std").get<std::vector<double>>();
    require(m.norm_mean.size() == static_cast<size_t>(m.input_dim) &&
                m.norm_std.size() == static_cast<size_t>(m.input_dim),
            Errc::corrupt_file, "normalization vectors have the wrong length");
    for (double s : m.norm_std)
      require(std::isfinite(s) && s > 0.0, Errc::corrupt_file, "norm_std must be positive");
    for (double v : m.norm_mean)
      require(std::isfinite(v), Errc::corrupt_file, "non-finite norm_mean");

    int prev = m.input_dim;
    for (const auto& layer : j.at("layers")) {
      const int rows = layer.at("rows").get<int>();
      const int cols = layer.at("cols").get<int>();
      require(rows >= 1 && cols >= 1, Errc::corrupt_file, "bad layer shape");
      require(rows == prev, Errc::corrupt_file, "layer shapes do not chain");
      const auto flat = layer.at("w").get<std::vector<double>>();
      const auto bias = layer.at("b").get<std::vector<double>>();
      require(flat.size() == static_cast<size_t>(rows) * static_cast<size_t>(cols),
              Errc::corrupt_file, "weight array length mismatch");
      require(bias.size() == static_cast<size_t>(cols), Errc::corrupt_file,
              "bias array length mismatch");
      Mat w(rows, cols);
      size_t p = 0;
      for (int i = 0; i < rows; ++i)
        for (int c = 0; c < cols; ++c, ++p) {
          require(std::isfinite(flat[p]), Errc::corrupt_file, "non-finite weight");
          w.at(i, c) = flat[p];
        }
      for (double b : bias) require(std::isfinite(b), Errc::corrupt_file, "non-finite bias");
      m.weights.push_back(std::move(w));
      m.biases.push_back(bias);
      prev = cols;
      if (cols > 1) m.hidden.push_back(cols);
    }
    require(!m.weights.empty() && prev == 1, Errc::corrupt_file,
            "model must end in a single linear output");
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::corrupt_file, std::string("malformed model file: ") + e.what());
  }
}

}  // namespace fcmstab
