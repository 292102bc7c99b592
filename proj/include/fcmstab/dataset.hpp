#pragma once

// Training corpora: enumerate chord configs over per-edge endpoint grids
// (A on the top edge, B on the other three), label each with the oracle
// eigenvalue, persist as CSV + key=value sidecar.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "fcmstab/core.hpp"
#include "fcmstab/geometry.hpp"
#include "fcmstab/linalg.hpp"

namespace fcmstab {

struct EndpointDistribution {
  int n_per_edge = 0;     // odd, >= 3
  double d_min = 1e-4;    // clearance from the vertices, >= 1e-6
  bool log_spacing = true;  // false: evenly spaced (coverage baseline)
};

inline void validate(const EndpointDistribution& d) {
  require(d.n_per_edge >= 3 && d.n_per_edge % 2 == 1, Errc::bad_input,
          "n_per_edge must be odd and >= 3");
  require(d.d_min >= 1e-6 && d.d_min < 1.0, Errc::bad_input,
          "d_min must be in [1e-6, 1)");
}

struct StabilizationSample {
  CutConfig config;        // normalized (A on the top edge)
  FeatureVector features;  // raw clamped distances
  double lambda = 0.0;     // standard cell, no safety factor, no 2/l
};

struct DatasetMeta {
  int n_per_edge = 0;
  double d_min = 0.0;
  int n_ai = 0;
  std::uint64_t seed = 0;
  std::string layout;   // feature layout id
  std::string split;    // train / val / test
  std::string spacing;  // log / linear
};

struct Dataset {
  std::vector<StabilizationSample> samples;
  DatasetMeta meta;
  std::vector<CutConfig> failures;  // configs the oracle rejected (expect none)
};

namespace detail {

// Distances from a vertex: d_min = d_0 < ... < d_{m-1} < 1, geometric.
inline std::vector<double> vertex_distances(int m, double d_min) {
  std::vector<double> d(static_cast<size_t>(m));
  d[0] = d_min;
  const double ln = std::log(d_min);
  for (int k = 1; k < m; ++k) d[static_cast<size_t>(k)] = std::exp(ln * (m - k) / m);
  return d;
}

// Signed offsets s in (-1,1) along an edge, exactly antisymmetric:
// s[n-1-k] == -s[k] bit for bit, so mirrored configs reproduce enumerated
// coordinates exactly.
inline std::vector<double> edge_offsets(const EndpointDistribution& dist) {
  validate(dist);
  const int n = dist.n_per_edge;
  const int m = (n - 1) / 2;
  std::vector<double> s(static_cast<size_t>(n));
  if (dist.log_spacing) {
    const auto d = vertex_distances(m, dist.d_min);
    for (int k = 0; k < m; ++k) s[static_cast<size_t>(k)] = d[static_cast<size_t>(k)] - 1.0;
  } else {
    const double span = 1.0 - dist.d_min;
    for (int k = 0; k < m; ++k)
      s[static_cast<size_t>(k)] = -span + (span * 2.0) * k / (n - 1);
  }
  s[static_cast<size_t>(m)] = 0.0;
  for (int k = 0; k < m; ++k) s[static_cast<size_t>(n - 1 - k)] = -s[static_cast<size_t>(k)];
  return s;
}

// Edge points in clockwise edge order; offsets ascend along each edge's
// clockwise direction for top and left, descend for right and bottom, so a
// fixed offset index always means the same arc position pattern per edge.
inline Point edge_grid_point(Edge e, double s) {
  switch (e) {
    case Edge::top: return {s, 1.0};
    case Edge::right: return {1.0, -s};
    case Edge::bottom: return {-s, -1.0};
    default: return {-1.0, s};
  }
}

}  // namespace detail

// Arc-length parameters t in (0,2) along one edge, sorted. Symmetric around
// the midpoint; near-vertex spacing geometric from d_min.
inline std::vector<double> edge_points(const EndpointDistribution& dist) {
  validate(dist);
  const int n = dist.n_per_edge;
  const int m = (n - 1) / 2;
  std::vector<double> t(static_cast<size_t>(n));
  if (dist.log_spacing) {
    const auto d = detail::vertex_distances(m, dist.d_min);
    for (int k = 0; k < m; ++k) {
      t[static_cast<size_t>(k)] = d[static_cast<size_t>(k)];
      t[static_cast<size_t>(n - 1 - k)] = 2.0 - d[static_cast<size_t>(k)];
    }
  } else {
    for (int k = 0; k < m; ++k) {
      const double v = dist.d_min + (1.0 - dist.d_min) * k / m;
      t[static_cast<size_t>(k)] = v;
      t[static_cast<size_t>(n - 1 - k)] = 2.0 - v;
    }
  }
  t[static_cast<size_t>(m)] = 1.0;
  return t;
}

struct GenerateOptions {
  int threads = 1;
  // lambda(mirror(c)) = lambda(c); compute each mirror pair once and copy.
  // The copy is exact where a fresh run would differ by summation noise.
  bool mirror_memoization = true;
  std::string split = "train";
  std::uint64_t seed = 0;
  // called after each completed top-edge row: (rows_done, rows_total)
  std::function<void(int, int)> progress;
};

// One sample per (A in top-edge grid, B in right/bottom/left grids), in
// lexicographic (A index, edge, B index) order regardless of thread count.
// Oracle signature: double(const CutConfig&, int n_ai).
template <class Oracle>
Dataset generate(const EndpointDistribution& dist, int n_ai, Oracle&& oracle,
                 const GenerateOptions& opt = {}) {
  validate(dist);
  require(n_ai >= 0 && n_ai <= 24, Errc::bad_input, "n_ai out of range");
  const int n = dist.n_per_edge;
  const auto s = detail::edge_offsets(dist);
  const Edge edges[3] = {Edge::right, Edge::bottom, Edge::left};

  const size_t total = static_cast<size_t>(n) * 3 * static_cast<size_t>(n);
  std::vector<StabilizationSample> slots(total);
  std::vector<uint8_t> failed(total, 0);

  auto slot_index = [n](int i, int e, int j) {
    return (static_cast<size_t>(i) * 3 + static_cast<size_t>(e)) * static_cast<size_t>(n) +
           static_cast<size_t>(j);
  };

  // mirror partner of (i, e, j) is (n-1-j, e, n-1-i): the reflected chord,
  // reoriented and rotated back to put A on the top edge
  auto run_rows = [&](int i_begin, int i_end) {
    for (int i = i_begin; i < i_end; ++i) {
      for (int e = 0; e < 3; ++e) {
        for (int j = 0; j < n; ++j) {
          const int pi = n - 1 - j, pj = n - 1 - i;
          const bool self = pi == i && pj == j;
          if (opt.mirror_memoization && !self &&
              (pi < i || (pi == i && pj < j)))
            continue;  // the partner slot owns this pair
          const size_t idx = slot_index(i, e, j);
          StabilizationSample& out = slots[idx];
          out.config = {detail::edge_grid_point(Edge::top, s[static_cast<size_t>(i)]),
                        detail::edge_grid_point(edges[e], s[static_cast<size_t>(j)])};
          out.features = cut_distances(out.config);
          bool ok = true;
          try {
            out.lambda = oracle(out.config, n_ai);
          } catch (const Error&) {
            ok = false;
            failed[idx] = 1;
          }
          if (opt.mirror_memoization && !self) {
            const size_t pidx = slot_index(pi, e, pj);
            StabilizationSample& twin = slots[pidx];
            twin.config = {detail::edge_grid_point(Edge::top, s[static_cast<size_t>(pi)]),
                           detail::edge_grid_point(edges[e], s[static_cast<size_t>(pj)])};
            twin.features = cut_distances(twin.config);
            twin.lambda = out.lambda;
            if (!ok) failed[pidx] = 1;
          }
        }
      }
      if (opt.progress) opt.progress(i + 1 - i_begin, i_end - i_begin);
    }
  };

  if (opt.threads <= 1) {
    run_rows(0, n);
  } else {
    std::vector<std::thread> pool;
    const int per = (n + opt.threads - 1) / opt.threads;
    for (int t = 0; t < opt.threads; ++t) {
      const int lo = t * per, hi = std::min(n, (t + 1) * per);
      if (lo >= hi) break;
      pool.emplace_back(run_rows, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  Dataset out;
  out.meta = {dist.n_per_edge, dist.d_min, n_ai, opt.seed, feature_layout_id(), opt.split,
              dist.log_spacing ? "log" : "linear"};
  out.samples.reserve(total);
  for (size_t k = 0; k < total; ++k) {
    if (failed[k])
      out.failures.push_back(slots[k].config);
    else
      out.samples.push_back(slots[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training-array view: natural logs of features and lambda, plus per-column
// statistics of THIS dataset. Compute stats on the training split and reuse
// them for val/test/inference.

struct TrainingArrays {
  Mat X;  // rows x 12, ln(features)
  Mat y;  // rows x 1, ln(lambda)
  std::array<double, 12> mean{};
  std::array<double, 12> stdev{};
};

inline TrainingArrays to_training_arrays(const Dataset& d) {
  require(!d.samples.empty(), Errc::bad_input, "empty dataset");
  const int rows = static_cast<int>(d.samples.size());
  TrainingArrays out;
  out.X.resize(rows, 12);
  out.y.resize(rows, 1);
  for (int r = 0; r < rows; ++r) {
    const auto& smp = d.samples[static_cast<size_t>(r)];
    for (int c = 0; c < 12; ++c)
      out.X.at(r, c) = std::log(smp.features[static_cast<size_t>(c)]);
    out.y.at(r, 0) = std::log(smp.lambda);
  }
  for (int c = 0; c < 12; ++c) {
    double m = 0.0;
    for (int r = 0; r < rows; ++r) m += out.X.at(r, c);
    m /= rows;
    double v = 0.0;
    for (int r = 0; r < rows; ++r) {
      const double dx = out.X.at(r, c) - m;
      v += dx * dx;
    }
    out.mean[static_cast<size_t>(c)] = m;
    out.stdev[static_cast<size_t>(c)] = std::sqrt(v / rows);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: CSV with a fixed 17-column header plus a key=value sidecar.

namespace detail {

inline constexpr const char* kCsvHeader =
    "ax,ay,bx,by,d01,d02,d03,d04,d05,d06,d07,d08,d09,d10,d11,d12,lambda";

inline void append_g17(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace detail

inline void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), Errc::bad_input, "cannot open for writing: " + path);
  std::string line;
  line.reserve(512);
  f << detail::kCsvHeader << '\n';
  for (const auto& smp : d.samples) {
    line.clear();
    detail::append_g17(line, smp.config.a.x);
    line += ',';
    detail::append_g17(line, smp.config.a.y);
    line += ',';
    detail::append_g17(line, smp.config.b.x);
    line += ',';
    detail::append_g17(line, smp.config.b.y);
    for (double v : smp.features) {
      line += ',';
      detail::append_g17(line, v);
    }
    line += ',';
    detail::append_g17(line, smp.lambda);
    line += '\n';
    f << line;
  }
  require(f.good(), Errc::bad_input, "write failed: " + path);
  f.close();

  std::ofstream mf(path + ".meta", std::ios::binary);
  require(mf.good(), Errc::bad_input, "cannot open for writing: " + path + ".meta");
  mf << "n_per_edge=" << d.meta.n_per_edge << '\n';
  std::string v;
  detail::append_g17(v, d.meta.d_min);
  mf << "d_min=" << v << '\n';
  mf << "n_ai=" << d.meta.n_ai << '\n';
  mf << "seed=" << d.meta.seed << '\n';
  mf << "layout=" << d.meta.layout << '\n';
  mf << "split=" << d.meta.split << '\n';
  mf << "spacing=" << d.meta.spacing << '\n';
  require(mf.good(), Errc::bad_input, "write failed: " + path + ".meta");
}

inline Dataset read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Errc::corrupt_file, "cannot open: " + path);
  std::string line;
  require(static_cast<bool>(std::getline(f, line)), Errc::corrupt_file,
          "empty file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == detail::kCsvHeader, Errc::version_mismatch,
          "unexpected column header in " + path);

  Dataset d;
  size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    double v[17];
    const char* p = line.c_str();
    for (int k = 0; k < 17; ++k) {
      char* end = nullptr;
      v[k] = std::strtod(p, &end);
      const bool sep_ok = k == 16 ? *end == '\0' : *end == ',';
      require(end != p && sep_ok, Errc::corrupt_file,
              path + " line " + std::to_string(lineno) + ": malformed row");
      p = end + (k == 16 ? 0 : 1);
    }
    StabilizationSample s;
    s.config = {{v[0], v[1]}, {v[2], v[3]}};
    for (int k = 0; k < 12; ++k) s.features[static_cast<size_t>(k)] = v[4 + k];
    s.lambda = v[16];
    d.samples.push_back(s);
  }

  std::ifstream mf(path + ".meta", std::ios::binary);
  if (mf.good()) {
    while (std::getline(mf, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const size_t eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      if (key == "n_per_edge") d.meta.n_per_edge = std::atoi(val.c_str());
      else if (key == "d_min") d.meta.d_min = std::atof(val.c_str());
      else if (key == "n_ai") d.meta.n_ai = std::atoi(val.c_str());
      else if (key == "seed") d.meta.seed = std::strtoull(val.c_str(), nullptr, 10);
      else if (key == "layout") d.meta.layout = val;
      else if (key == "split") d.meta.split = val;
      else if (key == "spacing") d.meta.spacing = val;
    }
  }
  return d;
}

// Drop samples whose normalized endpoint pair also appears in `reference`.
// Returns the number removed. Grids of different n still share the midpoint
// and d_min extremes by construction, so splits must be filtered.
inline size_t remove_shared_configs(Dataset& d, const Dataset& reference) {
  auto key = [](const CutConfig& c) {
    std::string k;
    detail::append_g17(k, c.a.x);
    k += ',';
    detail::append_g17(k, c.a.y);
    k += ',';
    detail::append_g17(k, c.b.x);
    k += ',';
    detail::append_g17(k, c.b.y);
    return k;
  };
  std::unordered_set<std::string> seen;
  seen.reserve(reference.samples.size() * 2);
  for (const auto& s : reference.samples) seen.insert(key(s.config));
  const size_t before = d.samples.size();
  std::erase_if(d.samples, [&](const StabilizationSample& s) {
    return seen.count(key(s.config)) != 0;
  });
  return before - d.samples.size();
}

}  // namespace fcmstab
