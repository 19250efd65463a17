#pragma once

// Experiment orchestration: retrain-from-scratch certification over seeds,
// transfer grids, epsilon and weight-decay sweeps, empirical robustness,
// and the JSON report schema.

#include <map>

#include <json.hpp>

#include "pacd/attack.hpp"

namespace pacd {

/// Two-class synthetic images in [0,1]^dim: pixel j of class c is
/// 0.5 -/+ offset * e_j plus Gaussian noise, clipped to [0,1], where e is a
/// random +-1/sqrt(dim) pattern. Class 0 sits at -offset along e.
struct SyntheticImageConfig {
  int dim = 784;
  int n_per_class = 500;
  double offset = 0.5;
  double pixel_sd = 0.2;
  std::uint64_t pattern_seed = 9;

  void validate() const {
    require(dim >= 1 && n_per_class >= 1, "SyntheticImageConfig: sizes must be positive");
    require(offset > 0.0 && pixel_sd >= 0.0, "SyntheticImageConfig: invalid offset or noise");
  }

  Vector pattern() const {
    Rng rng(pattern_seed);
    Vector e(dim);
    for (int j = 0; j < dim; ++j) e(j) = (rng.uniform() < 0.5 ? -1.0 : 1.0) / std::sqrt(static_cast<double>(dim));
    return e;
  }
};

inline Batch synthetic_images(const SyntheticImageConfig& cfg, Rng& rng) {
  cfg.validate();
  const Vector e = cfg.pattern();
  const int n = cfg.n_per_class;
  Batch out{Matrix(2 * n, cfg.dim), Labels(static_cast<std::size_t>(2 * n), 0)};
  for (int i = 0; i < 2 * n; ++i) {
    const int c = i < n ? 0 : 1;
    out.y[static_cast<std::size_t>(i)] = c;
    const double sign = c == 0 ? -1.0 : 1.0;
    for (int j = 0; j < cfg.dim; ++j)
      out.x(i, j) = std::clamp(0.5 + sign * cfg.offset * e(j) + cfg.pixel_sd * rng.normal(), 0.0, 1.0);
  }
  return out;
}

struct SeedRow {
  std::string method;
  std::uint64_t seed = 0;
  double acr = 0.0;
  double aca = 0.0;
  double accuracy = 0.0;
  bool failed = false;
  std::string note;
  std::string config_hash;
};

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

inline MeanSd mean_sd(const std::vector<double>& xs) {
  MeanSd out;
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

struct Report {
  std::string label;
  std::vector<SeedRow> rows;
  MeanSd acr, aca, accuracy;
  int attempted = 0;
  int included = 0;
  nlohmann::json manifest = nlohmann::json::object();

  // Recomputes aggregates from the non-failed rows.
  void aggregate() {
    std::vector<double> r, a, c;
    attempted = static_cast<int>(rows.size());
    for (const auto& row : rows) {
      if (row.failed) continue;
      r.push_back(row.acr);
      a.push_back(row.aca);
      c.push_back(row.accuracy);
    }
    included = static_cast<int>(r.size());
    acr = mean_sd(r);
    aca = mean_sd(a);
    accuracy = mean_sd(c);
  }
};

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline nlohmann::json to_json(const SmoothingConfig& s) {
  return {{"sigma", s.sigma}, {"k", s.k}, {"alpha_temp", s.alpha_temp}, {"seed", s.seed}};
}

inline nlohmann::json to_json(const CertifyConfig& c) {
  return {{"n0", c.n0}, {"n", c.n}, {"alpha", c.alpha_fail}, {"batch", c.batch}};
}

inline nlohmann::json to_json(const NetworkSpec& s) {
  return {{"layer_sizes", s.layer_sizes},
          {"activation", s.activation == Activation::ReLU ? "relu" : "identity"},
          {"init_seed", s.init_seed}};
}

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"method", to_string(t.method)},
          {"lr", t.lr},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"weight_decay", t.weight_decay},
          {"smoothing", to_json(t.smoothing)},
          {"macer", {{"k", t.macer.k}, {"lambda", t.macer.lam}, {"gamma", t.macer.gamma}}},
          {"smoothadv",
           {{"adv_l2", t.smoothadv.adv_l2}, {"pgd_steps", t.smoothadv.pgd_steps}, {"k_noise", t.smoothadv.k_noise}}},
          {"box", {t.box.lo, t.box.hi}}};
}

inline nlohmann::json to_json(const BilevelConfig& b) {
  return {{"outer_iters", b.outer_iters}, {"t1", b.t1},     {"t2", b.t2},
          {"tau", b.tau},                 {"rho", b.rho},   {"beta", b.beta},
          {"reinit_every", b.reinit_every ? nlohmann::json(*b.reinit_every) : nlohmann::json(nullptr)},
          {"fd_step", b.fd_step}};
}

inline nlohmann::json to_json(const Report& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"method", row.method},
                    {"seed", row.seed},
                    {"acr", row.acr},
                    {"aca", row.aca},
                    {"accuracy", row.accuracy},
                    {"failed", row.failed},
                    {"note", row.note},
                    {"config_hash", row.config_hash}});
  return {{"label", r.label},
          {"rows", rows},
          {"aggregate",
           {{"acr_mean", r.acr.mean},
            {"acr_sd", r.acr.sd},
            {"aca_mean", r.aca.mean},
            {"aca_sd", r.aca.sd},
            {"accuracy_mean", r.accuracy.mean},
            {"accuracy_sd", r.accuracy.sd},
            {"seeds_attempted", r.attempted},
            {"seeds_included", r.included}}},
          {"manifest", r.manifest}};
}

inline Report report_from_json(const nlohmann::json& j) {
  Report r;
  r.label = j.value("label", "");
  for (const auto& row : j.at("rows"))
    r.rows.push_back({row.at("method").get<std::string>(), row.at("seed").get<std::uint64_t>(),
                      row.at("acr").get<double>(), row.at("aca").get<double>(), row.value("accuracy", 0.0),
                      row.value("failed", false), row.value("note", ""), row.value("config_hash", "")});
  if (j.contains("manifest")) r.manifest = j["manifest"];
  r.aggregate();
  return r;
}

/// Trains a fresh model per seed on clean + poison and certifies the
/// evaluation points. Seeds are base_seed, base_seed + 1, ...; a seed whose
/// training diverges is kept as a failed row and left out of the aggregate.
inline Report retrain_and_certify(const PoisonSet* poison, const Batch& clean, const Batch& eval_pts,
                                  const NetworkSpec& spec, const TrainConfig& train_cfg, const CertifyConfig& cert,
                                  int n_seeds, std::uint64_t base_seed = 0) {
  require(n_seeds >= 1, "retrain_and_certify: need at least one seed");
  require(!eval_pts.empty(), "retrain_and_certify: no evaluation points");
  const Batch train_set = poison ? concat(clean, poison->as_batch()) : clean;
  Report report;
  report.label = to_string(train_cfg.method);
  report.manifest = {{"train", to_json(train_cfg)},
                     {"certify", to_json(cert)},
                     {"network", to_json(spec)},
                     {"n_seeds", n_seeds},
                     {"base_seed", base_seed},
                     {"train_points", train_set.size()},
                     {"eval_points", eval_pts.size()},
                     {"poisoned", poison != nullptr},
                     {"poison_eps", poison ? poison->eps : 0.0}};
  const std::string hash = fnv1a_hex(report.manifest.dump());
  for (int s = 0; s < n_seeds; ++s) {
    TrainConfig cfg = train_cfg;
    cfg.seed = base_seed + static_cast<std::uint64_t>(s);
    SeedRow row{to_string(cfg.method), cfg.seed, 0.0, 0.0, 0.0, false, "", hash};
    try {
      const TrainResult tr = train(train_set, spec, cfg);
      const RadiusReport rr = acr_aca(tr.params, eval_pts, cfg.smoothing, cert, Rng(cfg.seed).split(99));
      row.acr = rr.acr;
      row.aca = rr.aca;
      row.accuracy = accuracy(tr.params, eval_pts);
    } catch (const NumericalError& e) {
      row.failed = true;
      row.note = e.what();
    }
    report.rows.push_back(row);
  }
  report.aggregate();
  return report;
}

struct TransferGrid {
  std::vector<TrainMethod> generated_with;
  std::vector<TrainMethod> evaluated_with;
  std::vector<std::vector<Report>> cells;  // [generation][evaluation]
};

/// Retrains every poison set with every evaluation method.
inline TransferGrid transfer_matrix(const std::vector<std::pair<TrainMethod, PoisonSet>>& poisons,
                                    const Batch& clean, const Batch& eval_pts, const NetworkSpec& spec,
                                    const std::vector<TrainMethod>& methods, const TrainConfig& train_cfg,
                                    const CertifyConfig& cert, int n_seeds, std::uint64_t base_seed = 0) {
  require(!poisons.empty(), "transfer_matrix: no poison sets");
  for (const auto& [m, p] : poisons)
    require(p.base_x == poisons.front().second.base_x && p.eps == poisons.front().second.eps,
            "transfer_matrix: poison sets must share base points and eps");
  TransferGrid grid;
  grid.evaluated_with = methods;
  for (const auto& [gen, poison] : poisons) {
    grid.generated_with.push_back(gen);
    std::vector<Report> row;
    for (TrainMethod m : methods) {
      TrainConfig cfg = train_cfg;
      cfg.method = m;
      Report r = retrain_and_certify(&poison, clean, eval_pts, spec, cfg, cert, n_seeds, base_seed);
      r.label = std::string(to_string(gen)) + "->" + to_string(m);
      row.push_back(std::move(r));
    }
    grid.cells.push_back(std::move(row));
  }
  return grid;
}

struct SweepPoint {
  double x = 0.0;
  Report report;
};

/// Attack and retrain for each eps; eps = 0 reuses the unperturbed base.
inline std::vector<SweepPoint> epsilon_sweep(const std::vector<double>& eps_list, const Batch& clean,
                                             const Batch& base, const Batch& val, const Batch& eval_pts,
                                             const AttackConfig& attack_cfg, const TrainConfig& train_cfg,
                                             const CertifyConfig& cert, int n_seeds, const Rng& rng) {
  require(!eps_list.empty(), "epsilon_sweep: empty list");
  require(std::is_sorted(eps_list.begin(), eps_list.end()), "epsilon_sweep: eps list must be nondecreasing");
  std::vector<SweepPoint> out;
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    const double eps = eps_list[i];
    require(eps >= 0.0, "epsilon_sweep: negative eps");
    PoisonSet poison{base.x, base.y, Matrix::Zero(base.x.rows(), base.x.cols()), eps};
    if (eps > 0.0) {
      AttackConfig cfg = attack_cfg;
      cfg.eps = eps;
      poison = pacd_attack(clean, base, val, cfg, rng.split(static_cast<std::uint64_t>(i))).poison;
    }
    Report r = retrain_and_certify(&poison, clean, eval_pts, attack_cfg.network, train_cfg, cert, n_seeds,
                                   train_cfg.seed);
    r.label = "eps=" + std::to_string(eps);
    r.manifest["eps"] = eps;
    out.push_back({eps, std::move(r)});
  }
  return out;
}

inline std::vector<SweepPoint> decay_sweep(const std::vector<double>& decays, const PoisonSet* poison,
                                           const Batch& clean, const Batch& eval_pts, const NetworkSpec& spec,
                                           const TrainConfig& train_cfg, const CertifyConfig& cert, int n_seeds) {
  std::vector<SweepPoint> out;
  for (double wd : decays) {
    TrainConfig cfg = train_cfg;
    cfg.weight_decay = wd;
    Report r = retrain_and_certify(poison, clean, eval_pts, spec, cfg, cert, n_seeds, train_cfg.seed);
    r.label = "weight_decay=" + std::to_string(wd);
    out.push_back({wd, std::move(r)});
  }
  return out;
}

struct EmpiricalRobustness {
  double mean_distortion = 0.0;
  int never_flipped = 0;
  std::vector<double> per_point;
};

/// Majority vote of the base classifier over fixed noisy copies of x.
inline int smoothed_vote(const ModelParams& params, const Vector& x, const Matrix& noise, double sigma) {
  Matrix noisy = sigma * noise;
  noisy.rowwise() += x.transpose();
  std::vector<int> counts(static_cast<std::size_t>(params.spec.num_classes()), 0);
  for (int c : NetworkClassifier(params).predict(noisy)) ++counts[static_cast<std::size_t>(c)];
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

/// Smallest l2 bound in [bound_lo, bound_hi] at which PGD flips the smoothed
/// prediction, by 12 bisection halvings per point, averaged over points.
/// Each point's m_aug noise draws are frozen across bounds. Points already
/// misclassified count as bound_lo; points never flipped as bound_hi.
inline EmpiricalRobustness empirical_robustness(const ModelParams& params, const Batch& eval_pts, double sigma,
                                                int m_aug, int pgd_iters, double bound_lo, double bound_hi,
                                                const Rng& rng, double alpha_temp = 1.0, const Box& box = {}) {
  require(bound_lo < bound_hi && bound_lo >= 0.0, "empirical_robustness: need 0 <= bound_lo < bound_hi");
  require(m_aug >= 1 && pgd_iters >= 1, "empirical_robustness: invalid sample or iteration count");
  require(!eval_pts.empty(), "empirical_robustness: no points");
  EmpiricalRobustness out;
  for (Eigen::Index i = 0; i < eval_pts.size(); ++i) {
    const Vector x = eval_pts.x.row(i).transpose();
    const int y = eval_pts.y[static_cast<std::size_t>(i)];
    Rng point_rng = rng.split(static_cast<std::uint64_t>(i));
    const Matrix noise = point_rng.normal_matrix(m_aug, x.size());
    auto flips = [&](double bound) {
      const Matrix adv = pgd_smoothed_batch(params, x.transpose(), Labels{y}, bound, pgd_iters, noise, m_aug, sigma,
                                            alpha_temp, box);
      return smoothed_vote(params, adv.row(0).transpose(), noise, sigma) != y;
    };
    double found;
    if (smoothed_vote(params, x, noise, sigma) != y || flips(bound_lo)) {
      found = bound_lo;
    } else if (!flips(bound_hi)) {
      found = bound_hi;
      ++out.never_flipped;
    } else {
      double lo = bound_lo, hi = bound_hi;
      for (int h = 0; h < 12; ++h) {
        const double mid = 0.5 * (lo + hi);
        (flips(mid) ? hi : lo) = mid;
      }
      found = hi;
    }
    out.per_point.push_back(found);
    out.mean_distortion += found;
  }
  out.mean_distortion /= static_cast<double>(eval_pts.size());
  return out;
}

// (x, mean, sd) triples for external plotting.
inline std::string plot_data(const std::vector<SweepPoint>& series) {
  std::ostringstream os;
  os << "x,acr_mean,acr_sd,aca_mean,aca_sd\n";
  for (const auto& p : series)
    os << p.x << ',' << p.report.acr.mean << ',' << p.report.acr.sd << ',' << p.report.aca.mean << ','
       << p.report.aca.sd << '\n';
  return os.str();
}

}  // namespace pacd
