// Command-line front end for dataset generation, attacks, retraining with
// certification, sweeps and reports. Exit codes: 0 success, 1 contract or
// parse error, 2 numerical failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "pacd/pacd.hpp"

namespace {

using namespace pacd;
using nlohmann::json;

struct Common {
  std::vector<double> box{0.0, 1.0};
  std::vector<int> hidden{16};
  std::string activation = "relu";
  int target_class = 0;
  double sigma = 0.25;
  std::uint64_t seed = 0;
};

struct Training {
  std::string method = "gaussaug";
  double lr = 0.001;
  int epochs = 30;
  int batch_size = 50;
  double weight_decay = 0.0;
  int soft_k = 16;
  double alpha_temp = 16.0;
  int macer_k = 16;
  double macer_lambda = 16.0;
  double macer_gamma = 8.0;
  double adv_l2 = 0.25;
  int pgd_steps = 2;
};

struct Certify {
  int seeds = 3;
  long n0 = 100;
  long n = 100000;
  double alpha = 0.001;
  int eval_points = 500;
};

struct Bilevel {
  int iters = 50;
  int t1 = 10;
  int t2 = 10;
  double tau = 0.1;
  double rho = 0.001;
  double beta = 0.01;
  int reinit = 10;  // 0 disables re-initialization
  int clean_batch = 1000;
  int poison_batch = 100;
  int val_batch = 100;
  std::string lower = "gaussaug";
  std::string mode = "class";
  double fraction = 1.0;
};

Box box_of(const Common& c) {
  require(c.box.size() == 2 && c.box[0] < c.box[1], "--box needs LO HI with LO < HI");
  return {c.box[0], c.box[1]};
}

Batch load(const std::string& path, const Common& c) { return io::load_csv(path, {box_of(c), -1}); }

int num_classes(const Batch& b) { return *std::max_element(b.y.begin(), b.y.end()) + 1; }

NetworkSpec network_for(const Batch& b, const Common& c, int classes) {
  NetworkSpec spec;
  spec.layer_sizes.push_back(static_cast<int>(b.x.cols()));
  for (int h : c.hidden)
    if (h > 0) spec.layer_sizes.push_back(h);
  spec.layer_sizes.push_back(std::max(classes, 2));
  if (c.activation == "relu") {
    spec.activation = Activation::ReLU;
  } else if (c.activation == "identity") {
    spec.activation = Activation::Identity;
  } else {
    throw ContractError("unknown activation: " + c.activation);
  }
  spec.validate();
  return spec;
}

TrainConfig train_config(const Training& t, const Common& c) {
  TrainConfig cfg;
  cfg.method = parse_train_method(t.method);
  cfg.lr = t.lr;
  cfg.epochs = t.epochs;
  cfg.batch_size = t.batch_size;
  cfg.weight_decay = t.weight_decay;
  cfg.seed = c.seed;
  cfg.smoothing.sigma = c.sigma;
  cfg.smoothing.k = t.soft_k;
  cfg.smoothing.alpha_temp = t.alpha_temp;
  cfg.macer = {t.macer_k, t.macer_lambda, t.macer_gamma};
  cfg.smoothadv.adv_l2 = t.adv_l2;
  cfg.smoothadv.pgd_steps = t.pgd_steps;
  cfg.box = box_of(c);
  cfg.validate();
  return cfg;
}

CertifyConfig certify_config(const Certify& k) {
  CertifyConfig cfg;
  cfg.n0 = k.n0;
  cfg.n = k.n;
  cfg.alpha_fail = k.alpha;
  cfg.validate();
  return cfg;
}

AttackConfig attack_config(const Bilevel& b, const Training& t, const Common& c, const NetworkSpec& spec, double eps) {
  AttackConfig cfg;
  cfg.target_class = c.target_class;
  cfg.lower_method = parse_train_method(b.lower);
  cfg.network = spec;
  cfg.smoothing.sigma = c.sigma;
  cfg.smoothing.k = t.soft_k;
  cfg.smoothing.alpha_temp = t.alpha_temp;
  cfg.smoothing.seed = c.seed;
  cfg.bilevel.outer_iters = b.iters;
  cfg.bilevel.t1 = b.t1;
  cfg.bilevel.t2 = b.t2;
  cfg.bilevel.tau = b.tau;
  cfg.bilevel.rho = b.rho;
  cfg.bilevel.beta = b.beta;
  cfg.bilevel.reinit_every = b.reinit > 0 ? std::optional<int>(b.reinit) : std::nullopt;
  cfg.clean_batch = b.clean_batch;
  cfg.poison_batch = b.poison_batch;
  cfg.val_batch = b.val_batch;
  if (b.mode == "class") {
    cfg.mode = ClassWide{};
  } else if (b.mode == "fraction") {
    cfg.mode = Fraction{b.fraction};
  } else {
    throw ContractError("unknown poisoning mode: " + b.mode + " (expected class or fraction)");
  }
  cfg.eps = eps;
  cfg.box = box_of(c);
  cfg.weight_decay = t.weight_decay;
  cfg.macer = {t.macer_k, t.macer_lambda, t.macer_gamma};
  cfg.smoothadv.adv_l2 = t.adv_l2;
  cfg.smoothadv.pgd_steps = t.pgd_steps;
  cfg.validate();
  return cfg;
}

// Held-out target-class points, capped at `limit`.
Batch eval_points(const Batch& eval, int target_class, int limit) {
  Batch t = eval.with_label(target_class);
  require(!t.empty(), "evaluation file has no points of the target class");
  if (limit > 0 && t.size() > limit) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(limit));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    t = t.rows(idx);
  }
  return t;
}

void write_json(const std::string& path, const json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw ContractError("cannot write " + path);
  out << j.dump(2) << '\n';
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void print_summary(const Report& r) {
  std::printf("%-28s ACR %.4f +- %.4f  ACA %.2f%% +- %.2f  acc %.2f%%  seeds %d/%d\n", r.label.c_str(), r.acr.mean,
              r.acr.sd, 100.0 * r.aca.mean, 100.0 * r.aca.sd, 100.0 * r.accuracy.mean, r.included, r.attempted);
  for (const auto& row : r.rows)
    if (row.failed) std::printf("  seed %llu failed: %s\n", static_cast<unsigned long long>(row.seed), row.note.c_str());
}

json series_json(const std::vector<SweepPoint>& s, const std::string& x_name) {
  json arr = json::array();
  for (const auto& p : s) arr.push_back({{x_name, p.x}, {"report", to_json(p.report)}});
  return {{"x", x_name}, {"series", arr}};
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw ParseError("bad number in list: '" + cell + "'");
    }
  }
  return out;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--box", c.box, "feature range LO HI")->expected(2);
  cmd->add_option("--hidden", c.hidden, "hidden layer widths (0 for a linear model)");
  cmd->add_option("--activation", c.activation, "relu or identity");
  cmd->add_option("--target-class", c.target_class);
  cmd->add_option("--sigma", c.sigma, "smoothing noise level");
  cmd->add_option("--seed", c.seed);
}

void add_training(CLI::App* cmd, Training& t) {
  cmd->add_option("--method", t.method, "standard, gaussaug, macer or smoothadv");
  cmd->add_option("--lr", t.lr);
  cmd->add_option("--epochs", t.epochs);
  cmd->add_option("--batch-size", t.batch_size);
  cmd->add_option("--weight-decay", t.weight_decay);
  cmd->add_option("--soft-k", t.soft_k, "noise draws for soft smoothing");
  cmd->add_option("--alpha-temp", t.alpha_temp, "softmax inverse temperature");
  cmd->add_option("--macer-k", t.macer_k);
  cmd->add_option("--macer-lambda", t.macer_lambda);
  cmd->add_option("--macer-gamma", t.macer_gamma);
  cmd->add_option("--adv-l2", t.adv_l2);
  cmd->add_option("--pgd-steps", t.pgd_steps);
}

void add_certify(CLI::App* cmd, Certify& k) {
  cmd->add_option("--seeds", k.seeds);
  cmd->add_option("--n0", k.n0);
  cmd->add_option("--n", k.n);
  cmd->add_option("--alpha", k.alpha, "certification failure probability");
  cmd->add_option("--eval-points", k.eval_points);
}

void add_bilevel(CLI::App* cmd, Bilevel& b) {
  cmd->add_option("--iters", b.iters, "outer iterations");
  cmd->add_option("--t1", b.t1, "lower-level steps per iteration");
  cmd->add_option("--t2", b.t2, "linear-system steps per iteration");
  cmd->add_option("--tau", b.tau, "upper step size");
  cmd->add_option("--rho", b.rho, "lower step size");
  cmd->add_option("--beta", b.beta, "linear-system step size");
  cmd->add_option("--reinit", b.reinit, "re-initialize the lower variable every N iterations (0: never)");
  cmd->add_option("--clean-batch", b.clean_batch);
  cmd->add_option("--poison-batch", b.poison_batch);
  cmd->add_option("--val-batch", b.val_batch);
  cmd->add_option("--lower", b.lower, "lower-level training method");
  cmd->add_option("--mode", b.mode, "class or fraction");
  cmd->add_option("--fraction", b.fraction);
}

// Clean part and poison of a saved attack directory.
std::pair<Batch, PoisonSet> load_attack_dir(const std::string& dir, const Common& c) {
  auto [poison, manifest] = io::load_poison(dir, {box_of(c), -1});
  Batch clean = io::load_csv(std::filesystem::path(dir) / "clean.csv", {box_of(c), -1});
  return {clean, poison};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Poisoning attacks on certified robustness: data, attacks, retraining and certification"};
  app.set_config("--config", "", "TOML file with option values; command-line flags take precedence");
  app.require_subcommand(1);

  Common common;
  Training training;
  Certify certify;
  Bilevel bilevel;

  std::string kind = "toy", out, data, val, eval, poison_dir, in_path, list, methods_list, poisons_list;
  int n_per_class = 500;
  double eps = 0.1, opacity = 0.3, sigma_data = 0.3, offset = 0.5, pixel_sd = 0.2;
  int dim = 784, m_aug = 64, pgd_iters = 20;
  double bound_lo = 0.01, bound_hi = 10.0;
  std::vector<double> pos, neg;
  bool plot = false;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset as CSV");
  gen->add_option("--kind", kind, "toy (two 2-d Gaussians) or images (two-class 784-d)");
  gen->add_option("--n-per-class", n_per_class);
  gen->add_option("--sigma-data", sigma_data, "toy: per-coordinate standard deviation");
  gen->add_option("--dim", dim, "images: dimension");
  gen->add_option("--offset", offset, "images: class offset along the pattern");
  gen->add_option("--pixel-sd", pixel_sd, "images: pixel noise");
  gen->add_option("--seed", common.seed);
  gen->add_option("--out", out)->required();

  auto* attack = app.add_subcommand("attack", "craft a poison set (pacd, standard or watermark)");
  std::string attack_method = "pacd";
  attack->add_option("--method", attack_method, "pacd, standard or watermark");
  attack->add_option("--data", data, "training CSV")->required();
  attack->add_option("--val", val, "attacker validation CSV (target-class rows are used)")->required();
  attack->add_option("--eps", eps);
  attack->add_option("--opacity", opacity, "watermark opacity");
  attack->add_option("--out", out, "output directory")->required();
  add_common(attack, common);
  add_bilevel(attack, bilevel);
  attack->add_option("--soft-k", training.soft_k);
  attack->add_option("--alpha-temp", training.alpha_temp);
  attack->add_option("--weight-decay", training.weight_decay);
  attack->add_option("--macer-k", training.macer_k);
  attack->add_option("--macer-lambda", training.macer_lambda);
  attack->add_option("--macer-gamma", training.macer_gamma);
  attack->add_option("--adv-l2", training.adv_l2);
  attack->add_option("--pgd-steps", training.pgd_steps);

  auto* rc = app.add_subcommand("retrain-certify", "train from scratch over seeds and certify the target class");
  rc->add_option("--poison", poison_dir, "attack output directory (omit for a clean baseline)");
  rc->add_option("--data", data, "training CSV for the clean baseline");
  rc->add_option("--eval", eval, "held-out CSV")->required();
  rc->add_option("--out", out, "report JSON (default: stdout)");
  add_common(rc, common);
  add_training(rc, training);
  add_certify(rc, certify);

  auto* transfer = app.add_subcommand("transfer", "retrain every poison set with every method");
  transfer->add_option("--poisons", poisons_list, "comma-separated attack directories")->required();
  transfer->add_option("--methods", methods_list, "comma-separated training methods")->required();
  transfer->add_option("--eval", eval)->required();
  transfer->add_option("--out", out);
  add_common(transfer, common);
  add_training(transfer, training);
  add_certify(transfer, certify);

  auto* sweep_eps = app.add_subcommand("sweep-eps", "attack and retrain for each eps");
  sweep_eps->add_option("--eps-list", list, "comma-separated, nondecreasing, starting at 0")->required();
  sweep_eps->add_option("--data", data)->required();
  sweep_eps->add_option("--val", val)->required();
  sweep_eps->add_option("--eval", eval)->required();
  sweep_eps->add_option("--out", out);
  add_common(sweep_eps, common);
  add_training(sweep_eps, training);
  add_certify(sweep_eps, certify);
  add_bilevel(sweep_eps, bilevel);

  auto* sweep_decay = app.add_subcommand("sweep-decay", "retrain for each weight decay");
  sweep_decay->add_option("--decays", list, "comma-separated")->required();
  sweep_decay->add_option("--poison", poison_dir);
  sweep_decay->add_option("--data", data);
  sweep_decay->add_option("--eval", eval)->required();
  sweep_decay->add_option("--out", out);
  add_common(sweep_decay, common);
  add_training(sweep_decay, training);
  add_certify(sweep_decay, certify);

  auto* emp = app.add_subcommand("emp-robust", "mean minimal PGD distortion of the smoothed model");
  emp->add_option("--poison", poison_dir);
  emp->add_option("--data", data);
  emp->add_option("--eval", eval)->required();
  emp->add_option("--m-aug", m_aug);
  emp->add_option("--pgd-iters", pgd_iters);
  emp->add_option("--bound-lo", bound_lo);
  emp->add_option("--bound-hi", bound_hi);
  emp->add_option("--out", out);
  add_common(emp, common);
  add_training(emp, training);
  add_certify(emp, certify);

  auto* oracle = app.add_subcommand("oracle", "closed-form checks");
  oracle->add_option("--kind", kind, "toy or linear1d");
  oracle->add_option("--eps", eps);
  oracle->add_option("--sigma-data", sigma_data);
  oracle->add_option("--pos", pos, "linear1d: positive points");
  oracle->add_option("--neg", neg, "linear1d: negative points");

  auto* report = app.add_subcommand("report", "summarize a report or emit plot data");
  report->add_option("--in", in_path, "report or series JSON")->required();
  report->add_flag("--plot", plot, "emit x,mean,sd rows for a series");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      Rng rng(common.seed);
      Batch b;
      if (kind == "toy") {
        analytic::GaussToyConfig cfg;
        cfg.n_per_class = n_per_class;
        cfg.sigma_data = sigma_data;
        b = analytic::gauss_toy_sample(cfg, rng);
      } else if (kind == "images") {
        SyntheticImageConfig cfg;
        cfg.dim = dim;
        cfg.n_per_class = n_per_class;
        cfg.offset = offset;
        cfg.pixel_sd = pixel_sd;
        b = synthetic_images(cfg, rng);
      } else {
        throw ContractError("unknown dataset kind: " + kind);
      }
      io::save_csv(out, b);
      std::printf("wrote %ld rows x %ld features to %s\n", static_cast<long>(b.size()), static_cast<long>(b.x.cols()),
                  out.c_str());
    } else if (*attack) {
      const Batch train_set = load(data, common);
      const Batch val_set = load(val, common).with_label(common.target_class);
      require(!val_set.empty(), "validation file has no target-class points");
      const NetworkSpec spec = network_for(train_set, common, num_classes(train_set));
      const AttackConfig cfg = attack_config(bilevel, training, common, spec, eps);
      Rng rng(common.seed);
      Rng split_rng = rng.split(0);
      const AttackSplit split = split_for_attack(train_set, common.target_class, cfg.mode, split_rng);
      PoisonSet poison;
      json extra = {{"bilevel", to_json(cfg.bilevel)}, {"network", to_json(spec)}, {"mode", bilevel.mode}};
      if (attack_method == "pacd") {
        const AttackReport r = pacd_attack(split.clean, split.base, val_set, cfg, rng.split(1));
        poison = r.poison;
        extra["upper_history"] = r.upper_history;
        extra["lower"] = bilevel.lower;
      } else if (attack_method == "standard") {
        const AttackReport r = standard_poison(split.clean, split.base, val_set, cfg, rng.split(1));
        poison = r.poison;
        extra["upper_history"] = r.upper_history;
      } else if (attack_method == "watermark") {
        Rng wm = rng.split(2);
        poison = watermark_baseline(split.base, split.clean.without_label(common.target_class), opacity, eps, wm,
                                    cfg.box);
        extra["opacity"] = opacity;
      } else {
        throw ContractError("unknown attack method: " + attack_method);
      }
      const std::string gen_method = attack_method == "pacd" ? bilevel.lower : attack_method;
      io::save_poison(out, poison, {eps, common.sigma, gen_method, common.seed, extra});
      io::save_csv(std::filesystem::path(out) / "clean.csv", split.clean);
      std::printf("poisoned %ld target-class rows (eps %.4g, max |delta| %.4g); written to %s\n",
                  static_cast<long>(poison.base_x.rows()), eps,
                  poison.delta.size() ? poison.delta.cwiseAbs().maxCoeff() : 0.0, out.c_str());
    } else if (*rc || *sweep_decay || *emp) {
      Batch clean;
      std::optional<PoisonSet> poison;
      if (!poison_dir.empty()) {
        auto [c, p] = load_attack_dir(poison_dir, common);
        clean = std::move(c);
        poison = std::move(p);
      } else {
        require(!data.empty(), "need --poison or --data");
        clean = load(data, common);
      }
      const Batch all = poison ? concat(clean, poison->as_batch()) : clean;
      const Batch pts = eval_points(load(eval, common), common.target_class, certify.eval_points);
      const NetworkSpec spec = network_for(all, common, num_classes(all));
      const TrainConfig tcfg = train_config(training, common);
      const PoisonSet* pp = poison ? &*poison : nullptr;
      if (*rc) {
        Report r = retrain_and_certify(pp, clean, pts, spec, tcfg, certify_config(certify), certify.seeds, common.seed);
        print_summary(r);
        if (!out.empty()) write_json(out, to_json(r));
      } else if (*sweep_decay) {
        const auto series =
            decay_sweep(parse_list(list), pp, clean, pts, spec, tcfg, certify_config(certify), certify.seeds);
        for (const auto& p : series) print_summary(p.report);
        if (!out.empty()) write_json(out, series_json(series, "weight_decay"));
      } else {
        json rows = json::array();
        std::vector<double> means;
        for (int s = 0; s < certify.seeds; ++s) {
          TrainConfig cfg = tcfg;
          cfg.seed = common.seed + static_cast<std::uint64_t>(s);
          const TrainResult tr = train(all, spec, cfg);
          const EmpiricalRobustness er = empirical_robustness(tr.params, pts, common.sigma, m_aug, pgd_iters,
                                                              bound_lo, bound_hi, Rng(cfg.seed).split(77), 1.0,
                                                              box_of(common));
          means.push_back(er.mean_distortion);
          rows.push_back({{"seed", cfg.seed}, {"mean_distortion", er.mean_distortion},
                          {"never_flipped", er.never_flipped}});
          std::printf("seed %llu: mean minimal l2 distortion %.4f (%d of %ld never flipped)\n",
                      static_cast<unsigned long long>(cfg.seed), er.mean_distortion, er.never_flipped,
                      static_cast<long>(pts.size()));
        }
        const MeanSd agg = mean_sd(means);
        std::printf("mean %.4f +- %.4f\n", agg.mean, agg.sd);
        if (!out.empty())
          write_json(out, {{"rows", rows}, {"mean", agg.mean}, {"sd", agg.sd}, {"train", to_json(tcfg)},
                           {"m_aug", m_aug}, {"pgd_iters", pgd_iters}, {"bound_lo", bound_lo},
                           {"bound_hi", bound_hi}});
      }
    } else if (*transfer) {
      std::vector<std::pair<TrainMethod, PoisonSet>> poisons;
      Batch clean;
      std::stringstream ss(poisons_list);
      std::string dir;
      while (std::getline(ss, dir, ',')) {
        auto [c, p] = load_attack_dir(dir, common);
        const auto manifest = io::load_poison(dir, {box_of(common), -1}).second;
        clean = std::move(c);
        poisons.emplace_back(parse_train_method(manifest.method), std::move(p));
      }
      std::vector<TrainMethod> methods;
      std::stringstream ms(methods_list);
      std::string m;
      while (std::getline(ms, m, ',')) methods.push_back(parse_train_method(m));
      const Batch pts = eval_points(load(eval, common), common.target_class, certify.eval_points);
      const Batch all = concat(clean, poisons.front().second.as_batch());
      const NetworkSpec spec = network_for(all, common, num_classes(all));
      const TransferGrid grid = transfer_matrix(poisons, clean, pts, spec, methods, train_config(training, common),
                                                certify_config(certify), certify.seeds, common.seed);
      json cells = json::array();
      for (const auto& row : grid.cells)
        for (const auto& r : row) {
          print_summary(r);
          cells.push_back(to_json(r));
        }
      if (!out.empty()) write_json(out, {{"cells", cells}});
    } else if (*sweep_eps) {
      const Batch train_set = load(data, common);
      const Batch val_set = load(val, common).with_label(common.target_class);
      const Batch pts = eval_points(load(eval, common), common.target_class, certify.eval_points);
      const NetworkSpec spec = network_for(train_set, common, num_classes(train_set));
      const AttackConfig cfg = attack_config(bilevel, training, common, spec, 0.0);
      Rng rng(common.seed);
      Rng split_rng = rng.split(0);
      const AttackSplit split = split_for_attack(train_set, common.target_class, cfg.mode, split_rng);
      const auto series = epsilon_sweep(parse_list(list), split.clean, split.base, val_set, pts, cfg,
                                        train_config(training, common), certify_config(certify), certify.seeds,
                                        rng.split(1));
      for (const auto& p : series) print_summary(p.report);
      if (!out.empty()) write_json(out, series_json(series, "eps"));
    } else if (*oracle) {
      if (kind == "toy") {
        analytic::GaussToyConfig cfg;
        cfg.eps = eps;
        cfg.sigma_data = sigma_data;
        const auto o = analytic::gauss_toy_oracle(cfg);
        std::printf("boundary distance clean %.5f poisoned %.5f drop %.5f\n", o.clean_acr_analytic,
                    o.poisoned_acr_analytic, o.drop);
        std::printf("expected radius   clean %.5f poisoned %.5f\n", o.clean_expected_radius,
                    o.poisoned_expected_radius);
        std::printf("accuracy          clean %.5f poisoned %.5f\n", o.clean_accuracy, o.poisoned_accuracy);
      } else if (kind == "linear1d") {
        const auto o = analytic::linear1d_optima({pos, neg, eps});
        std::printf("threshold: case 1 %.6f", o.t_case1);
        if (o.t_case2) std::printf(", case 2 %.6f", *o.t_case2);
        std::printf("\ncase 2 feasible from eps >= %.6f\nglobal optimum: case %d\n", o.eps_threshold,
                    o.global == analytic::OptimumCase::Case1 ? 1 : 2);
      } else {
        throw ContractError("unknown oracle kind: " + kind);
      }
    } else if (*report) {
      const json j = read_json(in_path);
      if (j.contains("series")) {
        std::vector<SweepPoint> series;
        const std::string x = j.value("x", "x");
        for (const auto& p : j["series"]) series.push_back({p.at(x).get<double>(), report_from_json(p.at("report"))});
        if (plot) {
          std::cout << plot_data(series);
        } else {
          for (const auto& p : series) print_summary(p.report);
        }
      } else if (j.contains("cells")) {
        for (const auto& c : j["cells"]) print_summary(report_from_json(c));
      } else {
        print_summary(report_from_json(j));
      }
    }
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
