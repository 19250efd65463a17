#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace pacd;

namespace {

analytic::Linear1DInstance random_instance(Rng& rng, std::size_t n) {
  analytic::Linear1DInstance inst;
  for (std::size_t i = 0; i < n; ++i) {
    inst.x_pos.push_back(1.0 + 0.4 * rng.normal());
    inst.x_neg.push_back(0.4 * rng.normal());
  }
  if (inst.sum_neg() >= inst.sum_pos()) std::swap(inst.x_pos, inst.x_neg);
  return inst;
}

BilevelConfig linear_config() {
  BilevelConfig cfg;
  cfg.outer_iters = 100;
  cfg.t1 = 50;
  cfg.t2 = 100;
  cfg.rho = 0.2;
  cfg.beta = 0.05;
  cfg.tau = 50.0;
  cfg.reinit_every = std::nullopt;
  return cfg;
}

struct ToySetup {
  Batch clean, base, val;
  AttackConfig cfg;
};

ToySetup toy_setup(double eps) {
  analytic::GaussToyConfig toy;
  toy.n_per_class = 100;
  Rng rng(1);
  Rng r1 = rng.split(1), r2 = rng.split(2), r3 = rng.split(3);
  const Batch train_set = analytic::gauss_toy_sample(toy, r1);
  ToySetup s;
  const AttackSplit split = split_for_attack(train_set, 0, ClassWide{}, r2);
  s.clean = split.clean;
  s.base = split.base;
  s.val = analytic::gauss_toy_sample(toy, r3).with_label(0);
  s.cfg.network = {{2, 2}, Activation::Identity, 0};
  s.cfg.smoothing.sigma = 0.25;
  s.cfg.smoothing.k = 8;
  s.cfg.box = Box::unbounded();
  s.cfg.eps = eps;
  s.cfg.clean_batch = 200;
  s.cfg.poison_batch = 100;
  s.cfg.val_batch = 100;
  s.cfg.bilevel.outer_iters = 30;
  s.cfg.bilevel.t1 = 20;
  s.cfg.bilevel.t2 = 20;
  s.cfg.bilevel.rho = 1.0;
  s.cfg.bilevel.beta = 0.5;
  s.cfg.bilevel.tau = 10.0;
  s.cfg.bilevel.reinit_every = std::nullopt;
  return s;
}

}  // namespace

TEST(PoisonSet, ValidateBudgetAndBox) {
  PoisonSet p{Matrix::Constant(2, 2, 0.5), {0, 0}, Matrix::Constant(2, 2, 0.1), 0.1};
  EXPECT_NO_THROW(p.validate());
  p.delta(0, 0) = 0.11;
  EXPECT_THROW(p.validate(), ContractError);
  PoisonSet q{Matrix::Constant(1, 1, 0.95), {0}, Matrix::Constant(1, 1, 0.1), 0.1};
  EXPECT_THROW(q.validate(), ContractError);
  EXPECT_NO_THROW(q.validate(Box::unbounded()));
}

TEST(Watermark, ArithmeticAndInvariants) {
  Rng rng(1);
  const Batch base{Matrix::Constant(1, 1, 0.5), {0}};
  const Batch other{Matrix::Constant(1, 1, 1.0), {1}};
  EXPECT_NEAR(watermark_baseline(base, other, 0.1, 0.03, rng).composite()(0, 0), 0.53, 1e-15);
  EXPECT_EQ(watermark_baseline(base, other, 0.0, 0.03, rng).delta.norm(), 0.0);
  Rng data(2);
  const Batch b{data.normal_matrix(20, 5).cwiseAbs().cwiseMin(1.0), Labels(20, 0)};
  const Batch o{data.normal_matrix(10, 5).cwiseAbs().cwiseMin(1.0), Labels(10, 1)};
  const PoisonSet w = watermark_baseline(b, o, 0.5, 0.05, rng);
  EXPECT_LE(w.delta.cwiseAbs().maxCoeff(), 0.05 + 1e-15);
  EXPECT_NO_THROW(w.validate());
  EXPECT_THROW(watermark_baseline(b, o, 1.5, 0.05, rng), ContractError);
  EXPECT_THROW(watermark_baseline(b, Batch{Matrix(0, 5), {}}, 0.5, 0.05, rng), ContractError);
}

TEST(PoolSelection, ModesAgreeAndNearestNeighbor) {
  Batch train{Matrix(6, 1), {0, 1, 0, 1, 0, 0}};
  train.x << 0.0, 1.0, 0.2, 0.9, 0.4, 0.6;
  Rng r1(0), r2(0), r3(0);
  const auto whole = split_for_attack(train, 0, ClassWide{}, r1);
  const auto frac = split_for_attack(train, 0, Fraction{1.0}, r2);
  EXPECT_EQ(whole.base.x, frac.base.x);
  EXPECT_EQ(whole.base_indices, (std::vector<Eigen::Index>{0, 2, 4, 5}));
  EXPECT_EQ(whole.clean.y, (Labels{1, 1}));
  TargetPoints tp{Matrix::Constant(1, 1, 0.45), 1};
  const Batch nn = select_poison_pool(train, 0, tp, r3);
  ASSERT_EQ(nn.size(), 1);
  EXPECT_DOUBLE_EQ(nn.x(0, 0), 0.4);
  EXPECT_EQ(select_poison_pool(train, 0, Fraction{0.5}, r3).size(), 2);
  EXPECT_THROW(select_poison_pool(train, 2, ClassWide{}, r3), ContractError);
  EXPECT_THROW(select_poison_pool(train, 0, Fraction{0.0}, r3), ContractError);
}

TEST(Linear1D, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  const auto inst = random_instance(rng, 6);
  std::vector<double> sample(inst.x_neg);
  Linear1DPoisonProblem p(inst, 4, sample);
  const Vector u = p.initial_u();
  const Vector v = Eigen::Vector2d(1.3, -0.4);
  auto zeta = [&](const Vector& uu, const Vector& vv) {
    double s = 0;
    for (double x : inst.x_pos) s += 0.5 * std::pow(vv(0) * x + vv(1) - 1, 2);
    for (std::size_t i = 0; i < inst.n(); ++i) {
      const double x = i < 4 ? uu(static_cast<Eigen::Index>(i)) : inst.x_neg[i];
      s += 0.5 * std::pow(vv(0) * x + vv(1) + 1, 2);
    }
    return s / static_cast<double>(inst.n());
  };
  const std::vector<Eigen::Index> c2{0, 1}, c4{0, 1, 2, 3};
  EXPECT_LT(oracle::fd_relative_error([&](const Vector& x) { return zeta(u, x); }, v, p.lower_grad_v(u, v), c2), 1e-6);
  EXPECT_LT(oracle::fd_relative_error([&](const Vector& x) { return zeta(x, v); }, u, p.lower_grad_u(u, v), c4), 1e-6);
  EXPECT_LT(oracle::fd_relative_error([&](const Vector& x) { return p.upper(u, x).value; }, v, p.upper(u, v).grad_v, c2,
                                      1e-7),
            1e-5);
}

TEST(Linear1D, SolverRecoversUniqueOptimum) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng, 1 + rng.below(20));
    inst.eps = 0.9 * rng.uniform() * (inst.sum_pos() - inst.sum_neg()) / static_cast<double>(inst.n());
    const auto o = analytic::linear1d_optima(inst);
    ASSERT_EQ(o.global, analytic::OptimumCase::Case1);
    Linear1DPoisonProblem p(inst, inst.n(), inst.x_neg);
    const BilevelResult r = solve(p, linear_config(), Rng(static_cast<std::uint64_t>(trial)));
    for (std::size_t i = 0; i < inst.n(); ++i)
      EXPECT_NEAR(r.state.u(static_cast<Eigen::Index>(i)), o.case1[i], 0.01 * inst.eps) << "trial " << trial;
  }
}

TEST(Linear1D, FractionalSolverMatchesClosedForm) {
  const analytic::Linear1DInstance inst{{1.0, 1.2}, {0.0, 0.1}, 0.2};
  Linear1DPoisonProblem p(inst, 1, inst.x_neg);
  const BilevelResult r = solve(p, linear_config(), Rng(0));
  std::vector<double> u = inst.x_neg;
  u[0] = r.state.u(0);
  const double t = analytic::least_squares_linear_1d(inst.x_pos, u).t;
  EXPECT_NEAR(t, analytic::fractional_threshold(inst, 0.5, 0.2), 0.02 * 0.1);
  EXPECT_THROW(Linear1DPoisonProblem(inst, 0, inst.x_neg), ContractError);
}

TEST(PoisonProblem, LowerInputGradientMatchesFiniteDifferences) {
  ToySetup s = toy_setup(0.1);
  s.cfg.network = {{2, 4, 2}, Activation::ReLU, 0};
  s.cfg.lower_method = TrainMethod::Macer;
  s.cfg.clean_batch = 20;
  s.cfg.poison_batch = 10;
  PoisonProblem p(s.clean, s.base, s.val, s.cfg);
  Rng rng(3);
  const Vector v = p.initial_v(rng);
  const Vector u = p.initial_u();
  p.begin_iteration(0, u, v, rng);
  // Scalar lower loss as a function of u, through the parameter-gradient
  // oracle's companion: finite differences of lower_grad_v's potential are
  // not available, so compare H_uv q against differences of lower_grad_u.
  const Vector gu = p.lower_grad_u(u, v);
  EXPECT_EQ(gu.size(), u.size());
  EXPECT_GT(gu.norm(), 0.0);
  int nonzero_rows = 0;
  for (Eigen::Index i = 0; i < s.base.size(); ++i) nonzero_rows += gu.segment(2 * i, 2).norm() > 0;
  EXPECT_EQ(nonzero_rows, 10);
  const Vector q = rng.normal_matrix(v.size(), 1);
  const Vector huv = p.hvp_uv(u, v, q, 1e-5);
  // d/dt <q, grad_v zeta(u + t e_j, v)> equals (H_uv q)_j.
  for (int trial = 0; trial < 10; ++trial) {
    const auto j = static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(u.size())));
    Vector up = u, um = u;
    up(j) += 1e-6;
    um(j) -= 1e-6;
    const double fd = q.dot(p.lower_grad_v(up, v) - p.lower_grad_v(um, v)) / 2e-6;
    EXPECT_NEAR(huv(j), fd, 1e-4 * std::max(1.0, std::abs(fd)));
  }
}

TEST(PoisonProblem, UpperGradientMatchesFiniteDifferences) {
  ToySetup s = toy_setup(0.1);
  s.cfg.network = {{2, 5, 2}, Activation::ReLU, 0};
  PoisonProblem p(s.clean, s.base, s.val, s.cfg);
  Rng rng(6);
  Vector v = p.initial_v(rng);
  const Vector u = p.initial_u();
  p.begin_iteration(0, u, v, rng);
  // Train briefly so most validation points are classified correctly.
  for (int i = 0; i < 300; ++i) v -= 0.5 * p.lower_grad_v(u, v);
  const auto up = p.upper(u, v);
  EXPECT_GT(up.value, 0.0);
  EXPECT_LT(oracle::fd_relative_error([&](const Vector& x) { return p.upper(u, x).value; }, v, up.grad_v,
                                      oracle::random_coords(v.size(), 20, rng)),
            1e-4);
}

TEST(PacdAttack, ZeroBudgetReturnsBase) {
  ToySetup s = toy_setup(0.0);
  s.cfg.bilevel.outer_iters = 3;
  const AttackReport r = pacd_attack(s.clean, s.base, s.val, s.cfg, Rng(0));
  EXPECT_EQ(r.poison.delta.norm(), 0.0);
  EXPECT_EQ(r.poison.composite(), s.base.x);
}

TEST(PacdAttack, ToyPoisonMovesAwayFromOtherClassWithinBudget) {
  ToySetup s = toy_setup(0.1);
  const AttackReport r = pacd_attack(s.clean, s.base, s.val, s.cfg, Rng(0));
  EXPECT_NO_THROW(r.poison.validate(Box::unbounded()));
  EXPECT_LT(r.poison.delta.mean(), -0.05);
  EXPECT_EQ(r.upper_history.size(), 30u);
  const AttackReport again = pacd_attack(s.clean, s.base, s.val, s.cfg, Rng(0));
  EXPECT_EQ(again.poison.delta, r.poison.delta);
}

TEST(PacdAttack, ContractViolations) {
  ToySetup s = toy_setup(0.1);
  AttackConfig cfg = s.cfg;
  cfg.lower_method = TrainMethod::Standard;
  EXPECT_THROW(pacd_attack(s.clean, s.base, s.val, cfg, Rng(0)), ContractError);
  EXPECT_THROW(pacd_attack(s.clean, s.clean, s.val, s.cfg, Rng(0)), ContractError);
  cfg = s.cfg;
  cfg.eps = -1;
  EXPECT_THROW(pacd_attack(s.clean, s.base, s.val, cfg, Rng(0)), ContractError);
}

TEST(StandardPoison, ZeroBudgetAndAccuracyDrop) {
  // Separable 1-D classes at 0.3 and 0.7; the validation points sit at 0.45,
  // inside the margin, so moving the poison class past them flips them.
  Batch clean{Matrix::Constant(20, 1, 0.7), Labels(20, 1)};
  Batch base{Matrix::Constant(20, 1, 0.3), Labels(20, 0)};
  Rng rng(1);
  clean.x.array() += 0.01 * rng.normal_matrix(20, 1).array();
  base.x.array() += 0.01 * rng.normal_matrix(20, 1).array();
  const Batch val{Matrix::Constant(10, 1, 0.45), Labels(10, 0)};
  AttackConfig cfg;
  cfg.network = {{1, 2}, Activation::Identity, 0};
  cfg.eps = 0.3;
  cfg.clean_batch = 40;
  cfg.poison_batch = 20;
  cfg.val_batch = 10;
  cfg.bilevel.outer_iters = 60;
  cfg.bilevel.t1 = 50;
  cfg.bilevel.t2 = 20;
  cfg.bilevel.rho = 2.0;
  cfg.bilevel.beta = 0.5;
  cfg.bilevel.tau = 20.0;
  cfg.bilevel.reinit_every = std::nullopt;
  TrainConfig tc;
  tc.method = TrainMethod::Standard;
  tc.lr = 0.05;
  tc.epochs = 300;
  tc.batch_size = 40;
  const NetworkSpec spec = cfg.network;
  const double clean_acc = accuracy(train(concat(clean, base), spec, tc).params, val);
  AttackConfig zero = cfg;
  zero.eps = 0.0;
  zero.bilevel.outer_iters = 2;
  EXPECT_EQ(standard_poison(clean, base, val, zero, Rng(0)).poison.delta.norm(), 0.0);
  const AttackReport r = standard_poison(clean, base, val, cfg, Rng(0));
  const double pois_acc = accuracy(train(concat(clean, r.poison.as_batch()), spec, tc).params, val);
  EXPECT_EQ(clean_acc, 1.0);
  EXPECT_LE(pois_acc, clean_acc - 0.2);
}
