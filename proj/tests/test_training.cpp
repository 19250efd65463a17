#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace pacd;

namespace {

Batch random_batch(int n, int d, int classes, Rng& rng) {
  Batch b{0.5 + 0.2 * rng.normal_matrix(n, d).array(), Labels(static_cast<std::size_t>(n))};
  for (auto& y : b.y) y = static_cast<int>(rng.below(static_cast<std::size_t>(classes)));
  return b;
}

TrainConfig config(TrainMethod m, double sigma) {
  TrainConfig c;
  c.method = m;
  c.smoothing.sigma = sigma;
  c.smoothing.alpha_temp = 2.0;
  c.macer = {4, 2.0, 8.0};
  c.box = Box::unbounded();
  return c;
}

// Loss of a frozen RobustLoss as a function of the flat parameters.
std::function<double(const Vector&)> param_loss(const RobustLoss& l, const NetworkSpec& s, const Matrix& x) {
  return [&l, s, x](const Vector& v) { return l({v, s}, x).loss; };
}

std::function<double(const Vector&)> input_loss(const RobustLoss& l, const ModelParams& p, const Matrix& x) {
  return [&l, p, x](const Vector& u) { return l(p, unflatten(u, x.rows(), x.cols())).loss; };
}

}  // namespace

TEST(TrainMethod, ParseAndPrint) {
  for (auto m : {TrainMethod::Standard, TrainMethod::GaussAug, TrainMethod::Macer, TrainMethod::SmoothAdv})
    EXPECT_EQ(parse_train_method(to_string(m)), m);
  EXPECT_THROW(parse_train_method("sgd"), ContractError);
}

TEST(GaussAug, ZeroSigmaIsCrossEntropy) {
  Rng rng(1);
  const NetworkSpec s{{3, 5, 2}, Activation::ReLU, 0};
  const ModelParams p = init_params(s, 1);
  const Batch b = random_batch(10, 3, 2, rng);
  Rng noise(2);
  const LossGrad a = gauss_aug_loss(p, b, 0.0, 0.0, noise);
  const LossGrad c = loss_grad(p, b);
  EXPECT_DOUBLE_EQ(a.loss, c.loss);
  EXPECT_LT((a.grad_params - c.grad_params).norm(), 1e-15);
  EXPECT_GE(gauss_aug_loss(p, b, 0.5, 0.0, noise).loss, 0.0);
  EXPECT_THROW(gauss_aug_loss(p, b, -1.0, 0.0, noise), ContractError);
}

TEST(MacerObjective, HingeSaturatesAndMisclassifiedOnlyCe) {
  Matrix probs(2, 2);
  probs << 0.3, 0.7,            // misclassified for label 0
      1 - 1e-9, 1e-9;           // huge margin, clamped quantiles
  Matrix d;
  double robust = -1;
  const double loss = macer_objective(probs, {0, 0}, {16, 16.0, 1.0}, 0.25, &d, &robust);
  EXPECT_NEAR(loss, (-std::log(0.3) - std::log(1 - 1e-9)) / 2, 1e-12);
  EXPECT_EQ(robust, 0.0);
  // Margin below gamma adds the scaled hinge.
  Matrix q(1, 2);
  q << 0.8, 0.2;
  const double xi = std_normal_quantile(0.8) - std_normal_quantile(0.2);
  const double l2 = macer_objective(q, {0}, {16, 4.0, 8.0}, 0.5, &d, &robust);
  EXPECT_NEAR(robust, 0.5 * 4.0 * 0.5 * (8.0 - xi), 1e-12);
  EXPECT_NEAR(l2, -std::log(0.8) + robust, 1e-12);
}

TEST(PgdSmoothed, StaysInBallAndAscends) {
  const NetworkSpec s{{4, 8, 3}, Activation::ReLU, 0};
  int ascended = 0;
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    const ModelParams p = init_params(s, static_cast<std::uint64_t>(seed));
    const Matrix x = rng.normal_matrix(1, 4);
    const int y = static_cast<int>(rng.below(3));
    const Matrix noise = rng.normal_matrix(4, 4);
    const Matrix adv = pgd_smoothed_batch(p, x, {y}, 0.5, 5, noise, 4, 0.25, 1.0, Box::unbounded());
    EXPECT_LE((adv - x).norm(), 0.5 + 1e-12);
    auto obj = [&](const Matrix& z) { return -std::log(noisy_forward(p, z, noise, 0.25, 4, 1.0).mean_probs(0, y)); };
    ascended += obj(adv) >= obj(x);
  }
  EXPECT_EQ(ascended, 100);
}

TEST(PgdSmoothed, DegenerateRadiusAndBox) {
  const NetworkSpec s{{2, 3}, Activation::Identity, 0};
  const ModelParams p = init_params(s, 1);
  Rng rng(3);
  const Vector x = Vector::Constant(2, 0.5);
  EXPECT_LT((pgd_smoothed(p, x, 0, 1e-12, 3, 2, 0.25, 1.0, rng) - x).norm(), 1e-11);
  const Vector near_edge = Vector::Constant(2, 0.99);
  const Vector adv = pgd_smoothed(p, near_edge, 0, 1.0, 4, 2, 0.25, 1.0, rng);
  EXPECT_LE(adv.maxCoeff(), 1.0);
  EXPECT_GE(adv.minCoeff(), 0.0);
  EXPECT_THROW(pgd_smoothed(p, x, 0, 0.1, 0, 1, 0.25, 1.0, rng), ContractError);
}

// Every lower-level loss with its noise frozen: gradients with respect to
// parameters and inputs at 20 random coordinates.
class LossGradients : public ::testing::TestWithParam<TrainMethod> {};

TEST_P(LossGradients, FiniteDifferenceCheck) {
  Rng rng(11);
  const NetworkSpec s{{5, 6, 3}, Activation::ReLU, 0};
  const ModelParams p = init_params(s, 3);
  const Batch b = random_batch(6, 5, 3, rng);
  TrainConfig cfg = config(GetParam(), 0.3);
  cfg.weight_decay = 1e-3;
  RobustLoss loss = RobustLoss::draw(cfg, b.y, 5, rng);
  loss.refresh_adversarial(p, b.x);
  const LossGrad lg = loss(p, b.x);
  EXPECT_LT(oracle::fd_relative_error(param_loss(loss, s, b.x), p.flat, lg.grad_params,
                                      oracle::random_coords(p.flat.size(), 20, rng)),
            1e-4);
  const Vector x0 = flatten(b.x);
  EXPECT_LT(oracle::fd_relative_error(input_loss(loss, p, b.x), x0, flatten(lg.grad_inputs),
                                      oracle::random_coords(x0.size(), 20, rng)),
            1e-4);
}

INSTANTIATE_TEST_SUITE_P(AllMethods, LossGradients,
                         ::testing::Values(TrainMethod::Standard, TrainMethod::GaussAug, TrainMethod::Macer,
                                           TrainMethod::SmoothAdv),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(SmoothAdv, ZeroRadiusIsGaussAug) {
  Rng rng(4);
  const NetworkSpec s{{3, 4, 2}, Activation::ReLU, 0};
  const ModelParams p = init_params(s, 1);
  const Batch b = random_batch(8, 3, 2, rng);
  SmoothAdvParams sa;
  sa.adv_l2 = 0.0;
  Rng r1(9), r2(9);
  EXPECT_DOUBLE_EQ(smoothadv_loss(p, b, sa, 0.25, 0.0, r1).loss, gauss_aug_loss(p, b, 0.25, 0.0, r2).loss);
}

TEST(SmoothAdv, LossAtLeastGaussAugOnSameNoise) {
  const NetworkSpec s{{3, 6, 2}, Activation::ReLU, 0};
  int ok = 0;
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    const ModelParams p = init_params(s, static_cast<std::uint64_t>(seed));
    const Batch b = random_batch(4, 3, 2, rng);
    TrainConfig cfg = config(TrainMethod::SmoothAdv, 0.25);
    RobustLoss adv = RobustLoss::draw(cfg, b.y, 3, rng);
    const double clean = adv(p, b.x).loss;  // offsets still zero
    adv.refresh_adversarial(p, b.x);
    ok += adv(p, b.x).loss >= clean - 1e-12;
  }
  EXPECT_EQ(ok, 100);
}

TEST(Train, SeparableDataReachesFullAccuracy) {
  Rng rng(5);
  Batch b{Matrix(40, 2), Labels(40)};
  for (int i = 0; i < 40; ++i) {
    const int c = i % 2;
    b.y[static_cast<std::size_t>(i)] = c;
    b.x(i, 0) = (c ? 0.8 : 0.2) + 0.05 * rng.normal();
    b.x(i, 1) = rng.uniform();
  }
  TrainConfig cfg;
  cfg.method = TrainMethod::Standard;
  cfg.lr = 0.05;
  cfg.epochs = 200;
  cfg.batch_size = 10;
  const NetworkSpec s{{2, 2}, Activation::Identity, 0};
  EXPECT_EQ(accuracy(train(b, s, cfg).params, b), 1.0);
}

TEST(Train, BitIdenticalAcrossRuns) {
  Rng rng(6);
  const Batch b = random_batch(30, 3, 2, rng);
  const NetworkSpec s{{3, 4, 2}, Activation::ReLU, 0};
  for (auto m : {TrainMethod::GaussAug, TrainMethod::Macer, TrainMethod::SmoothAdv}) {
    TrainConfig cfg = config(m, 0.25);
    cfg.epochs = 3;
    cfg.seed = 17;
    const TrainResult a = train(b, s, cfg), c = train(b, s, cfg);
    EXPECT_EQ(a.params.flat, c.params.flat);
    EXPECT_EQ(a.epoch_loss, c.epoch_loss);
    cfg.seed = 18;
    EXPECT_NE(train(b, s, cfg).params.flat, a.params.flat);
  }
}

TEST(Train, ToyGaussAugAccuracyNearBayes) {
  analytic::GaussToyConfig toy;
  Rng rng(7);
  const Batch tr = analytic::gauss_toy_sample(toy, rng);
  toy.n_per_class = 5000;
  const Batch te = analytic::gauss_toy_sample(toy, rng);
  TrainConfig cfg = config(TrainMethod::GaussAug, 0.25);
  cfg.lr = 0.01;
  cfg.epochs = 50;
  const TrainResult r = train(tr, {{2, 2}, Activation::Identity, 0}, cfg);
  // Bayes accuracy Phi(|mu+ - mu-| / (2 sigma_data)) = Phi(sqrt 2) ~ 0.921.
  EXPECT_NEAR(accuracy(r.params, te), oracle::phi_cdf(std::sqrt(2.0)), 0.015);
}

TEST(Train, RejectsBadInputs) {
  const NetworkSpec s{{3, 2}, Activation::Identity, 0};
  TrainConfig cfg;
  EXPECT_THROW(train(Batch{Matrix(0, 3), {}}, s, cfg), ContractError);
  EXPECT_THROW(train(Batch{Matrix::Zero(2, 4), {0, 1}}, s, cfg), ContractError);
  cfg.lr = 0.0;
  EXPECT_THROW(train(Batch{Matrix::Zero(2, 3), {0, 1}}, s, cfg), ContractError);
}

TEST(Train, DivergenceRaisesNumericalError) {
  const NetworkSpec s{{1, 2}, Activation::Identity, 0};
  TrainConfig cfg;
  cfg.method = TrainMethod::Standard;
  cfg.lr = 1e300;
  cfg.epochs = 50;
  Batch b{Matrix(2, 1), {0, 1}};
  b.x << 1e300, -1e300;
  EXPECT_THROW(train(b, s, cfg), NumericalError);
}
