#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>

#include "popo/critic.hpp"

using namespace popo;
using namespace popo::critic;
using nn::Matrix;
using nn::Vector;

namespace {

// Independent normal CDF: midpoint-rule integral of the density from -12.
double cdf_by_quadrature(double x) {
    const int n = 200000;
    const double lo = -12.0, h = (x - lo) / n;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t = lo + (i + 0.5) * h;
        acc += std::exp(-0.5 * t * t);
    }
    return acc * h / std::sqrt(2.0 * std::numbers::pi);
}

// Integral of z(beta(u)) over u in [0, 1] by the midpoint rule.
template <typename F>
double distorted_integral(const Distortion& beta, F z, int n = 100000) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += z(beta((i + 0.5) / n));
    return acc / n;
}

QuantileNet<double> small_net(std::uint64_t seed, int input = 3, int hidden = 8) {
    Rng rng(seed);
    return QuantileNet<double>(input, hidden, 64, rng);
}

Matrix<double> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Matrix<double> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
    return m;
}

}  // namespace

TEST_CASE("distortion closed forms") {
    CHECK(Distortion::cvar(0.1)(0.5) == doctest::Approx(0.05).epsilon(1e-15));
    const double oracle = cdf_by_quadrature(-0.75);
    CHECK(std::abs(oracle - 0.226627) < 1e-5);
    CHECK(std::abs(Distortion::wang(-0.75)(0.5) - oracle) < 1e-9);
    for (int i = 0; i <= 1000; ++i) {
        const double tau = i / 1000.0;
        CHECK(std::abs(Distortion::wang(0.0)(tau) - tau) < 1e-9);
        CHECK(std::abs(Distortion::cpw(1.0)(tau) - tau) < 1e-9);
        CHECK(std::abs(Distortion::cvar(1.0)(tau) - tau) < 1e-9);
        CHECK(Distortion::identity()(tau) == tau);
        for (const auto& d : {Distortion::wang(-0.75), Distortion::wang(0.75), Distortion::cpw(0.71), Distortion::cvar(0.25)}) {
            const double b = d(tau);
            CHECK((b >= 0.0 && b <= 1.0));
        }
    }
    CHECK(Distortion::wang(-0.75)(0.0) == doctest::Approx(0.0).epsilon(1e-8));
    CHECK(Distortion::wang(0.75)(1.0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(Distortion::cpw(0.71)(0.0) == 0.0);
    CHECK(Distortion::cpw(0.71)(1.0) == 1.0);
}

TEST_CASE("normal quantile inverts the CDF") {
    for (double p : {1e-8, 1e-5, 0.01, 0.02425, 0.2, 0.5, 0.8, 0.97575, 0.999, 1.0 - 1e-8}) {
        const double x = normal_quantile(p);
        CHECK(std::abs(normal_cdf(x) - p) < 1e-8 * std::max(p, 1e-3));
    }
    CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
    CHECK_THROWS_AS(normal_quantile(0.0), ConfigError);
}

TEST_CASE("distortion argument checks and JSON") {
    CHECK_THROWS_AS(Distortion::wang(0.0)(1.5), ConfigError);
    CHECK_THROWS_AS(Distortion::cvar(0.5)(-0.1), ConfigError);
    CHECK_THROWS_AS(Distortion::cvar(0.0), ConfigError);
    CHECK_THROWS_AS(Distortion::cvar(1.5), ConfigError);
    CHECK_THROWS_AS(Distortion::cpw(0.0), ConfigError);

    const auto def = distortion_from_json(nlohmann::json::object());
    CHECK(def.kind() == Distortion::Kind::wang);
    CHECK(def.zeta() == -0.75);
    const auto cv = distortion_from_json({{"kind", "cvar"}, {"zeta", 0.25}});
    CHECK(cv.name() == "cvar(0.25)");
    CHECK(distortion_from_json(to_json(cv)).zeta() == 0.25);
    CHECK_THROWS_AS(distortion_from_json({{"kind", "exp"}}), ConfigError);
    CHECK_THROWS_AS(distortion_from_json({{"kind", "wang"}, {"eta", 1}}), ConfigError);
    CHECK(distortion_from_json({{"kind", "identity"}}).name() == "identity");
}

TEST_CASE("pessimism at the distortion level, by grid integration") {
    const std::vector<std::function<double(double)>> quantile_functions{
        [](double t) { return t; },
        [](double t) { return normal_quantile(std::clamp(t, 1e-9, 1 - 1e-9)); },
        [](double t) { return t < 0.3 ? -2.0 : std::pow(t, 3.0); },
    };
    for (const auto& z : quantile_functions) {
        const double base = distorted_integral(Distortion::identity(), z);
        for (const auto& d : {Distortion::wang(-0.75), Distortion::wang(-0.1), Distortion::cvar(0.25), Distortion::cvar(0.9)}) {
            CHECK(distorted_integral(d, z) <= base + 1e-6);
        }
    }
    // Z_tau = tau: cvar(0.25) gives 0.125, identity 0.5, and wang(0.75) more than that.
    auto id = [](double t) { return t; };
    CHECK(distorted_integral(Distortion::cvar(0.25), id) == doctest::Approx(0.125).epsilon(1e-9));
    CHECK(distorted_integral(Distortion::identity(), id) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(distorted_integral(Distortion::wang(0.75), id) > 0.5);
}

TEST_CASE("quantile Huber hand values, continuity and errors") {
    auto single = [](double x, double tau) {
        return quantile_huber(Matrix<double>::Constant(1, 1, x), {tau}, 1.0);
    };
    CHECK(std::abs(single(2.0, 0.5) - 0.75) < 1e-9);
    CHECK(std::abs(single(-2.0, 0.9) - 0.15) < 1e-9);
    CHECK(std::abs(single(0.5, 0.5) - 0.0625) < 1e-9);
    CHECK(quantile_huber(Matrix<double>::Zero(4, 3), {0.1, 0.2, 0.3, 0.4}, 1.0) == 0.0);
    for (double kappa : {0.5, 1.0, 2.0}) {
        for (double sign : {-1.0, 1.0}) {
            const double left = quantile_huber_element(sign * kappa * (1 - 1e-12), 0.3, kappa);
            const double right = quantile_huber_element(sign * kappa * (1 + 1e-12), 0.3, kappa);
            CHECK(std::abs(left - right) < 1e-9);
        }
    }
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        const Matrix<double> d = random_matrix(3, 4, rng) * 3.0;
        CHECK(quantile_huber(d, {rng.uniform(), rng.uniform(), rng.uniform()}, 1.0) > 0.0);
    }
    // The double sum is divided by N' only.
    CHECK(quantile_huber(Matrix<double>::Constant(2, 4, 2.0), {0.5, 0.5}, 1.0) == doctest::Approx(2 * 0.75));
    CHECK_THROWS_AS(single(std::nan(""), 0.5), NumericalError);
    CHECK_THROWS_AS(quantile_huber(Matrix<double>::Zero(2, 2), {0.5}, 1.0), DimensionError);
    CHECK_THROWS_AS(quantile_huber(Matrix<double>::Zero(1, 1), {0.5}, 0.0), ConfigError);
}

TEST_CASE("z_values: zero head, duplicate taus, golden snapshot") {
    auto net = small_net(2024);
    const Vector<double> sa = (Vector<double>(3) << 0.1, -0.2, 0.3).finished();
    const Vector<double> taus = (Vector<double>(4) << 0.1, 0.5, 0.9, 0.5).finished();
    const Vector<double> z = z_values(net, sa, taus);
    CHECK(z(1) == z(3));
    // Pinned from the first verified run of this seed.
    const double golden[3] = {-0.32675478048154022, -0.28748352731011745, -0.28153931797033871};
    for (int i = 0; i < 3; ++i) CHECK(z(i) == doctest::Approx(golden[i]).epsilon(1e-12));

    net.head().layer(0).weight.setZero();
    net.head().layer(0).bias.setZero();
    CHECK(z_values(net, sa, taus).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(z_values(net, Vector<double>(Vector<double>::Zero(2)), taus), DimensionError);
    CHECK_THROWS_AS(z_values(net, sa, (Vector<double>(1) << 1.5).finished()), ConfigError);
}

TEST_CASE("q_beta of a critic constant in tau, and Monte-Carlo agreement") {
    auto net = small_net(5);
    net.embedding().layer(0).weight.setZero();
    const Vector<double> sa = (Vector<double>(3) << 0.4, 0.1, -0.7).finished();
    Rng probe(0);
    const double c = z_values(net, sa, (Vector<double>(1) << 0.5).finished())(0);
    for (const auto& d : {Distortion::identity(), Distortion::wang(-0.75), Distortion::cvar(0.1), Distortion::cpw(0.71)}) {
        CHECK(q_beta(net, sa, d, 16, probe) == doctest::Approx(c).epsilon(1e-12));
    }

    auto live = small_net(6);
    for (const auto& d : {Distortion::identity(), Distortion::wang(-0.75)}) {
        auto z = [&](double t) { return z_values(live, sa, (Vector<double>(1) << t).finished())(0); };
        const double truth = distorted_integral(d, z, 20000);
        double second = 0.0;
        for (int i = 0; i < 20000; ++i) second += std::pow(z(d((i + 0.5) / 20000)) - truth, 2);
        const double sigma = std::sqrt(second / 20000);
        const int k = 4096;
        Rng rng(77);
        CHECK(std::abs(q_beta(live, sa, d, k, rng) - truth) < 3.0 * sigma / std::sqrt(k) + 1e-12);
    }
    Rng rng(1);
    CHECK_THROWS_AS(q_beta(live, sa, Distortion::identity(), 0, rng), ConfigError);
}

TEST_CASE("sample_taus draws distorted levels column by column") {
    Rng a(3), b(3);
    const Matrix<double> t = sample_taus<double>(32, 5, Distortion::cvar(0.25), a);
    CHECK(t.rows() == 32);
    CHECK(t.cols() == 5);
    CHECK(t.maxCoeff() <= 0.25);
    CHECK(t == sample_taus<double>(32, 5, Distortion::cvar(0.25), b));
}

TEST_CASE("grouped taus match per-column evaluation") {
    auto net = small_net(8);
    Rng rng(9);
    const Matrix<double> sa = random_matrix(3, 6, rng);
    const Matrix<double> taus = sample_taus<double>(4, 2, Distortion::identity(), rng);
    const Matrix<double> z = net.forward(sa, taus);
    for (int c = 0; c < 6; ++c) {
        const Vector<double> expected = z_values(net, Vector<double>(sa.col(c)), Vector<double>(taus.col(c / 3)));
        CHECK((z.col(c) - expected).cwiseAbs().maxCoeff() < 1e-13);
    }
    CHECK_THROWS_AS(net.forward(sa, sample_taus<double>(4, 4, Distortion::identity(), rng)), DimensionError);
}

TEST_CASE("quantile TD loss gradients match finite differences") {
    for (int seed = 0; seed < 10; ++seed) {
        auto net = small_net(300 + seed, 4, 12);
        Rng rng(400 + seed);
        QuantileTdBatch<double> batch;
        batch.sa = random_matrix(4, 3, rng);
        batch.reward = Vector<double>::NullaryExpr(3, [&] { return rng.uniform(-1.0, 1.0); });
        batch.not_done = (Vector<double>(3) << 1.0, 0.0, 1.0).finished();
        batch.next_quantiles = random_matrix(5, 3, rng);
        batch.taus = sample_taus<double>(6, 3, Distortion::wang(-0.75), rng);
        auto grads = net.make_gradients();
        quantile_td_loss(net, batch, 0.9, 1.0, &grads);
        auto params = net.parameters();
        auto loss = [&] { return quantile_td_loss(net, batch, 0.9, 1.0); };
        CHECK(nn::finite_difference_error(params, grads.spans(), loss, 1e-6) < 1e-4);
    }
}

TEST_CASE("quantile network input gradient matches finite differences") {
    auto net = small_net(12, 3, 10);
    Rng rng(13);
    Matrix<double> sa = random_matrix(3, 4, rng);
    const Matrix<double> taus = sample_taus<double>(5, 2, Distortion::identity(), rng);
    const Matrix<double> up = random_matrix(5, 4, rng);
    QuantileTrace<double> trace;
    net.forward(sa, taus, trace);
    auto grads = net.make_gradients();
    const Matrix<double> d = net.backward(trace, up, grads);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < sa.size(); ++i) {
        const double keep = sa.data()[i];
        sa.data()[i] = keep + 1e-6;
        const double lp = (up.array() * net.forward(sa, taus).array()).sum();
        sa.data()[i] = keep - 1e-6;
        const double lm = (up.array() * net.forward(sa, taus).array()).sum();
        sa.data()[i] = keep;
        const double numeric = (lp - lm) / 2e-6;
        worst = std::max(worst, std::abs(numeric - d.data()[i]) / std::max({std::abs(numeric), std::abs(d.data()[i]), 1e-6}));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("critic update: exact predictions, terminal masking, overfitting one batch") {
    Rng rng(21);
    QuantileCritic<double> critic(3, 16, 64, 3e-4, rng);
    // Zero head weights and bias r: every quantile predicts r.
    critic.online.head().layer(0).weight.setZero();
    critic.online.head().layer(0).bias.setConstant(0.7);
    QuantileTdBatch<double> batch;
    batch.sa = random_matrix(3, 8, rng);
    batch.reward = Vector<double>::Constant(8, 0.7);
    batch.not_done = Vector<double>::Ones(8);
    batch.next_quantiles = random_matrix(32, 8, rng);
    batch.taus = sample_taus<double>(32, 8, Distortion::identity(), rng);
    auto grads = critic.online.make_gradients();
    CHECK(quantile_td_loss(critic.online, batch, 0.0, 1.0, &grads) == 0.0);
    for (const auto& s : grads.spans()) {
        for (double g : s) CHECK(g == 0.0);
    }

    batch.not_done.setZero();
    auto net = small_net(22);
    const double a = quantile_td_loss(net, batch, 0.99, 1.0);
    batch.next_quantiles = random_matrix(32, 8, rng) * 100.0;
    CHECK(quantile_td_loss(net, batch, 0.99, 1.0) == a);

    Rng r2(23);
    QuantileCritic<double> learner(3, 32, 64, 3e-4, r2);
    batch.not_done.setOnes();
    batch.reward = Vector<double>::NullaryExpr(8, [&] { return r2.normal(); });
    std::vector<double> losses;
    for (int i = 0; i < 100; ++i) losses.push_back(critic_update(learner, batch, 0.9, 1.0));
    CHECK(losses.back() < losses.front());
    int rises = 0;
    for (std::size_t i = 1; i < losses.size(); ++i) rises += losses[i] > losses[i - 1] ? 1 : 0;
    CHECK(rises < 10);
    CHECK(learner.optimizer.steps() == 100);

    batch.reward(0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(critic_update(learner, batch, 0.9, 1.0), NumericalError);
}

TEST_CASE("twin critic: terminal targets, equal targets, overfitting") {
    Rng rng(31);
    TwinQCritic<double> critic(3, 16, 3e-4, rng);
    CHECK(critic.q1.layer(0).weight != critic.q2.layer(0).weight);
    TwinTdBatch<double> batch;
    batch.sa = random_matrix(3, 6, rng);
    batch.reward = Vector<double>::NullaryExpr(6, [&] { return rng.uniform(-1.0, 1.0); });
    batch.not_done = Vector<double>::Zero(6);
    batch.next_q1 = Vector<double>::Constant(6, 50.0);
    batch.next_q2 = Vector<double>::Constant(6, -50.0);

    // Terminal: the loss equals the MSE of each network against r alone.
    const Matrix<double> q1 = critic.q1.forward(batch.sa);
    const Matrix<double> q2 = critic.q2.forward(batch.sa);
    double expected = 0.0;
    for (int c = 0; c < 6; ++c) expected += std::pow(q1(0, c) - batch.reward(c), 2) + std::pow(q2(0, c) - batch.reward(c), 2);
    CHECK(twin_q_loss<double>(critic, batch, 0.99) == doctest::Approx(expected / 6).epsilon(1e-12));

    batch.not_done.setOnes();
    batch.next_q1 = Vector<double>::NullaryExpr(6, [&] { return rng.normal(); });
    batch.next_q2 = batch.next_q1;
    double single = 0.0;
    for (int c = 0; c < 6; ++c) {
        const double y = batch.reward(c) + 0.99 * batch.next_q1(c);
        single += std::pow(q1(0, c) - y, 2) + std::pow(q2(0, c) - y, 2);
    }
    CHECK(twin_q_loss<double>(critic, batch, 0.99) == doctest::Approx(single / 6).epsilon(1e-12));

    auto g1 = critic.q1.make_gradients();
    auto g2 = critic.q2.make_gradients();
    twin_q_loss(critic, batch, 0.99, &g1, &g2);
    std::function<double()> loss1 = [&] { return twin_q_loss<double>(critic, batch, 0.99); };
    CHECK(nn::finite_difference_error(critic.q1.parameters(), std::as_const(g1).spans(), loss1, 1e-6) < 1e-4);

    std::vector<double> losses;
    for (int i = 0; i < 200; ++i) losses.push_back(twin_q_update(critic, batch, 0.99));
    CHECK(losses.back() < 0.9 * losses.front());
    CHECK(std::is_sorted(losses.rbegin(), losses.rend()));
}

TEST_CASE("quantile regression sanity on a tiny problem") {
    // gamma = 0 on one (s, a) with N(0, 1) rewards: the median quantile drifts toward 0 and
    // the 0.1 / 0.9 quantiles separate in the right order.
    Rng rng(41);
    QuantileCritic<float> critic(2, 32, 64, 1e-3, rng);
    QuantileTdBatch<float> batch;
    batch.sa = Matrix<float>::Constant(2, 32, 0.5f);
    batch.not_done = Vector<float>::Zero(32);
    batch.next_quantiles = Matrix<float>::Zero(32, 32);
    for (int step = 0; step < 3000; ++step) {
        batch.reward = Vector<float>::NullaryExpr(32, [&] { return static_cast<float>(rng.normal()); });
        batch.taus = sample_taus<float>(32, 32, Distortion::identity(), rng);
        critic_update(critic, batch, 0.0, 1.0);
    }
    const Vector<float> z = z_values(critic.online, Vector<float>(Vector<float>::Constant(2, 0.5f)), (Vector<float>(3) << 0.1f, 0.5f, 0.9f).finished());
    CHECK(z(0) < z(1));
    CHECK(z(1) < z(2));
    CHECK(std::abs(z(1)) < 0.3);
}
