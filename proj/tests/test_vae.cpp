#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "popo/vae.hpp"

using namespace popo;
using namespace popo::vae;
using nn::Matrix;

namespace {

Matrix<double> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
    Matrix<double> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.uniform(-1.0, 1.0);
    return m;
}

ConditionalVae<double> small_vae(std::uint64_t seed, int obs = 3, int act = 2, int hidden = 16, double max_action = 1.0) {
    Rng rng(seed);
    return ConditionalVae<double>(obs, act, hidden, max_action, 3e-4, rng);
}

void zero_head(nn::DenseNet<double>& net) {
    auto& head = net.layer(net.layer_count() - 1);
    head.weight.setZero();
    head.bias.setZero();
}

}  // namespace

TEST_CASE("zero encoder head gives the standard normal") {
    auto vae = small_vae(1);
    zero_head(vae.encoder());
    Rng rng(2);
    const auto enc = vae.encode(random_matrix(3, 5, rng), random_matrix(2, 5, rng));
    CHECK(enc.mu.cwiseAbs().maxCoeff() == 0.0);
    CHECK(enc.sigma.minCoeff() == 1.0);
    CHECK(enc.sigma.maxCoeff() == 1.0);
}

TEST_CASE("sigma stays positive and log sigma clamped") {
    auto vae = small_vae(3);
    auto& head = vae.encoder().layer(vae.encoder().layer_count() - 1);
    head.weight.setZero();
    head.bias.setConstant(-50.0);
    head.bias(head.bias.size() - 1) = 50.0;
    Rng rng(4);
    const auto enc = vae.encode(random_matrix(3, 4, rng), random_matrix(2, 4, rng));
    CHECK(enc.sigma.minCoeff() > 0.0);
    CHECK(enc.log_sigma.minCoeff() == kLogSigmaMin);
    CHECK(enc.log_sigma.maxCoeff() == kLogSigmaMax);
}

TEST_CASE("encode golden snapshot") {
    auto vae = small_vae(2024, 3, 1, 8);
    Matrix<double> s(3, 1), a(1, 1);
    s << 0.1, -0.2, 0.3;
    a << 0.4;
    const auto enc = vae.encode(s, a);
    const double mu0 = enc.mu(0, 0), mu1 = enc.mu(1, 0), ls0 = enc.log_sigma(0, 0), ls1 = enc.log_sigma(1, 0);
    CHECK(mu0 == doctest::Approx(-0.0865723732566194).epsilon(1e-12));
    CHECK(mu1 == doctest::Approx(0.06431854304285077).epsilon(1e-12));
    CHECK(ls0 == doctest::Approx(-0.10330907025574373).epsilon(1e-12));
    CHECK(ls1 == doctest::Approx(0.21267222704475375).epsilon(1e-12));
}

TEST_CASE("decode: zero head, determinism and the RNG contract") {
    auto vae = small_vae(5, 3, 2, 16, 2.5);
    Rng rng(6);
    const Matrix<double> s = random_matrix(3, 7, rng);
    const Matrix<double> z = random_matrix(4, 7, rng, 0.5);

    CHECK(vae.decode(s, z) == vae.decode(s, z));

    Rng r1(77), r2(77), r3(78);
    const Matrix<double> d1 = vae.decode(s, r1, 0.5), d2 = vae.decode(s, r2, 0.5), d3 = vae.decode(s, r3, 0.5);
    CHECK(d1 == d2);
    CHECK(d1 != d3);

    // sampled latents are clipped to the bound
    Rng r4(9);
    const Matrix<double> lat = vae.sample_latent(2000, r4, 0.5);
    CHECK(lat.cwiseAbs().maxCoeff() <= 0.5);
    CHECK(lat.cwiseAbs().maxCoeff() == 0.5);

    // decoded actions stay inside the action box even for huge latents
    const Matrix<double> far = vae.decode(s, random_matrix(4, 7, rng, 1e3));
    CHECK(far.cwiseAbs().maxCoeff() <= 2.5);

    zero_head(vae.decoder());
    CHECK(vae.decode(s, z).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("vae_loss closed-form cases") {
    SUBCASE("standard normal posterior has zero kl") {
        auto vae = small_vae(8);
        zero_head(vae.encoder());
        Rng rng(1);
        const auto l = vae_loss(vae, random_matrix(3, 6, rng), random_matrix(2, 6, rng), random_matrix(4, 6, rng));
        CHECK(l.kl == 0.0);
        CHECK(l.total == doctest::Approx(l.reconstruction).epsilon(1e-15));
    }
    SUBCASE("perfect reconstruction") {
        auto vae = small_vae(9);
        zero_head(vae.decoder());
        Rng rng(2);
        const auto l = vae_loss(vae, random_matrix(3, 6, rng), Matrix<double>(Matrix<double>::Zero(2, 6)), random_matrix(4, 6, rng));
        CHECK(l.reconstruction == 0.0);
    }
    SUBCASE("mu = (1, 0), sigma = (1, 1)") {
        auto vae = small_vae(10, 3, 1, 8);
        auto& head = vae.encoder().layer(vae.encoder().layer_count() - 1);
        head.weight.setZero();
        head.bias << 1.0, 0.0, 0.0, 0.0;
        Rng rng(3);
        const Matrix<double> s = random_matrix(3, 1, rng), a = random_matrix(1, 1, rng), eps = random_matrix(2, 1, rng);
        const auto l = vae_loss(vae, s, a, eps);
        CHECK(l.kl == doctest::Approx(0.5).epsilon(1e-15));
        // reconstruction is the squared error of the single entry, decoded at z = mu + eps
        Matrix<double> z = eps;
        z(0, 0) += 1.0;
        const double err = a(0, 0) - vae.decode(s, z)(0, 0);
        CHECK(l.reconstruction == doctest::Approx(err * err).epsilon(1e-12));
        CHECK(l.total == doctest::Approx(l.reconstruction + 0.25).epsilon(1e-12));
    }
    SUBCASE("kl is nonnegative") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            auto vae = small_vae(100 + seed);
            Rng rng(seed);
            const auto l = vae_loss(vae, random_matrix(3, 4, rng, 3.0), random_matrix(2, 4, rng), random_matrix(4, 4, rng));
            CHECK(l.kl >= 0.0);
        }
    }
}

TEST_CASE("identical pairs reconstruct identically") {
    auto vae = small_vae(11);
    Matrix<double> s(3, 4), a(2, 4);
    s.colwise() = Eigen::Vector3d(0.3, -0.1, 0.7);
    a.colwise() = Eigen::Vector2d(0.2, -0.5);
    const Matrix<double> eps = Matrix<double>::Zero(4, 4);
    const auto enc = vae.encode(s, a);
    const Matrix<double> recon = vae.decode(s, enc.mu);
    for (Eigen::Index c = 1; c < 4; ++c) CHECK(recon.col(c) == recon.col(0));
    const auto one = vae_loss(vae, Matrix<double>(s.leftCols(1)), Matrix<double>(a.leftCols(1)), Matrix<double>(eps.leftCols(1)));
    const auto all = vae_loss(vae, s, a, eps);
    CHECK(all.reconstruction == doctest::Approx(one.reconstruction).epsilon(1e-14));
    CHECK(all.kl == doctest::Approx(one.kl).epsilon(1e-14));
}

TEST_CASE("vae_loss gradient matches finite differences with fixed noise") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto vae = small_vae(200 + seed);
        Rng rng(seed);
        const Matrix<double> s = random_matrix(3, 5, rng), a = random_matrix(2, 5, rng), eps = random_matrix(4, 5, rng);
        auto grads = vae.make_gradients();
        vae_loss(vae, s, a, eps, &grads);
        std::function<double()> loss = [&] { return vae_loss(vae, s, a, eps).total; };
        const double err = nn::finite_difference_error(vae.parameters(), grads.spans(), loss, 1e-6);
        CAPTURE(seed);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("overfitting one batch lowers the loss") {
    Rng rng(12);
    Rng init(13);
    ConditionalVae<double> vae(3, 2, 32, 1.0, 1e-3, init);
    const Matrix<double> s = random_matrix(3, 16, rng), a = random_matrix(2, 16, rng, 0.8);
    std::vector<double> totals;
    for (int i = 0; i < 200; ++i) totals.push_back(vae_update(vae, s, a, rng).total);
    CHECK(totals.back() < 0.5 * totals.front());
}

TEST_CASE("dimension and batch errors") {
    auto vae = small_vae(14);
    Rng rng(1);
    CHECK_THROWS_AS(vae.encode(random_matrix(2, 3, rng), random_matrix(2, 3, rng)), DimensionError);
    CHECK_THROWS_AS(vae.encode(random_matrix(3, 3, rng), random_matrix(2, 4, rng)), DimensionError);
    CHECK_THROWS_AS(vae.decode(random_matrix(3, 3, rng), random_matrix(3, 3, rng)), DimensionError);
    CHECK_THROWS_AS(vae_loss(vae, Matrix<double>(3, 0), Matrix<double>(2, 0), Matrix<double>(4, 0)), DimensionError);
    CHECK_THROWS_AS(vae_loss(vae, random_matrix(3, 2, rng), random_matrix(2, 2, rng), random_matrix(3, 2, rng)),
                    DimensionError);
    Rng r(2);
    CHECK_THROWS_AS(ConditionalVae<double>(0, 1, 4, 1.0, 1e-3, r), DimensionError);
    CHECK_THROWS_AS(ConditionalVae<double>(2, 1, 4, 0.0, 1e-3, r), ConfigError);
}

TEST_CASE("non-finite input is rejected") {
    auto vae = small_vae(15);
    Rng rng(1);
    Matrix<double> s = random_matrix(3, 2, rng);
    s(0, 0) = std::nan("");
    CHECK_THROWS_AS(vae_loss(vae, s, random_matrix(2, 2, rng), random_matrix(4, 2, rng)), NumericalError);
}
