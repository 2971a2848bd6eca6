#include "popo/critic.hpp"

#include <cmath>
#include <numbers>
#include <utility>

namespace popo::critic {

template <typename T>
void QuantileGradients<T>::set_zero() {
    trunk.set_zero();
    embedding.set_zero();
    head.set_zero();
}

template <typename T>
nn::ConstParamList<T> QuantileGradients<T>::spans() const {
    auto out = trunk.spans();
    nn::append(out, embedding.spans());
    nn::append(out, head.spans());
    return out;
}

template <typename T>
QuantileNet<T>::QuantileNet(int input_dim, int hidden, int cosine_features, Rng& rng)
    : trunk_(nn::DenseNet<T>::uniform_init({input_dim, hidden, hidden},
                                           {nn::Activation::relu, nn::Activation::relu}, rng)),
      embedding_(nn::DenseNet<T>::uniform_init({cosine_features, hidden}, {nn::Activation::relu}, rng)),
      head_(nn::DenseNet<T>::uniform_init({hidden, 1}, {nn::Activation::identity}, rng)) {}

template <typename T>
void QuantileNet<T>::check(const Matrix<T>& sa, const Matrix<T>& taus) const {
    if (sa.rows() != trunk_.input_dim()) {
        throw DimensionError("critic input has " + std::to_string(sa.rows()) + " rows, expected " +
                             std::to_string(trunk_.input_dim()));
    }
    if (taus.cols() < 1 || taus.rows() < 1 || sa.cols() % taus.cols() != 0) {
        throw DimensionError("tau groups must evenly divide the batch");
    }
    for (Eigen::Index i = 0; i < taus.size(); ++i) {
        const double t = static_cast<double>(taus.data()[i]);
        if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("quantile levels must lie in [0, 1]");
    }
}

template <typename T>
Matrix<T> QuantileNet<T>::cosine(const Matrix<T>& taus) const {
    const int features = embedding_.input_dim();
    Matrix<T> c(features, taus.size());
    for (Eigen::Index col = 0; col < taus.size(); ++col) {
        // cos(i x) by the Chebyshev recurrence.
        const double x = std::numbers::pi * static_cast<double>(taus.data()[col]);
        const double c1 = std::cos(x);
        double prev = 1.0, cur = c1;
        c(0, col) = T(1);
        if (features > 1) c(1, col) = static_cast<T>(c1);
        for (int i = 2; i < features; ++i) {
            const double next = 2.0 * c1 * cur - prev;
            prev = cur;
            cur = next;
            c(i, col) = static_cast<T>(cur);
        }
    }
    return c;
}

template <typename T>
Matrix<T> QuantileNet<T>::forward(const Matrix<T>& sa, const Matrix<T>& taus) const {
    QuantileTrace<T> trace;
    return forward(sa, taus, trace);
}

template <typename T>
Matrix<T> QuantileNet<T>::forward(const Matrix<T>& sa, const Matrix<T>& taus, QuantileTrace<T>& trace) const {
    check(sa, taus);
    const Eigen::Index k = taus.rows();
    const Eigen::Index groups = taus.cols();
    const Eigen::Index group_size = sa.cols() / groups;
    const Matrix<T> h = trunk_.forward(sa, trace.trunk);
    const Matrix<T> phi = embedding_.forward(cosine(taus), trace.embedding);
    trace.taus = taus;

    const auto w = head_.layer(0).weight.row(0).transpose();
    const T bias = head_.layer(0).bias(0);
    const Matrix<T> hw = w.asDiagonal() * h;
    Matrix<T> z(k, sa.cols());
    for (Eigen::Index g = 0; g < groups; ++g) {
        z.middleCols(g * group_size, group_size).noalias() =
            phi.middleCols(g * k, k).transpose() * hw.middleCols(g * group_size, group_size);
    }
    z.array() += bias;
    return z;
}

template <typename T>
Matrix<T> QuantileNet<T>::backward(const QuantileTrace<T>& trace, const Matrix<T>& upstream,
                                   QuantileGradients<T>& grads) const {
    const Matrix<T>& h = trace.trunk.activations.back();
    const Matrix<T>& phi = trace.embedding.activations.back();
    const Eigen::Index k = trace.taus.rows();
    const Eigen::Index groups = trace.taus.cols();
    if (upstream.rows() != k || upstream.cols() != h.cols()) {
        throw DimensionError("quantile upstream gradient has the wrong shape");
    }
    if (grads.head.weight.empty()) grads = make_gradients();
    const Eigen::Index group_size = h.cols() / groups;
    const Vector<T> w = head_.layer(0).weight.row(0).transpose();

    Matrix<T> dh(h.rows(), h.cols());
    Matrix<T> dphi(phi.rows(), phi.cols());
    Vector<T> dw = Vector<T>::Zero(w.size());
    for (Eigen::Index g = 0; g < groups; ++g) {
        const auto phi_g = phi.middleCols(g * k, k);
        const auto up_g = upstream.middleCols(g * group_size, group_size);
        const Matrix<T> a = h.middleCols(g * group_size, group_size) * up_g.transpose();  // hidden x K
        dphi.middleCols(g * k, k) = w.asDiagonal() * a;
        dw += phi_g.cwiseProduct(a).rowwise().sum();
        dh.middleCols(g * group_size, group_size).noalias() = w.asDiagonal() * (phi_g * up_g);
    }
    grads.head.weight[0].row(0) += dw.transpose();
    grads.head.bias[0](0) += upstream.sum();
    embedding_.backward(trace.embedding, dphi, grads.embedding);
    return trunk_.backward(trace.trunk, dh, grads.trunk);
}

template <typename T>
QuantileGradients<T> QuantileNet<T>::make_gradients() const {
    return {trunk_.make_gradients(), embedding_.make_gradients(), head_.make_gradients()};
}

template <typename T>
nn::ParamList<T> QuantileNet<T>::parameters() {
    auto out = trunk_.parameters();
    nn::append(out, embedding_.parameters());
    nn::append(out, head_.parameters());
    return out;
}

template <typename T>
nn::ConstParamList<T> QuantileNet<T>::parameters() const {
    auto out = trunk_.parameters();
    nn::append(out, embedding_.parameters());
    nn::append(out, head_.parameters());
    return out;
}

template <typename T>
QuantileCritic<T>::QuantileCritic(int input_dim, int hidden, int cosine_features, double learning_rate, Rng& rng)
    : online(input_dim, hidden, cosine_features, rng), target(online) {
    optimizer = nn::Adam<T>({.learning_rate = learning_rate}, nn::as_const(online.parameters()));
}

template <typename T>
TwinQCritic<T>::TwinQCritic(int input_dim, int hidden, double learning_rate, Rng& rng) {
    const std::vector<nn::Activation> acts{nn::Activation::relu, nn::Activation::relu, nn::Activation::identity};
    q1 = nn::DenseNet<T>::uniform_init({input_dim, hidden, hidden, 1}, acts, rng);
    q2 = nn::DenseNet<T>::uniform_init({input_dim, hidden, hidden, 1}, acts, rng);
    q1_target = q1;
    q2_target = q2;
    optimizer = nn::Adam<T>({.learning_rate = learning_rate}, nn::as_const(parameters()));
}

template <typename T>
nn::ParamList<T> TwinQCritic<T>::parameters() {
    auto out = q1.parameters();
    nn::append(out, q2.parameters());
    return out;
}

template <typename T>
nn::ParamList<T> TwinQCritic<T>::target_parameters() {
    auto out = q1_target.parameters();
    nn::append(out, q2_target.parameters());
    return out;
}

template <typename T>
Matrix<T> sample_taus(int k, int groups, const Distortion& beta, Rng& rng) {
    Matrix<T> taus(k, groups);
    for (int g = 0; g < groups; ++g) {
        for (int i = 0; i < k; ++i) taus(i, g) = static_cast<T>(beta(rng.uniform()));
    }
    return taus;
}

template <typename T>
Vector<T> z_values(const QuantileNet<T>& net, const Vector<T>& sa, const Vector<T>& taus) {
    const Matrix<T> z = net.forward(Matrix<T>(sa), Matrix<T>(taus));
    return z.col(0);
}

template <typename T>
double q_beta(const QuantileNet<T>& net, const Vector<T>& sa, const Distortion& beta, int k, Rng& rng) {
    if (k < 1) throw ConfigError("q_beta needs at least one sample");
    const Matrix<T> taus = sample_taus<T>(k, 1, beta, rng);
    return static_cast<double>(distorted_mean(net, Matrix<T>(sa), taus)(0));
}

template <typename T>
Vector<T> distorted_mean(const QuantileNet<T>& net, const Matrix<T>& sa, const Matrix<T>& taus) {
    const Matrix<T> z = net.forward(sa, taus);
    Vector<T> out(z.cols());
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
        double sum = 0.0;
        for (Eigen::Index r = 0; r < z.rows(); ++r) sum += static_cast<double>(z(r, c));
        out(c) = static_cast<T>(sum / static_cast<double>(z.rows()));
    }
    return out;
}

double huber(double x, double kappa) {
    const double ax = std::abs(x);
    return ax <= kappa ? 0.5 * x * x : kappa * (ax - 0.5 * kappa);
}

double quantile_huber_element(double x, double tau, double kappa) {
    return std::abs(tau - (x < 0.0 ? 1.0 : 0.0)) * huber(x, kappa) / kappa;
}

namespace {

// d rho / d x
double quantile_huber_slope(double x, double tau, double kappa) {
    const double dl = std::abs(x) <= kappa ? x : (x > 0.0 ? kappa : -kappa);
    return std::abs(tau - (x < 0.0 ? 1.0 : 0.0)) * dl / kappa;
}

}  // namespace

double quantile_huber(const Matrix<double>& deltas, const std::vector<double>& taus, double kappa) {
    if (!(kappa > 0.0)) throw ConfigError("kappa must be positive");
    if (static_cast<std::size_t>(deltas.rows()) != taus.size()) throw DimensionError("one tau per delta row required");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < deltas.rows(); ++i) {
        for (Eigen::Index j = 0; j < deltas.cols(); ++j) {
            const double x = deltas(i, j);
            if (!std::isfinite(x)) throw NumericalError("non-finite TD error in quantile loss");
            sum += quantile_huber_element(x, taus[static_cast<std::size_t>(i)], kappa);
        }
    }
    return sum / static_cast<double>(deltas.cols());
}

template <typename T>
double quantile_td_loss(const QuantileNet<T>& net, const QuantileTdBatch<T>& batch, double gamma, double kappa,
                        QuantileGradients<T>* grads) {
    if (!(kappa > 0.0)) throw ConfigError("kappa must be positive");
    const Eigen::Index b = batch.sa.cols();
    if (batch.taus.cols() != b || batch.next_quantiles.cols() != b || batch.reward.size() != b ||
        batch.not_done.size() != b) {
        throw DimensionError("quantile TD batch columns disagree");
    }
    QuantileTrace<T> trace;
    const Matrix<T> z = net.forward(batch.sa, batch.taus, trace);
    const Eigen::Index n = z.rows();
    const Eigen::Index n_next = batch.next_quantiles.rows();
    Matrix<T> dz(n, b);
    double total = 0.0;
    std::vector<double> targets(static_cast<std::size_t>(n_next));
    for (Eigen::Index c = 0; c < b; ++c) {
        const double discount = gamma * static_cast<double>(batch.not_done(c));
        for (Eigen::Index j = 0; j < n_next; ++j) {
            targets[static_cast<std::size_t>(j)] =
                static_cast<double>(batch.reward(c)) +
                (discount == 0.0 ? 0.0 : discount * static_cast<double>(batch.next_quantiles(j, c)));
        }
        double sample = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double zi = static_cast<double>(z(i, c));
            const double tau = static_cast<double>(batch.taus(i, c));
            double slope = 0.0;
            for (double y : targets) {
                const double delta = y - zi;
                sample += quantile_huber_element(delta, tau, kappa);
                slope += quantile_huber_slope(delta, tau, kappa);
            }
            dz(i, c) = static_cast<T>(-slope / static_cast<double>(n_next) / static_cast<double>(b));
        }
        total += sample / static_cast<double>(n_next);
    }
    const double loss = total / static_cast<double>(b);
    if (!std::isfinite(loss)) throw NumericalError("critic loss is not finite");
    if (grads) net.backward(trace, dz, *grads);
    return loss;
}

template <typename T>
double critic_update(QuantileCritic<T>& critic, const QuantileTdBatch<T>& batch, double gamma, double kappa) {
    auto grads = critic.online.make_gradients();
    const double loss = quantile_td_loss(critic.online, batch, gamma, kappa, &grads);
    critic.optimizer.step(critic.online.parameters(), grads.spans());
    return loss;
}

template <typename T>
double twin_q_loss(const TwinQCritic<T>& critic, const TwinTdBatch<T>& batch, double gamma, nn::Gradients<T>* g1,
                   nn::Gradients<T>* g2) {
    const Eigen::Index b = batch.sa.cols();
    if (batch.reward.size() != b || batch.not_done.size() != b || batch.next_q1.size() != b ||
        batch.next_q2.size() != b) {
        throw DimensionError("twin TD batch columns disagree");
    }
    nn::Trace<T> t1, t2;
    const Matrix<T> q1 = critic.q1.forward(batch.sa, t1);
    const Matrix<T> q2 = critic.q2.forward(batch.sa, t2);
    Matrix<T> d1(1, b), d2(1, b);
    double l1 = 0.0, l2 = 0.0;
    for (Eigen::Index c = 0; c < b; ++c) {
        const double next = std::min(static_cast<double>(batch.next_q1(c)), static_cast<double>(batch.next_q2(c)));
        const double discount = gamma * static_cast<double>(batch.not_done(c));
        const double y = static_cast<double>(batch.reward(c)) + (discount == 0.0 ? 0.0 : discount * next);
        const double e1 = static_cast<double>(q1(0, c)) - y;
        const double e2 = static_cast<double>(q2(0, c)) - y;
        l1 += e1 * e1;
        l2 += e2 * e2;
        d1(0, c) = static_cast<T>(2.0 * e1 / static_cast<double>(b));
        d2(0, c) = static_cast<T>(2.0 * e2 / static_cast<double>(b));
    }
    const double loss = (l1 + l2) / static_cast<double>(b);
    if (!std::isfinite(loss)) throw NumericalError("twin critic loss is not finite");
    if (g1) critic.q1.backward(t1, d1, *g1);
    if (g2) critic.q2.backward(t2, d2, *g2);
    return loss;
}

template <typename T>
double twin_q_update(TwinQCritic<T>& critic, const TwinTdBatch<T>& batch, double gamma) {
    auto g1 = critic.q1.make_gradients();
    auto g2 = critic.q2.make_gradients();
    const double loss = twin_q_loss(critic, batch, gamma, &g1, &g2);
    auto grads = std::as_const(g1).spans();
    nn::append(grads, std::as_const(g2).spans());
    critic.optimizer.step(critic.parameters(), grads);
    return loss;
}

#define POPO_CRITIC_INSTANTIATE(T)                                                                             \
    template struct QuantileGradients<T>;                                                                      \
    template class QuantileNet<T>;                                                                             \
    template struct QuantileCritic<T>;                                                                         \
    template struct TwinQCritic<T>;                                                                            \
    template Matrix<T> sample_taus<T>(int, int, const Distortion&, Rng&);                                     \
    template Vector<T> z_values<T>(const QuantileNet<T>&, const Vector<T>&, const Vector<T>&);                \
    template double q_beta<T>(const QuantileNet<T>&, const Vector<T>&, const Distortion&, int, Rng&);         \
    template Vector<T> distorted_mean<T>(const QuantileNet<T>&, const Matrix<T>&, const Matrix<T>&);          \
    template double quantile_td_loss<T>(const QuantileNet<T>&, const QuantileTdBatch<T>&, double, double,     \
                                        QuantileGradients<T>*);                                                \
    template double critic_update<T>(QuantileCritic<T>&, const QuantileTdBatch<T>&, double, double);         \
    template double twin_q_loss<T>(const TwinQCritic<T>&, const TwinTdBatch<T>&, double, nn::Gradients<T>*,  \
                                   nn::Gradients<T>*);                                                         \
    template double twin_q_update<T>(TwinQCritic<T>&, const TwinTdBatch<T>&, double);

POPO_CRITIC_INSTANTIATE(float)
POPO_CRITIC_INSTANTIATE(double)

}  // namespace popo::critic
