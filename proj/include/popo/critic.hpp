#pragma once

#include <vector>

#include "popo/distortion.hpp"
#include "popo/nn.hpp"

namespace popo::critic {

using nn::Matrix;
using nn::Vector;

template <typename T>
struct QuantileTrace {
    nn::Trace<T> trunk;
    nn::Trace<T> embedding;
    Matrix<T> taus;
};

template <typename T>
struct QuantileGradients {
    nn::Gradients<T> trunk;
    nn::Gradients<T> embedding;
    nn::Gradients<T> head;

    void set_zero();
    nn::ConstParamList<T> spans() const;
};

/// Implicit quantile network Z_tau(s, a).
///
/// A ReLU trunk embeds (s, a); the quantile level enters through cosine features
/// cos(i * pi * tau), i = 0..E-1, mapped by a ReLU layer to the trunk width and multiplied
/// elementwise into the trunk output. A linear head reads out the quantile value.
///
/// Batches: `sa` is (input_dim x M); `taus` is (K x G) with M a multiple of G, and column m of
/// `sa` is evaluated at the K levels of tau group m / (M / G). The result is (K x M).
template <typename T>
class QuantileNet {
public:
    QuantileNet() = default;
    QuantileNet(int input_dim, int hidden, int cosine_features, Rng& rng);

    Matrix<T> forward(const Matrix<T>& sa, const Matrix<T>& taus) const;
    Matrix<T> forward(const Matrix<T>& sa, const Matrix<T>& taus, QuantileTrace<T>& trace) const;

    /// Accumulates parameter gradients of <upstream, Z> and returns d<upstream, Z>/d sa.
    Matrix<T> backward(const QuantileTrace<T>& trace, const Matrix<T>& upstream, QuantileGradients<T>& grads) const;

    QuantileGradients<T> make_gradients() const;
    nn::ParamList<T> parameters();
    nn::ConstParamList<T> parameters() const;

    int input_dim() const { return trunk_.input_dim(); }
    int hidden() const { return trunk_.output_dim(); }
    int cosine_features() const { return embedding_.input_dim(); }

    nn::DenseNet<T>& trunk() { return trunk_; }
    nn::DenseNet<T>& embedding() { return embedding_; }
    nn::DenseNet<T>& head() { return head_; }
    const nn::DenseNet<T>& trunk() const { return trunk_; }
    const nn::DenseNet<T>& embedding() const { return embedding_; }
    const nn::DenseNet<T>& head() const { return head_; }

    template <typename U>
    QuantileNet<U> cast() const {
        QuantileNet<U> out;
        out.trunk() = trunk_.template cast<U>();
        out.embedding() = embedding_.template cast<U>();
        out.head() = head_.template cast<U>();
        return out;
    }

private:
    Matrix<T> cosine(const Matrix<T>& taus) const;
    void check(const Matrix<T>& sa, const Matrix<T>& taus) const;

    nn::DenseNet<T> trunk_;
    nn::DenseNet<T> embedding_;
    nn::DenseNet<T> head_;
};

/// Online/target pair of quantile networks with the online network's optimizer.
template <typename T>
struct QuantileCritic {
    QuantileNet<T> online;
    QuantileNet<T> target;
    nn::Adam<T> optimizer;

    QuantileCritic() = default;
    QuantileCritic(int input_dim, int hidden, int cosine_features, double learning_rate, Rng& rng);
};

/// Two independent Q(s, a) networks with their targets, as in clipped double-Q learning.
template <typename T>
struct TwinQCritic {
    nn::DenseNet<T> q1, q2;
    nn::DenseNet<T> q1_target, q2_target;
    nn::Adam<T> optimizer;

    TwinQCritic() = default;
    TwinQCritic(int input_dim, int hidden, double learning_rate, Rng& rng);

    nn::ParamList<T> parameters();
    nn::ParamList<T> target_parameters();
};

/// (K x G) matrix of levels beta(u), u ~ U(0,1), drawn column by column from `rng`.
template <typename T>
Matrix<T> sample_taus(int k, int groups, const Distortion& beta, Rng& rng);

/// z_values: quantile predictions at `taus` for a single (s, a).
template <typename T>
Vector<T> z_values(const QuantileNet<T>& net, const Vector<T>& sa, const Vector<T>& taus);

/// Q_beta(s, a): mean over K levels beta(u_k) of Z at those levels.
template <typename T>
double q_beta(const QuantileNet<T>& net, const Vector<T>& sa, const Distortion& beta, int k, Rng& rng);

/// Column means of forward(sa, taus): batched distorted expectation for pre-distorted taus.
template <typename T>
Vector<T> distorted_mean(const QuantileNet<T>& net, const Matrix<T>& sa, const Matrix<T>& taus);

/// Huber function L_kappa.
double huber(double x, double kappa);

/// rho^kappa_tau(x) = |tau - 1{x < 0}| L_kappa(x) / kappa.
double quantile_huber_element(double x, double tau, double kappa);

/// (1/N') sum_i sum_j rho^kappa_{tau_i}(deltas(i, j)) for an N x N' delta matrix.
double quantile_huber(const Matrix<double>& deltas, const std::vector<double>& taus, double kappa);

/// Inputs of one quantile TD update. Columns index transitions.
template <typename T>
struct QuantileTdBatch {
    Matrix<T> sa;              // (obs + act) x B
    Vector<T> reward;          // B
    Vector<T> not_done;        // B; 0 on terminal transitions
    Matrix<T> next_quantiles;  // N' x B; target-network Z at the next state, treated as constants
    Matrix<T> taus;            // N x B; levels at which the online network is evaluated
};

/// Batch mean of the per-transition quantile Huber loss; optionally accumulates its gradient.
template <typename T>
double quantile_td_loss(const QuantileNet<T>& net, const QuantileTdBatch<T>& batch, double gamma, double kappa,
                        QuantileGradients<T>* grads = nullptr);

/// One Adam step on the online network. Returns the pre-step loss.
template <typename T>
double critic_update(QuantileCritic<T>& critic, const QuantileTdBatch<T>& batch, double gamma, double kappa);

template <typename T>
struct TwinTdBatch {
    Matrix<T> sa;
    Vector<T> reward;
    Vector<T> not_done;
    Vector<T> next_q1;  // target Q1'(s', a')
    Vector<T> next_q2;  // target Q2'(s', a')
};

/// Sum over both networks of the mean squared error against r + gamma (1 - d) min(Q1', Q2').
template <typename T>
double twin_q_loss(const TwinQCritic<T>& critic, const TwinTdBatch<T>& batch, double gamma,
                   nn::Gradients<T>* g1 = nullptr, nn::Gradients<T>* g2 = nullptr);

template <typename T>
double twin_q_update(TwinQCritic<T>& critic, const TwinTdBatch<T>& batch, double gamma);

}  // namespace popo::critic
