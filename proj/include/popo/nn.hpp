#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "popo/common.hpp"

namespace popo::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Flat views over every parameter tensor of a model, in a fixed order.
template <typename T>
using ParamList = std::vector<std::span<T>>;
template <typename T>
using ConstParamList = std::vector<std::span<const T>>;

enum class Activation { identity, relu, tanh };

std::string to_string(Activation activation);
Activation parse_activation(std::string_view name);

template <typename T>
struct DenseLayer {
    Matrix<T> weight;  // out x in
    Vector<T> bias;    // out
    Activation activation = Activation::identity;
};

/// Per-layer activations recorded by a forward pass; entry 0 is the input batch.
template <typename T>
struct Trace {
    std::vector<Matrix<T>> activations;
};

template <typename T>
struct Gradients {
    std::vector<Matrix<T>> weight;
    std::vector<Vector<T>> bias;

    void set_zero();
    ParamList<T> spans();
    ConstParamList<T> spans() const;
};

/// Feedforward stack of dense layers. Inputs and outputs are column batches (features x samples).
template <typename T>
class DenseNet {
public:
    DenseNet() = default;

    /// Zero-initialized network. `dims` has one more entry than `activations`.
    DenseNet(const std::vector<int>& dims, const std::vector<Activation>& activations);

    /// Weights and biases uniform in +-1/sqrt(fan_in).
    static DenseNet uniform_init(const std::vector<int>& dims, const std::vector<Activation>& activations,
                                 Rng& rng);

    int input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }
    int output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows()); }
    std::size_t layer_count() const { return layers_.size(); }
    std::vector<int> dims() const;
    std::vector<Activation> activations() const;

    DenseLayer<T>& layer(std::size_t k) { return layers_.at(k); }
    const DenseLayer<T>& layer(std::size_t k) const { return layers_.at(k); }

    Matrix<T> forward(const Matrix<T>& x) const;
    Matrix<T> forward(const Matrix<T>& x, Trace<T>& trace) const;

    /// Reverse-mode pass for the scalar <upstream, forward(x)>. Parameter gradients are
    /// accumulated into `grads`; the gradient with respect to the input batch is returned.
    Matrix<T> backward(const Trace<T>& trace, const Matrix<T>& upstream, Gradients<T>& grads) const;

    Gradients<T> make_gradients() const;

    ParamList<T> parameters();
    ConstParamList<T> parameters() const;
    std::size_t parameter_count() const;

    template <typename U>
    DenseNet<U> cast() const {
        DenseNet<U> out;
        for (const auto& l : layers_) {
            out.push_layer({l.weight.template cast<U>(), l.bias.template cast<U>(), l.activation});
        }
        return out;
    }

    void push_layer(DenseLayer<T> layer);

private:
    void check_input(const Matrix<T>& x) const;

    std::vector<DenseLayer<T>> layers_;
};

struct AdamConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Bias-corrected Adam over a fixed list of parameter tensors.
template <typename T>
class Adam {
public:
    Adam() = default;
    Adam(AdamConfig config, const ConstParamList<T>& params);

    /// Applies one update. Throws NumericalError (and leaves params untouched) on a non-finite gradient.
    void step(const ParamList<T>& params, const ConstParamList<T>& grads);

    /// Gradient ascent variant: the update direction is flipped.
    void ascend(const ParamList<T>& params, const ConstParamList<T>& grads);

    std::int64_t steps() const { return step_; }
    const AdamConfig& config() const { return config_; }
    const std::vector<std::vector<T>>& first_moment() const { return m_; }
    const std::vector<std::vector<T>>& second_moment() const { return v_; }

private:
    void apply(const ParamList<T>& params, const ConstParamList<T>& grads, double sign);

    AdamConfig config_;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
    std::int64_t step_ = 0;
};

/// target <- eta * online + (1 - eta) * target, tensor by tensor.
template <typename T>
void soft_update(const ParamList<T>& target, const ConstParamList<T>& online, double eta);

template <typename T>
ConstParamList<T> as_const(const ParamList<T>& params) {
    return ConstParamList<T>(params.begin(), params.end());
}

template <typename T>
void append(ParamList<T>& dst, ParamList<T> src) {
    dst.insert(dst.end(), src.begin(), src.end());
}

template <typename T>
void append(ConstParamList<T>& dst, ConstParamList<T> src) {
    dst.insert(dst.end(), src.begin(), src.end());
}

bool all_finite(const ConstParamList<double>& values);
bool all_finite(const ConstParamList<float>& values);

/// Worst relative error between `analytic` and central differences of `loss` over every
/// entry of `params`. The denominator is max(|analytic|, |numeric|, 1e-2 * max|analytic|),
/// so entries that are tiny compared with the gradient scale are judged absolutely.
double finite_difference_error(const ParamList<double>& params, const ConstParamList<double>& analytic,
                               const std::function<double()>& loss, double eps);

/// grad_check for a bare network under the loss 0.5 * ||forward(x)||^2.
double grad_check(DenseNet<double>& net, const Matrix<double>& x, double eps);

extern template class DenseNet<float>;
extern template class DenseNet<double>;
extern template class Adam<float>;
extern template class Adam<double>;
extern template struct Gradients<float>;
extern template struct Gradients<double>;

}  // namespace popo::nn
