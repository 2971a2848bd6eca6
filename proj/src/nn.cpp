#include "popo/nn.hpp"

#include <algorithm>
#include <utility>
#include <cmath>

namespace popo::nn {

std::string to_string(Activation activation) {
    switch (activation) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
    }
    return "identity";
}

Activation parse_activation(std::string_view name) {
    if (name == "identity") return Activation::identity;
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

template <typename T>
void Gradients<T>::set_zero() {
    for (auto& w : weight) w.setZero();
    for (auto& b : bias) b.setZero();
}

template <typename T>
ParamList<T> Gradients<T>::spans() {
    ParamList<T> out;
    for (std::size_t k = 0; k < weight.size(); ++k) {
        out.emplace_back(weight[k].data(), static_cast<std::size_t>(weight[k].size()));
        out.emplace_back(bias[k].data(), static_cast<std::size_t>(bias[k].size()));
    }
    return out;
}

template <typename T>
ConstParamList<T> Gradients<T>::spans() const {
    ConstParamList<T> out;
    for (std::size_t k = 0; k < weight.size(); ++k) {
        out.emplace_back(weight[k].data(), static_cast<std::size_t>(weight[k].size()));
        out.emplace_back(bias[k].data(), static_cast<std::size_t>(bias[k].size()));
    }
    return out;
}

template <typename T>
DenseNet<T>::DenseNet(const std::vector<int>& dims, const std::vector<Activation>& activations) {
    if (dims.size() != activations.size() + 1 || activations.empty()) {
        throw DimensionError("network needs one more dimension than activations");
    }
    for (std::size_t k = 0; k < activations.size(); ++k) {
        if (dims[k] < 1 || dims[k + 1] < 1) throw DimensionError("layer dimensions must be positive", int(k));
        push_layer({Matrix<T>::Zero(dims[k + 1], dims[k]), Vector<T>::Zero(dims[k + 1]), activations[k]});
    }
}

template <typename T>
DenseNet<T> DenseNet<T>::uniform_init(const std::vector<int>& dims, const std::vector<Activation>& activations,
                                      Rng& rng) {
    DenseNet net(dims, activations);
    for (auto& l : net.layers_) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
                l.weight(r, c) = static_cast<T>(rng.uniform(-bound, bound));
            }
        }
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = static_cast<T>(rng.uniform(-bound, bound));
    }
    return net;
}

template <typename T>
void DenseNet<T>::push_layer(DenseLayer<T> layer) {
    if (layer.bias.size() != layer.weight.rows()) {
        throw DimensionError("bias length differs from weight rows", int(layers_.size()));
    }
    if (!layers_.empty() && layers_.back().weight.rows() != layer.weight.cols()) {
        throw DimensionError("layer input does not match previous output", int(layers_.size()));
    }
    layers_.push_back(std::move(layer));
}

template <typename T>
std::vector<int> DenseNet<T>::dims() const {
    std::vector<int> out;
    if (layers_.empty()) return out;
    out.push_back(input_dim());
    for (const auto& l : layers_) out.push_back(static_cast<int>(l.weight.rows()));
    return out;
}

template <typename T>
std::vector<Activation> DenseNet<T>::activations() const {
    std::vector<Activation> out;
    for (const auto& l : layers_) out.push_back(l.activation);
    return out;
}

template <typename T>
void DenseNet<T>::check_input(const Matrix<T>& x) const {
    if (layers_.empty()) throw DimensionError("forward through an empty network");
    if (x.rows() != layers_.front().weight.cols()) {
        throw DimensionError("input has " + std::to_string(x.rows()) + " rows, expected " +
                                 std::to_string(layers_.front().weight.cols()),
                             0);
    }
}

namespace {

template <typename T>
void activate(Matrix<T>& y, Activation activation) {
    switch (activation) {
        case Activation::identity: break;
        case Activation::relu: y = y.cwiseMax(T(0)); break;
        case Activation::tanh: y = y.array().tanh().matrix(); break;
    }
}

}  // namespace

template <typename T>
Matrix<T> DenseNet<T>::forward(const Matrix<T>& x) const {
    check_input(x);
    Matrix<T> h = x;
    for (const auto& l : layers_) {
        Matrix<T> y = l.weight * h;
        y.colwise() += l.bias;
        activate(y, l.activation);
        h = std::move(y);
    }
    return h;
}

template <typename T>
Matrix<T> DenseNet<T>::forward(const Matrix<T>& x, Trace<T>& trace) const {
    check_input(x);
    trace.activations.clear();
    trace.activations.reserve(layers_.size() + 1);
    trace.activations.push_back(x);
    for (const auto& l : layers_) {
        Matrix<T> y = l.weight * trace.activations.back();
        y.colwise() += l.bias;
        activate(y, l.activation);
        trace.activations.push_back(std::move(y));
    }
    return trace.activations.back();
}

template <typename T>
Matrix<T> DenseNet<T>::backward(const Trace<T>& trace, const Matrix<T>& upstream, Gradients<T>& grads) const {
    if (trace.activations.size() != layers_.size() + 1) throw DimensionError("trace does not belong to this network");
    const Matrix<T>& out = trace.activations.back();
    if (upstream.rows() != out.rows() || upstream.cols() != out.cols()) {
        throw DimensionError("upstream gradient shape differs from output", int(layers_.size()) - 1);
    }
    if (grads.weight.size() != layers_.size()) grads = make_gradients();
    Matrix<T> delta = upstream;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const auto& l = layers_[i];
        const Matrix<T>& y = trace.activations[i + 1];
        switch (l.activation) {
            case Activation::identity: break;
            case Activation::relu: delta = (y.array() > T(0)).select(delta, T(0)); break;
            case Activation::tanh: delta = (delta.array() * (T(1) - y.array().square())).matrix(); break;
        }
        grads.weight[i].noalias() += delta * trace.activations[i].transpose();
        grads.bias[i] += delta.rowwise().sum();
        delta = l.weight.transpose() * delta;
    }
    return delta;
}

template <typename T>
Gradients<T> DenseNet<T>::make_gradients() const {
    Gradients<T> g;
    for (const auto& l : layers_) {
        g.weight.push_back(Matrix<T>::Zero(l.weight.rows(), l.weight.cols()));
        g.bias.push_back(Vector<T>::Zero(l.bias.size()));
    }
    return g;
}

template <typename T>
ParamList<T> DenseNet<T>::parameters() {
    ParamList<T> out;
    for (auto& l : layers_) {
        out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
        out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    return out;
}

template <typename T>
ConstParamList<T> DenseNet<T>::parameters() const {
    ConstParamList<T> out;
    for (const auto& l : layers_) {
        out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
        out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    return out;
}

template <typename T>
std::size_t DenseNet<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

template <typename T>
Adam<T>::Adam(AdamConfig config, const ConstParamList<T>& params) : config_(config) {
    for (const auto& p : params) {
        m_.emplace_back(p.size(), T(0));
        v_.emplace_back(p.size(), T(0));
    }
}

template <typename T>
void Adam<T>::step(const ParamList<T>& params, const ConstParamList<T>& grads) {
    apply(params, grads, 1.0);
}

template <typename T>
void Adam<T>::ascend(const ParamList<T>& params, const ConstParamList<T>& grads) {
    apply(params, grads, -1.0);
}

template <typename T>
void Adam<T>::apply(const ParamList<T>& params, const ConstParamList<T>& grads, double sign) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw DimensionError("Adam: parameter list does not match optimizer state");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != m_[i].size() || grads[i].size() != m_[i].size()) {
            throw DimensionError("Adam: tensor " + std::to_string(i) + " changed shape");
        }
        for (T g : grads[i]) {
            if (!std::isfinite(static_cast<double>(g))) {
                throw NumericalError("Adam: non-finite gradient in tensor " + std::to_string(i));
            }
        }
    }
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    const double lr = config_.learning_rate;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i];
        auto g = grads[i];
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = sign * static_cast<double>(g[j]);
            const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
            const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + config_.epsilon);
            p[j] = static_cast<T>(static_cast<double>(p[j]) - update);
        }
    }
}

template <typename T>
void soft_update(const ParamList<T>& target, const ConstParamList<T>& online, double eta) {
    if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("soft update rate must lie in (0, 1]");
    if (target.size() != online.size()) throw DimensionError("soft update: parameter lists differ");
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (target[i].size() != online[i].size()) throw DimensionError("soft update: tensor shapes differ");
        for (std::size_t j = 0; j < target[i].size(); ++j) {
            target[i][j] = static_cast<T>(eta * static_cast<double>(online[i][j]) +
                                          (1.0 - eta) * static_cast<double>(target[i][j]));
        }
    }
}

template void soft_update<float>(const ParamList<float>&, const ConstParamList<float>&, double);
template void soft_update<double>(const ParamList<double>&, const ConstParamList<double>&, double);

namespace {
template <typename T>
bool finite_impl(const ConstParamList<T>& values) {
    for (const auto& s : values) {
        for (T x : s) {
            if (!std::isfinite(static_cast<double>(x))) return false;
        }
    }
    return true;
}
}  // namespace

bool all_finite(const ConstParamList<double>& values) { return finite_impl(values); }
bool all_finite(const ConstParamList<float>& values) { return finite_impl(values); }

double finite_difference_error(const ParamList<double>& params, const ConstParamList<double>& analytic,
                               const std::function<double()>& loss, double eps) {
    if (params.size() != analytic.size()) throw DimensionError("gradient list does not match parameters");
    double scale = 0.0;
    for (const auto& g : analytic) {
        for (double x : g) scale = std::max(scale, std::abs(x));
    }
    const double floor = std::max(1e-2 * scale, 1e-12);
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != analytic[i].size()) throw DimensionError("gradient tensor shape differs");
        for (std::size_t j = 0; j < params[i].size(); ++j) {
            const double saved = params[i][j];
            params[i][j] = saved + eps;
            const double up = loss();
            params[i][j] = saved - eps;
            const double down = loss();
            params[i][j] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[i][j];
            const double denom = std::max({std::abs(a), std::abs(numeric), floor});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

double grad_check(DenseNet<double>& net, const Matrix<double>& x, double eps) {
    if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
    Trace<double> trace;
    const Matrix<double> y = net.forward(x, trace);
    auto grads = net.make_gradients();
    net.backward(trace, y, grads);
    auto loss = [&] { return 0.5 * net.forward(x).squaredNorm(); };
    return finite_difference_error(net.parameters(), std::as_const(grads).spans(), loss, eps);
}

template class DenseNet<float>;
template class DenseNet<double>;
template class Adam<float>;
template class Adam<double>;
template struct Gradients<float>;
template struct Gradients<double>;

}  // namespace popo::nn
