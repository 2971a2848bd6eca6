#include "popo/vae.hpp"

#include <algorithm>
#include <cmath>

namespace popo::vae {

template <typename T>
nn::ConstParamList<T> VaeGradients<T>::spans() const {
    auto out = encoder.spans();
    nn::append(out, decoder.spans());
    return out;
}

template <typename T>
ConditionalVae<T>::ConditionalVae(int obs_dim, int act_dim, int hidden, double max_action, double learning_rate,
                                  Rng& rng) {
    if (obs_dim < 1 || act_dim < 1 || hidden < 1) throw DimensionError("VAE dimensions must be positive");
    if (!(max_action > 0.0)) throw ConfigError("max_action must be positive");
    using nn::Activation;
    const int latent = 2 * act_dim;
    auto enc = nn::DenseNet<T>::uniform_init({obs_dim + act_dim, hidden, hidden, 2 * latent},
                                             {Activation::relu, Activation::relu, Activation::identity}, rng);
    auto dec = nn::DenseNet<T>::uniform_init({obs_dim + latent, hidden, hidden, act_dim},
                                             {Activation::relu, Activation::relu, Activation::tanh}, rng);
    assign(obs_dim, act_dim, max_action, std::move(enc), std::move(dec));
    optimizer_ = nn::Adam<T>({.learning_rate = learning_rate}, nn::as_const(parameters()));
}

template <typename T>
void ConditionalVae<T>::assign(int obs_dim, int act_dim, double max_action, nn::DenseNet<T> encoder,
                               nn::DenseNet<T> decoder) {
    const int latent = 2 * act_dim;
    if (encoder.input_dim() != obs_dim + act_dim || encoder.output_dim() != 2 * latent) {
        throw DimensionError("encoder shape does not match (obs, act) -> (mu, log sigma)");
    }
    if (decoder.input_dim() != obs_dim + latent || decoder.output_dim() != act_dim) {
        throw DimensionError("decoder shape does not match (obs, z) -> action");
    }
    obs_dim_ = obs_dim;
    act_dim_ = act_dim;
    max_action_ = max_action;
    encoder_ = std::move(encoder);
    decoder_ = std::move(decoder);
    optimizer_ = nn::Adam<T>({}, nn::as_const(parameters()));
}

namespace {
template <typename T>
Matrix<T> stack(const Matrix<T>& top, const Matrix<T>& bottom) {
    if (top.cols() != bottom.cols()) throw DimensionError("stacked inputs have different batch sizes");
    Matrix<T> out(top.rows() + bottom.rows(), top.cols());
    out.topRows(top.rows()) = top;
    out.bottomRows(bottom.rows()) = bottom;
    return out;
}
}  // namespace

template <typename T>
Encoding<T> ConditionalVae<T>::encode(const Matrix<T>& obs, const Matrix<T>& act) const {
    if (obs.rows() != obs_dim_ || act.rows() != act_dim_) throw DimensionError("VAE encode: (s, a) dimension mismatch");
    const Matrix<T> out = encoder_.forward(stack(obs, act));
    const int l = latent_dim();
    Encoding<T> e;
    e.mu = out.topRows(l);
    e.log_sigma = out.bottomRows(l).cwiseMax(T(kLogSigmaMin)).cwiseMin(T(kLogSigmaMax));
    e.sigma = e.log_sigma.array().exp().matrix();
    return e;
}

template <typename T>
Matrix<T> ConditionalVae<T>::decode(const Matrix<T>& obs, const Matrix<T>& z) const {
    if (obs.rows() != obs_dim_ || z.rows() != latent_dim()) throw DimensionError("VAE decode: (s, z) dimension mismatch");
    return decoder_.forward(stack(obs, z)) * static_cast<T>(max_action_);
}

template <typename T>
Matrix<T> ConditionalVae<T>::sample_latent(Eigen::Index cols, Rng& rng, double latent_clip) const {
    Matrix<T> z(latent_dim(), cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (int r = 0; r < latent_dim(); ++r) z(r, c) = static_cast<T>(std::clamp(rng.normal(), -latent_clip, latent_clip));
    }
    return z;
}

template <typename T>
Matrix<T> ConditionalVae<T>::decode(const Matrix<T>& obs, Rng& rng, double latent_clip) const {
    return decode(obs, sample_latent(obs.cols(), rng, latent_clip));
}

template <typename T>
nn::ParamList<T> ConditionalVae<T>::parameters() {
    auto out = encoder_.parameters();
    nn::append(out, decoder_.parameters());
    return out;
}

template <typename T>
nn::ConstParamList<T> ConditionalVae<T>::parameters() const {
    auto out = encoder_.parameters();
    nn::append(out, decoder_.parameters());
    return out;
}

template <typename T>
VaeGradients<T> ConditionalVae<T>::make_gradients() const {
    return {encoder_.make_gradients(), decoder_.make_gradients()};
}

template <typename T>
VaeLosses vae_loss(const ConditionalVae<T>& vae, const Matrix<T>& obs, const Matrix<T>& act, const Matrix<T>& noise,
                   VaeGradients<T>* grads) {
    const Eigen::Index b = obs.cols();
    const int l = vae.latent_dim();
    if (b < 1) throw DimensionError("VAE loss needs a nonempty batch");
    if (obs.rows() != vae.obs_dim() || act.rows() != vae.act_dim() || act.cols() != b) {
        throw DimensionError("VAE loss: (s, a) dimension mismatch");
    }
    if (noise.rows() != l || noise.cols() != b) throw DimensionError("VAE loss: noise must be latent x batch");

    nn::Trace<T> enc_trace, dec_trace;
    const Matrix<T> enc_out = vae.encoder().forward(stack(obs, act), enc_trace);
    const Matrix<T> mu = enc_out.topRows(l);
    const Matrix<T> raw_log_sigma = enc_out.bottomRows(l);
    const Matrix<T> log_sigma = raw_log_sigma.cwiseMax(T(kLogSigmaMin)).cwiseMin(T(kLogSigmaMax));
    const Matrix<T> sigma = log_sigma.array().exp().matrix();
    const Matrix<T> z = mu + sigma.cwiseProduct(noise);
    const Matrix<T> squashed = vae.decoder().forward(stack(obs, z), dec_trace);
    const T scale = static_cast<T>(vae.max_action());
    const Matrix<T> recon = squashed * scale;

    const double n_entries = static_cast<double>(act.size());
    double sq = 0.0;
    for (Eigen::Index i = 0; i < act.size(); ++i) {
        const double e = static_cast<double>(act.data()[i]) - static_cast<double>(recon.data()[i]);
        sq += e * e;
    }
    double kl_sum = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        const double m = mu.data()[i], ls = log_sigma.data()[i], s = sigma.data()[i];
        kl_sum += 0.5 * (s * s + m * m - 1.0 - 2.0 * ls);
    }
    VaeLosses losses;
    losses.reconstruction = sq / n_entries;
    losses.kl = kl_sum / static_cast<double>(b);
    losses.total = losses.reconstruction + 0.5 * losses.kl;
    if (!std::isfinite(losses.total)) throw NumericalError("VAE loss is not finite");

    if (grads) {
        if (grads->encoder.weight.empty()) *grads = vae.make_gradients();
        // d total / d squashed
        Matrix<T> d_out = ((recon - act) * static_cast<T>(2.0 / n_entries)) * scale;
        const Matrix<T> d_in = vae.decoder().backward(dec_trace, d_out, grads->decoder);
        const Matrix<T> dz = d_in.bottomRows(l);
        const T kl_weight = static_cast<T>(0.5 / static_cast<double>(b));  // 0.5 * (1/B)
        Matrix<T> d_enc(2 * l, b);
        d_enc.topRows(l) = dz + mu * kl_weight;
        Matrix<T> d_log_sigma = dz.cwiseProduct(sigma).cwiseProduct(noise) +
                                (sigma.array().square() - T(1)).matrix() * kl_weight;
        for (Eigen::Index i = 0; i < d_log_sigma.size(); ++i) {
            const T raw = raw_log_sigma.data()[i];
            if (raw < T(kLogSigmaMin) || raw > T(kLogSigmaMax)) d_log_sigma.data()[i] = T(0);
        }
        d_enc.bottomRows(l) = d_log_sigma;
        vae.encoder().backward(enc_trace, d_enc, grads->encoder);
    }
    return losses;
}

template <typename T>
VaeLosses vae_update(ConditionalVae<T>& vae, const Matrix<T>& obs, const Matrix<T>& act, Rng& rng) {
    Matrix<T> noise(vae.latent_dim(), obs.cols());
    for (Eigen::Index c = 0; c < noise.cols(); ++c) {
        for (Eigen::Index r = 0; r < noise.rows(); ++r) noise(r, c) = static_cast<T>(rng.normal());
    }
    auto grads = vae.make_gradients();
    const VaeLosses losses = vae_loss(vae, obs, act, noise, &grads);
    vae.optimizer().step(vae.parameters(), grads.spans());
    return losses;
}

template struct VaeGradients<float>;
template struct VaeGradients<double>;
template class ConditionalVae<float>;
template class ConditionalVae<double>;
template VaeLosses vae_loss<float>(const ConditionalVae<float>&, const Matrix<float>&, const Matrix<float>&,
                                   const Matrix<float>&, VaeGradients<float>*);
template VaeLosses vae_loss<double>(const ConditionalVae<double>&, const Matrix<double>&, const Matrix<double>&,
                                    const Matrix<double>&, VaeGradients<double>*);
template VaeLosses vae_update<float>(ConditionalVae<float>&, const Matrix<float>&, const Matrix<float>&, Rng&);
template VaeLosses vae_update<double>(ConditionalVae<double>&, const Matrix<double>&, const Matrix<double>&, Rng&);

}  // namespace popo::vae
