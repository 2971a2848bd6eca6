#pragma once

#include "popo/nn.hpp"

namespace popo::vae {

using nn::Matrix;
using nn::Vector;

inline constexpr double kLogSigmaMin = -4.0;
inline constexpr double kLogSigmaMax = 15.0;

template <typename T>
struct Encoding {
    Matrix<T> mu;         // L x B
    Matrix<T> log_sigma;  // L x B, clamped
    Matrix<T> sigma;      // exp(log_sigma)
};

struct VaeLosses {
    double total = 0.0;
    double reconstruction = 0.0;
    double kl = 0.0;
};

template <typename T>
struct VaeGradients {
    nn::Gradients<T> encoder;
    nn::Gradients<T> decoder;
    nn::ConstParamList<T> spans() const;
};

/// Conditional VAE over actions given states. The encoder reads (s, a) and emits the mean and
/// log standard deviation of a diagonal Gaussian over a latent of twice the action dimension;
/// the decoder maps (s, z) back to an action bounded by tanh * max_action.
template <typename T>
class ConditionalVae {
public:
    ConditionalVae() = default;
    ConditionalVae(int obs_dim, int act_dim, int hidden, double max_action, double learning_rate, Rng& rng);

    int obs_dim() const { return obs_dim_; }
    int act_dim() const { return act_dim_; }
    int latent_dim() const { return 2 * act_dim_; }
    double max_action() const { return max_action_; }

    Encoding<T> encode(const Matrix<T>& obs, const Matrix<T>& act) const;

    /// Decodes explicit latents.
    Matrix<T> decode(const Matrix<T>& obs, const Matrix<T>& z) const;

    /// Decodes with z ~ N(0, I) clipped to [-latent_clip, latent_clip], drawn column by column.
    Matrix<T> decode(const Matrix<T>& obs, Rng& rng, double latent_clip) const;

    Matrix<T> sample_latent(Eigen::Index cols, Rng& rng, double latent_clip) const;

    nn::DenseNet<T>& encoder() { return encoder_; }
    nn::DenseNet<T>& decoder() { return decoder_; }
    const nn::DenseNet<T>& encoder() const { return encoder_; }
    const nn::DenseNet<T>& decoder() const { return decoder_; }
    nn::Adam<T>& optimizer() { return optimizer_; }

    nn::ParamList<T> parameters();
    nn::ConstParamList<T> parameters() const;
    VaeGradients<T> make_gradients() const;

    template <typename U>
    ConditionalVae<U> cast() const {
        ConditionalVae<U> out;
        out.assign(obs_dim_, act_dim_, max_action_, encoder_.template cast<U>(), decoder_.template cast<U>());
        return out;
    }

    void assign(int obs_dim, int act_dim, double max_action, nn::DenseNet<T> encoder, nn::DenseNet<T> decoder);

private:
    int obs_dim_ = 0;
    int act_dim_ = 0;
    double max_action_ = 1.0;
    nn::DenseNet<T> encoder_;
    nn::DenseNet<T> decoder_;
    nn::Adam<T> optimizer_;
};

/// Reconstruction is the mean squared error over every action entry, the KL term the batch
/// mean of 0.5 * sum_l (sigma^2 + mu^2 - 1 - 2 log sigma), and total = reconstruction + 0.5 * kl.
/// `noise` (L x B) is the reparameterization draw: z = mu + sigma * noise.
template <typename T>
VaeLosses vae_loss(const ConditionalVae<T>& vae, const Matrix<T>& obs, const Matrix<T>& act, const Matrix<T>& noise,
                   VaeGradients<T>* grads = nullptr);

/// One Adam step on encoder and decoder; returns the pre-step losses.
template <typename T>
VaeLosses vae_update(ConditionalVae<T>& vae, const Matrix<T>& obs, const Matrix<T>& act, Rng& rng);

}  // namespace popo::vae
