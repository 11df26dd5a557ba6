#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "matfield/mtd.hpp"
#include "matfield/nn.hpp"

namespace matfield {

// Numerical guards for the radial flow.
inline constexpr double kFlowEpsAlpha = 1e-6;
inline constexpr double kFlowEpsBeta = 1e-12;
inline constexpr double kFlowEpsR = 1e-8;
inline constexpr double kFlowBhClamp = 30.0;

inline double softplus(double x) {
    return (x > 30.0) ? x : std::log1p(std::exp(x));
}

// Radial flow u -> u + beta h(u) (u - z0), h = 1/(alpha + ||u - z0||).
// alpha > 0 and beta > -alpha hold for any raw values by construction; the
// beta floor keeps the inequality strict when softplus underflows.
struct RadialFlowParams {
    Eigen::Vector2d z0 = Eigen::Vector2d::Zero();
    double log_alpha_raw = 0.0;
    double beta_raw = 0.0;

    double alpha() const { return softplus(log_alpha_raw) + kFlowEpsAlpha; }
    double beta() const { return -alpha() + std::max(softplus(beta_raw), kFlowEpsBeta); }
};

struct FlowResult {
    Eigen::Vector2d z;
    double log_det = 0.0;
};

FlowResult radial_flow(const Eigen::Vector2d& u, const RadialFlowParams& f);

// u = mu + exp(logvar/2) .* eps.
Eigen::Vector2d reparameterize(const Eigen::Vector2d& mu, const Eigen::Vector2d& logvar,
                               const Eigen::Vector2d& eps);

// log q(z|x) by change of variables: Gaussian base density minus log-det.
double posterior_log_density(const Eigen::Vector2d& u, const Eigen::Vector2d& mu,
                             const Eigen::Vector2d& logvar, double log_det);

struct Hyperparams {
    int epochs = 850;
    int batch = 256;
    double lr = 1e-4;
    double lr_final = 1e-5;
    double weight_decay = 1e-4;
    double grad_clip = 5.0;
    int kl_anneal_epochs = 200;
    double dropout = 0.05;
    int hidden = 256;
    // Gaussian-likelihood weight on the reconstruction term
    // (1 / (2 sigma_dec^2)). At weight 1 the minibatch MI/TC estimates can
    // buy back the whole reconstruction variance of [0,1]-normalized data
    // and training settles on an uninformative latent.
    double recon_scale = 100.0;
    std::uint64_t seed = 0;
};

// Eq. 2 weights: recon + gamma MI + beta TC + alpha sum_j max(delta, KL_j).
struct LossWeights {
    double gamma = 1.0;
    double beta = 2.0;
    double alpha = 1.0;
    double free_nats = 0.1;
};

struct LossBreakdown {
    double recon = 0.0;
    double mi = 0.0;
    double tc = 0.0;
    std::array<double, 2> dim_kl{0.0, 0.0};
    double total = 0.0;
    // Effective (annealed) weights the total was assembled with.
    double gamma_eff = 0.0;
    double beta_eff = 0.0;
    double alpha_eff = 0.0;
    double free_nats = 0.1;
};

// total = recon + g*mi + b*tc + a*sum_j max(delta, dim_kl_j); pure arithmetic.
double loss_total_from_parts(double recon, double mi, double tc,
                             const std::array<double, 2>& dim_kl, double gamma_eff,
                             double beta_eff, double alpha_eff, double free_nats);

struct KlDecomposition {
    double mi = 0.0;
    double tc = 0.0;
    std::array<double, 2> dim_kl{0.0, 0.0};
};

// Minibatch-weighted-sampling estimates of the KL decomposition. Columns of
// u/mu/logvar/z are batch samples; log_det per sample; dataset_size is N.
KlDecomposition kl_decomposition(const Eigen::MatrixXd& u, const Eigen::MatrixXd& mu,
                                 const Eigen::MatrixXd& logvar,
                                 const Eigen::VectorXd& log_det, const Eigen::MatrixXd& z,
                                 std::size_t dataset_size);

class MatVaeModel {
public:
    // Freshly initialized model; the normalizer is fitted by train().
    MatVaeModel(int hidden, std::uint64_t init_seed);

    nn::ParamSet params;
    nn::TrunkParams enc_trunk, dec_trunk;
    int enc_w_mu = -1, enc_b_mu = -1, enc_w_lv = -1, enc_b_lv = -1;
    std::array<int, 3> dec_head_w{-1, -1, -1};
    std::array<int, 3> dec_head_b{-1, -1, -1};
    int flow_z0 = -1, flow_raw = -1;  // flow_raw holds (log_alpha_raw, beta_raw)

    Normalizer normalizer;
    bool normalizer_set = false;
    int hidden = 256;
    std::uint64_t seed = 0;
    int epochs_trained = 0;

    RadialFlowParams flow() const;
};

// Eval-mode forwards (no dropout, no sampling). Batch samples are columns.
void matvae_encoder_forward(const MatVaeModel& m, const Eigen::MatrixXd& x,
                            Eigen::MatrixXd& mu, Eigen::MatrixXd& logvar);

struct DecoderCache {
    nn::TrunkCache trunk;
    Eigen::MatrixXd trunk_out;
};

Eigen::MatrixXd matvae_decoder_forward(const MatVaeModel& m, const Eigen::MatrixXd& z,
                                       DecoderCache* cache = nullptr);
// Gradient wrt the decoder input only; model parameters untouched.
Eigen::MatrixXd matvae_decoder_backward_input(const MatVaeModel& m, const DecoderCache& cache,
                                              const Eigen::MatrixXd& d_out);

// Full loss with reverse-mode gradients for every trainable parameter.
// x_norm is the normalized batch (3 x B); eps the reparameterization noise
// (2 x B); masks empty/null in eval mode. epoch drives KL annealing.
LossBreakdown matvae_loss(const MatVaeModel& m, const Eigen::MatrixXd& x_norm,
                          std::size_t dataset_size, const Hyperparams& hyper, int epoch,
                          const Eigen::MatrixXd& eps,
                          const std::vector<Eigen::MatrixXd>* enc_masks,
                          const std::vector<Eigen::MatrixXd>* dec_masks,
                          nn::ParamSet* grads);

double cosine_lr(const Hyperparams& hyper, int epoch);

struct TrainLog {
    std::vector<LossBreakdown> per_epoch;  // batch-mean components
};

MatVaeModel matvae_train(const std::vector<MaterialTriplet>& triplets,
                         const Hyperparams& hyper, TrainLog* log = nullptr);

struct LatentCode {
    Eigen::Vector2d z = Eigen::Vector2d::Zero();
};

// Flowed posterior mean; deterministic.
LatentCode matvae_encode(const MatVaeModel& m, const MaterialTriplet& t);
MaterialTriplet matvae_decode(const MatVaeModel& m, const LatentCode& z);
// Columns of z are latent codes; outputs satisfy the triplet invariants.
std::vector<MaterialTriplet> matvae_decode_batch(const MatVaeModel& m,
                                                 const Eigen::MatrixXd& z);

std::vector<MaterialTriplet> matvae_interpolate(const MatVaeModel& m,
                                                const MaterialTriplet& a,
                                                const MaterialTriplet& b, int steps);

// Independent linear interpolation of the raw properties.
MaterialTriplet naive_interpolate(const MaterialTriplet& a, const MaterialTriplet& b,
                                  double t);

std::vector<MaterialTriplet> matvae_sample_prior(const MatVaeModel& m, std::size_t count,
                                                 std::uint64_t seed);

// Checkpoint I/O; JSON with row-major tensors, exact decimal round-trip.
std::string matvae_to_json(const MatVaeModel& m);
MatVaeModel matvae_from_json(const std::string& text);
void matvae_save(const MatVaeModel& m, const std::string& path);
MatVaeModel matvae_load(const std::string& path);

}  // namespace matfield
