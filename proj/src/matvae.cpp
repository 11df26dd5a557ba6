#include "matfield/matvae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace matfield {

using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 ln(2 pi)
constexpr int kLatentDim = 2;
constexpr double kNuDecodeMax = 0.4999;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct FlowCache {
    Vector2d diff;
    double r0 = 0.0, r = 0.0, h = 0.0, bh = 0.0, a_term = 0.0, b_term = 0.0;
    bool clamped = false;
};

FlowResult flow_forward_one(const Vector2d& u, const Vector2d& z0, double alpha, double beta,
                            FlowCache* cache) {
    FlowCache local;
    FlowCache& c = cache ? *cache : local;
    c.diff = u - z0;
    c.r0 = c.diff.norm();
    c.r = c.r0 + kFlowEpsR;
    c.h = 1.0 / (alpha + c.r);
    c.bh = beta * c.h;
    const double bh_stab = std::clamp(c.bh, -kFlowBhClamp, kFlowBhClamp);
    c.clamped = bh_stab != c.bh;
    c.a_term = 1.0 + bh_stab;
    c.b_term = 1.0 + bh_stab - beta * c.h * c.h * c.r;
    if (!(c.a_term > 0.0) || !(c.b_term > 0.0))
        throw std::runtime_error("radial_flow: non-positive log-det argument");

    FlowResult out;
    out.z = u + c.bh * c.diff;
    out.log_det = static_cast<double>(kLatentDim - 1) * std::log(c.a_term) +
                  std::log(c.b_term);
    if (!out.z.allFinite() || !std::isfinite(out.log_det))
        throw std::runtime_error("radial_flow: non-finite output");
    return out;
}

struct FlowGrads {
    Vector2d du = Vector2d::Zero();
    Vector2d dz0 = Vector2d::Zero();
    double dalpha = 0.0;
    double dbeta = 0.0;
};

FlowGrads flow_backward_one(const FlowCache& c, double alpha, double beta,
                            const Vector2d& gz, double gld) {
    FlowGrads g;
    const double h = c.h, r = c.r;

    // z = u + beta h diff
    g.du = gz;
    const double gz_dot_d = gz.dot(c.diff);
    g.dbeta += h * gz_dot_d;
    double g_h = beta * gz_dot_d;
    Vector2d g_d = c.bh * gz;

    // log_det = (D-1) ln(1 + bh) + ln(1 + bh - beta h^2 r)
    const double c_a = gld * static_cast<double>(kLatentDim - 1) / c.a_term;
    const double c_b = gld / c.b_term;
    const double g_bh = c.clamped ? 0.0 : (c_a + c_b);
    g.dbeta += g_bh * h - c_b * h * h * r;
    g_h += g_bh * beta - c_b * 2.0 * beta * h * r;
    double g_r = -c_b * beta * h * h;

    // h = 1/(alpha + r)
    g.dalpha += g_h * (-h * h);
    g_r += g_h * (-h * h);

    // r = ||diff|| + eps_r
    if (c.r0 > 0.0) g_d += (g_r / c.r0) * c.diff;

    g.du += g_d;
    g.dz0 -= g_d;
    return g;
}

double anneal_ramp(const Hyperparams& hyper, int epoch) {
    if (hyper.kl_anneal_epochs <= 0) return 1.0;
    return std::min(1.0, static_cast<double>(epoch) /
                             static_cast<double>(hyper.kl_anneal_epochs));
}

}  // namespace

FlowResult radial_flow(const Eigen::Vector2d& u, const RadialFlowParams& f) {
    if (!u.allFinite()) throw std::invalid_argument("radial_flow: non-finite input");
    return flow_forward_one(u, f.z0, f.alpha(), f.beta(), nullptr);
}

Eigen::Vector2d reparameterize(const Eigen::Vector2d& mu, const Eigen::Vector2d& logvar,
                               const Eigen::Vector2d& eps) {
    return mu.array() + (logvar.array() / 2.0).exp() * eps.array();
}

double posterior_log_density(const Eigen::Vector2d& u, const Eigen::Vector2d& mu,
                             const Eigen::Vector2d& logvar, double log_det) {
    double lq = 0.0;
    for (int d = 0; d < kLatentDim; ++d) {
        const double diff = u(d) - mu(d);
        lq += -kHalfLog2Pi - 0.5 * logvar(d) - diff * diff / (2.0 * std::exp(logvar(d)));
    }
    return lq - log_det;
}

double loss_total_from_parts(double recon, double mi, double tc,
                             const std::array<double, 2>& dim_kl, double gamma_eff,
                             double beta_eff, double alpha_eff, double free_nats) {
    double dimkl_sum = 0.0;
    for (double d : dim_kl) dimkl_sum += std::max(free_nats, d);
    return recon + gamma_eff * mi + beta_eff * tc + alpha_eff * dimkl_sum;
}

// Aggregated-posterior estimates use minibatch stratified weights: the own
// sample carries 1/N mass and the other batch members (N-1)/(N(B-1)) each,
// which makes the estimate exact when every posterior equals the prior.
static void mss_log_weights(int b, std::size_t dataset_size, double& lw_own,
                            double& lw_other) {
    const double n = static_cast<double>(dataset_size);
    lw_own = -std::log(n);
    lw_other = std::log(n - 1.0) - std::log(n) - std::log(static_cast<double>(b - 1));
}

KlDecomposition kl_decomposition(const Eigen::MatrixXd& u, const Eigen::MatrixXd& mu,
                                 const Eigen::MatrixXd& logvar,
                                 const Eigen::VectorXd& log_det, const Eigen::MatrixXd& z,
                                 std::size_t dataset_size) {
    const auto b = static_cast<int>(u.cols());
    if (b < 2) throw std::invalid_argument("kl_decomposition: batch size must be >= 2");
    if (dataset_size < static_cast<std::size_t>(b))
        throw std::invalid_argument("kl_decomposition: dataset size < batch size");

    double lw_own, lw_other;
    mss_log_weights(b, dataset_size, lw_own, lw_other);

    KlDecomposition out;
    for (int i = 0; i < b; ++i) {
        // log q(z_i | x_j) per dim, flow log-det split evenly across dims.
        std::array<VectorXd, kLatentDim> l;
        for (int d = 0; d < kLatentDim; ++d) l[d].resize(b);
        for (int j = 0; j < b; ++j) {
            for (int d = 0; d < kLatentDim; ++d) {
                const double diff = u(d, i) - mu(d, j);
                l[d](j) = -kHalfLog2Pi - 0.5 * logvar(d, j) -
                          diff * diff / (2.0 * std::exp(logvar(d, j))) -
                          log_det(i) / static_cast<double>(kLatentDim);
            }
        }
        VectorXd weights = VectorXd::Constant(b, lw_other);
        weights(i) = lw_own;

        VectorXd joint = l[0] + l[1] + weights;
        const double lse_joint = joint.maxCoeff() +
                                 std::log((joint.array() - joint.maxCoeff()).exp().sum());
        const double log_q_cond = l[0](i) + l[1](i);

        double sum_logqzd = 0.0;
        for (int d = 0; d < kLatentDim; ++d) {
            const VectorXd ld = l[d] + weights;
            const double m = ld.maxCoeff();
            const double log_qzd = m + std::log((ld.array() - m).exp().sum());
            sum_logqzd += log_qzd;
            const double log_p_d = -kHalfLog2Pi - 0.5 * z(d, i) * z(d, i);
            out.dim_kl[static_cast<std::size_t>(d)] += (log_qzd - log_p_d) / b;
        }
        out.mi += (log_q_cond - lse_joint) / b;
        out.tc += (lse_joint - sum_logqzd) / b;
    }
    return out;
}

MatVaeModel::MatVaeModel(int hidden_width, std::uint64_t init_seed)
    : hidden(hidden_width), seed(init_seed) {
    nn::TrunkShape enc_shape{3, hidden_width, hidden_width / 2, 3};
    nn::TrunkShape dec_shape{kLatentDim, hidden_width, hidden_width / 2, 3};
    enc_trunk = nn::make_trunk(params, enc_shape, "enc");
    enc_w_mu = params.add("enc.head_mu.w", kLatentDim, hidden_width);
    enc_b_mu = params.add("enc.head_mu.b", kLatentDim, 1);
    enc_w_lv = params.add("enc.head_lv.w", kLatentDim, hidden_width);
    enc_b_lv = params.add("enc.head_lv.b", kLatentDim, 1);
    dec_trunk = nn::make_trunk(params, dec_shape, "dec");
    static const char* head_names[3] = {"dec.head_e", "dec.head_nu", "dec.head_rho"};
    for (int k = 0; k < 3; ++k) {
        dec_head_w[static_cast<std::size_t>(k)] =
            params.add(std::string(head_names[k]) + ".w", 1, hidden_width);
        dec_head_b[static_cast<std::size_t>(k)] =
            params.add(std::string(head_names[k]) + ".b", 1, 1);
    }
    flow_z0 = params.add("flow.z0", kLatentDim, 1);
    flow_raw = params.add("flow.raw", 2, 1);  // (log_alpha_raw, beta_raw)

    Rng rng(init_seed);
    nn::init_trunk(params, enc_trunk, rng);
    nn::init_linear(params, enc_w_mu, enc_b_mu, rng);
    nn::init_linear(params, enc_w_lv, enc_b_lv, rng);
    // Start with sharp posteriors (sigma ~ e^-3). With broad initial
    // posteriors the minibatch MI estimate dominates early training and
    // drags every posterior onto one mode before reconstruction separates
    // the data; the low-overlap regime is the useful basin.
    params[enc_b_lv].setConstant(-6.0);
    nn::init_trunk(params, dec_trunk, rng);
    for (int k = 0; k < 3; ++k)
        nn::init_linear(params, dec_head_w[static_cast<std::size_t>(k)],
                        dec_head_b[static_cast<std::size_t>(k)], rng);
    params[flow_z0].setZero();
    params[flow_raw](0, 0) = 0.0;   // alpha = softplus(0) ~ 0.693
    params[flow_raw](1, 0) = 0.0;   // beta  = -alpha + softplus(0) ~ 0
}

RadialFlowParams MatVaeModel::flow() const {
    RadialFlowParams f;
    f.z0 = params[flow_z0].col(0);
    f.log_alpha_raw = params[flow_raw](0, 0);
    f.beta_raw = params[flow_raw](1, 0);
    return f;
}

namespace {

struct EncoderCache {
    nn::TrunkCache trunk;
    MatrixXd trunk_out;
};

void encoder_forward_impl(const MatVaeModel& m, const MatrixXd& x,
                          const std::vector<MatrixXd>* masks, EncoderCache& cache,
                          MatrixXd& mu, MatrixXd& logvar) {
    nn::require_finite(x, "encoder input");
    cache.trunk_out = nn::trunk_forward(m.params, m.enc_trunk, x, masks, cache.trunk,
                                        "encoder");
    mu = m.params[m.enc_w_mu] * cache.trunk_out;
    mu.colwise() += m.params[m.enc_b_mu].col(0);
    logvar = m.params[m.enc_w_lv] * cache.trunk_out;
    logvar.colwise() += m.params[m.enc_b_lv].col(0);
    nn::require_finite(mu, "encoder mu head");
    nn::require_finite(logvar, "encoder logvar head");
}

void encoder_backward_impl(const MatVaeModel& m, const EncoderCache& cache,
                           const MatrixXd& dmu, const MatrixXd& dlv, nn::ParamSet* grads) {
    MatrixXd dtrunk = m.params[m.enc_w_mu].transpose() * dmu +
                      m.params[m.enc_w_lv].transpose() * dlv;
    if (grads) {
        (*grads)[m.enc_w_mu] += dmu * cache.trunk_out.transpose();
        (*grads)[m.enc_b_mu].col(0) += dmu.rowwise().sum();
        (*grads)[m.enc_w_lv] += dlv * cache.trunk_out.transpose();
        (*grads)[m.enc_b_lv].col(0) += dlv.rowwise().sum();
    }
    nn::trunk_backward(m.params, m.enc_trunk, cache.trunk, dtrunk, grads);
}

MatrixXd decoder_forward_impl(const MatVaeModel& m, const MatrixXd& z,
                              const std::vector<MatrixXd>* masks, DecoderCache& cache) {
    nn::require_finite(z, "decoder input");
    cache.trunk_out = nn::trunk_forward(m.params, m.dec_trunk, z, masks, cache.trunk,
                                        "decoder");
    MatrixXd out(3, z.cols());
    for (int k = 0; k < 3; ++k) {
        out.row(k) = m.params[m.dec_head_w[static_cast<std::size_t>(k)]] * cache.trunk_out;
        out.row(k).array() += m.params[m.dec_head_b[static_cast<std::size_t>(k)]](0, 0);
    }
    nn::require_finite(out, "decoder heads");
    return out;
}

MatrixXd decoder_backward_impl(const MatVaeModel& m, const DecoderCache& cache,
                               const MatrixXd& d_out, nn::ParamSet* grads) {
    MatrixXd dtrunk = MatrixXd::Zero(cache.trunk_out.rows(), cache.trunk_out.cols());
    for (int k = 0; k < 3; ++k) {
        const auto wk = m.dec_head_w[static_cast<std::size_t>(k)];
        const auto bk = m.dec_head_b[static_cast<std::size_t>(k)];
        dtrunk += m.params[wk].transpose() * d_out.row(k);
        if (grads) {
            (*grads)[wk] += d_out.row(k) * cache.trunk_out.transpose();
            (*grads)[bk](0, 0) += d_out.row(k).sum();
        }
    }
    return nn::trunk_backward(m.params, m.dec_trunk, cache.trunk, dtrunk, grads);
}

}  // namespace

void matvae_encoder_forward(const MatVaeModel& m, const Eigen::MatrixXd& x,
                            Eigen::MatrixXd& mu, Eigen::MatrixXd& logvar) {
    EncoderCache cache;
    encoder_forward_impl(m, x, nullptr, cache, mu, logvar);
}

Eigen::MatrixXd matvae_decoder_forward(const MatVaeModel& m, const Eigen::MatrixXd& z,
                                       DecoderCache* cache) {
    DecoderCache local;
    return decoder_forward_impl(m, z, nullptr, cache ? *cache : local);
}

Eigen::MatrixXd matvae_decoder_backward_input(const MatVaeModel& m, const DecoderCache& cache,
                                              const Eigen::MatrixXd& d_out) {
    return decoder_backward_impl(m, cache, d_out, nullptr);
}

LossBreakdown matvae_loss(const MatVaeModel& m, const Eigen::MatrixXd& x_norm,
                          std::size_t dataset_size, const Hyperparams& hyper, int epoch,
                          const Eigen::MatrixXd& eps,
                          const std::vector<Eigen::MatrixXd>* enc_masks,
                          const std::vector<Eigen::MatrixXd>* dec_masks,
                          nn::ParamSet* grads) {
    const int b = static_cast<int>(x_norm.cols());
    if (b < 2) throw std::invalid_argument("matvae_loss: batch size must be >= 2");

    const double ramp = anneal_ramp(hyper, epoch);
    const LossWeights w;
    const double w_gamma = ramp * w.gamma;
    const double w_beta = ramp * w.beta;
    const double w_alpha = ramp * w.alpha;

    // Encoder and reparameterization.
    EncoderCache enc_cache;
    MatrixXd mu, lv;
    encoder_forward_impl(m, x_norm, enc_masks, enc_cache, mu, lv);
    MatrixXd sig = (lv.array() / 2.0).exp();
    MatrixXd u = mu + sig.cwiseProduct(eps);

    // Radial flow per sample.
    const RadialFlowParams fp = m.flow();
    const double alpha = fp.alpha();
    const double beta = fp.beta();
    std::vector<FlowCache> fcache(static_cast<std::size_t>(b));
    MatrixXd z(kLatentDim, b);
    VectorXd log_det(b);
    for (int i = 0; i < b; ++i) {
        const FlowResult fr = flow_forward_one(u.col(i), fp.z0, alpha, beta,
                                               &fcache[static_cast<std::size_t>(i)]);
        z.col(i) = fr.z;
        log_det(i) = fr.log_det;
    }

    // Decoder and reconstruction: normalized-space MSE under the Gaussian
    // likelihood weight.
    DecoderCache dec_cache;
    MatrixXd xhat = decoder_forward_impl(m, z, dec_masks, dec_cache);
    const double recon =
        hyper.recon_scale * (xhat - x_norm).squaredNorm() / static_cast<double>(b);

    // KL decomposition pieces, kept inline so the backward pass can reuse the
    // per-pair softmax weights. Stratified weights: own sample 1/N, others
    // (N-1)/(N(B-1)).
    double lw_own, lw_other;
    mss_log_weights(b, dataset_size, lw_own, lw_other);

    MatrixXd l0(b, b), l1(b, b);  // l_d(i, j) = per-dim log q(z_i | x_j)
    for (int j = 0; j < b; ++j) {
        const double inv_var0 = std::exp(-lv(0, j));
        const double inv_var1 = std::exp(-lv(1, j));
        const double base0 = -kHalfLog2Pi - 0.5 * lv(0, j);
        const double base1 = -kHalfLog2Pi - 0.5 * lv(1, j);
        for (int i = 0; i < b; ++i) {
            const double d0 = u(0, i) - mu(0, j);
            const double d1 = u(1, i) - mu(1, j);
            l0(i, j) = base0 - 0.5 * d0 * d0 * inv_var0 - log_det(i) / kLatentDim;
            l1(i, j) = base1 - 0.5 * d1 * d1 * inv_var1 - log_det(i) / kLatentDim;
        }
    }

    // Weighted rows: constant lw_other with lw_own on the diagonal.
    MatrixXd a0 = l0.array() + lw_other;
    MatrixXd a1 = l1.array() + lw_other;
    MatrixXd aj = (l0 + l1).array() + lw_other;
    for (int i = 0; i < b; ++i) {
        a0(i, i) += lw_own - lw_other;
        a1(i, i) += lw_own - lw_other;
        aj(i, i) += lw_own - lw_other;
    }

    VectorXd lse_joint(b), lse0(b), lse1(b);
    for (int i = 0; i < b; ++i) {
        auto lse = [&](const MatrixXd& mat) {
            const double mx = mat.row(i).maxCoeff();
            return mx + std::log((mat.row(i).array() - mx).exp().sum());
        };
        lse_joint(i) = lse(aj);
        lse0(i) = lse(a0);
        lse1(i) = lse(a1);
    }

    LossBreakdown out;
    out.recon = recon;
    for (int i = 0; i < b; ++i) {
        const double log_p0 = -kHalfLog2Pi - 0.5 * z(0, i) * z(0, i);
        const double log_p1 = -kHalfLog2Pi - 0.5 * z(1, i) * z(1, i);
        out.mi += (l0(i, i) + l1(i, i) - lse_joint(i)) / b;
        out.tc += (lse_joint(i) - lse0(i) - lse1(i)) / b;
        out.dim_kl[0] += (lse0(i) - log_p0) / b;
        out.dim_kl[1] += (lse1(i) - log_p1) / b;
    }
    out.gamma_eff = w_gamma;
    out.beta_eff = w_beta;
    out.alpha_eff = w_alpha;
    out.free_nats = w.free_nats;
    out.total = loss_total_from_parts(recon, out.mi, out.tc, out.dim_kl, w_gamma, w_beta,
                                      w_alpha, w.free_nats);
    if (!std::isfinite(out.total)) {
        std::ostringstream os;
        os << "matvae_loss: non-finite loss (recon=" << out.recon << ", mi=" << out.mi
           << ", tc=" << out.tc << ", dim_kl=[" << out.dim_kl[0] << ", " << out.dim_kl[1]
           << "], alpha=" << alpha << ", beta=" << beta << ")";
        throw std::runtime_error(os.str());
    }
    if (!grads) return out;

    // ---- Backward ----
    const std::array<bool, 2> gate{out.dim_kl[0] > w.free_nats,
                                   out.dim_kl[1] > w.free_nats};

    // Reconstruction path.
    MatrixXd dxhat = (2.0 * hyper.recon_scale / static_cast<double>(b)) * (xhat - x_norm);
    MatrixXd dz = decoder_backward_impl(m, dec_cache, dxhat, grads);

    // KL estimator path: coefficients on l_d(i, j) and on log_det / z / u / mu / lv.
    const double inv_b = 1.0 / static_cast<double>(b);
    const double g0 = gate[0] ? w_alpha : 0.0;
    const double g1 = gate[1] ? w_alpha : 0.0;

    const MatrixXd s_joint = (aj.colwise() - lse_joint).array().exp().matrix();
    const MatrixXd s0 = (a0.colwise() - lse0).array().exp().matrix();
    const MatrixXd s1 = (a1.colwise() - lse1).array().exp().matrix();

    MatrixXd c_joint = ((w_beta - w_gamma) * inv_b) * s_joint;
    c_joint.diagonal().array() += w_gamma * inv_b;
    const MatrixXd dl0 = c_joint + ((g0 - w_beta) * inv_b) * s0;
    const MatrixXd dl1 = c_joint + ((g1 - w_beta) * inv_b) * s1;

    // -log p(z) contribution of the gated dim-KL terms.
    dz.row(0) += (g0 * inv_b) * z.row(0);
    dz.row(1) += (g1 * inv_b) * z.row(1);

    // Every l_d(i, j) carries -log_det(i)/D.
    VectorXd dlogdet = -(dl0 + dl1).rowwise().sum() / static_cast<double>(kLatentDim);

    MatrixXd du(kLatentDim, b), dmu(kLatentDim, b), dlv(kLatentDim, b);
    for (int d = 0; d < kLatentDim; ++d) {
        const MatrixXd& dl = (d == 0) ? dl0 : dl1;
        const Eigen::ArrayXd inv_var = (-lv.row(d).transpose().array()).exp();
        MatrixXd diff = u.row(d).transpose().replicate(1, b);
        diff.array().rowwise() -= mu.row(d).array();
        const MatrixXd m = dl.cwiseProduct(diff);
        du.row(d) = -(m * inv_var.matrix()).transpose();
        dmu.row(d) = (m.colwise().sum().transpose().array() * inv_var).transpose();
        dlv.row(d) = (-0.5 * dl.colwise().sum().transpose().array() +
                      0.5 * inv_var * m.cwiseProduct(diff).colwise().sum().transpose().array())
                         .transpose();
    }

    // Flow backward; accumulates z0 and raw-parameter gradients.
    Vector2d g_z0 = Vector2d::Zero();
    double g_alpha = 0.0, g_beta = 0.0;
    for (int i = 0; i < b; ++i) {
        const FlowGrads fg = flow_backward_one(fcache[static_cast<std::size_t>(i)], alpha,
                                               beta, dz.col(i), dlogdet(i));
        du.col(i) += fg.du;
        g_z0 += fg.dz0;
        g_alpha += fg.dalpha;
        g_beta += fg.dbeta;
    }
    (*grads)[m.flow_z0].col(0) += g_z0;
    (*grads)[m.flow_raw](0, 0) += (g_alpha - g_beta) * sigmoid(fp.log_alpha_raw);
    (*grads)[m.flow_raw](1, 0) += g_beta * sigmoid(fp.beta_raw);

    // Reparameterization: u = mu + exp(lv/2) eps.
    dmu += du;
    dlv.array() += du.array() * eps.array() * sig.array() * 0.5;

    encoder_backward_impl(m, enc_cache, dmu, dlv, grads);
    return out;
}

double cosine_lr(const Hyperparams& hyper, int epoch) {
    if (hyper.epochs <= 1) return hyper.lr;
    const double t = static_cast<double>(epoch) / static_cast<double>(hyper.epochs - 1);
    return hyper.lr_final +
           0.5 * (hyper.lr - hyper.lr_final) * (1.0 + std::cos(std::numbers::pi * t));
}

MatVaeModel matvae_train(const std::vector<MaterialTriplet>& triplets,
                         const Hyperparams& hyper, TrainLog* log) {
    if (triplets.size() < static_cast<std::size_t>(hyper.batch))
        throw std::invalid_argument("matvae_train: fewer triplets than batch size");

    nn::keep_large_allocations_on_heap();
    MatVaeModel model(hyper.hidden, hyper.seed);
    model.normalizer = fit_normalizer(triplets);
    model.normalizer_set = true;

    const std::size_t n = triplets.size();
    MatrixXd data(3, static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = normalize(triplets[i], model.normalizer);
        data.col(static_cast<Eigen::Index>(i)) = Eigen::Vector3d(x[0], x[1], x[2]);
    }

    nn::AdamW opt;
    opt.weight_decay = hyper.weight_decay;
    opt.init(model.params);
    nn::ParamSet grads = nn::ParamSet::zeros_like(model.params);

    Rng rng(hyper.seed + 1);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        const double lr = cosine_lr(hyper, epoch);
        rng.shuffle(order);
        LossBreakdown epoch_mean;
        int batches = 0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(hyper.batch)) {
            const int bsz = static_cast<int>(
                std::min<std::size_t>(static_cast<std::size_t>(hyper.batch), n - start));
            if (bsz < 2) break;
            MatrixXd batch(3, bsz);
            for (int c = 0; c < bsz; ++c)
                batch.col(c) = data.col(static_cast<Eigen::Index>(order[start + c]));

            MatrixXd eps(kLatentDim, bsz);
            for (Eigen::Index k = 0; k < eps.size(); ++k) eps.data()[k] = rng.normal();
            auto enc_masks = nn::make_dropout_masks(model.enc_trunk.shape, bsz,
                                                    hyper.dropout, rng);
            auto dec_masks = nn::make_dropout_masks(model.dec_trunk.shape, bsz,
                                                    hyper.dropout, rng);

            grads.set_zero();
            const LossBreakdown lb = matvae_loss(
                model, batch, n, hyper, epoch, eps,
                enc_masks.empty() ? nullptr : &enc_masks,
                dec_masks.empty() ? nullptr : &dec_masks, &grads);
            nn::clip_global_norm(grads, hyper.grad_clip);
            opt.step(model.params, grads, lr);

            epoch_mean.recon += lb.recon;
            epoch_mean.mi += lb.mi;
            epoch_mean.tc += lb.tc;
            epoch_mean.dim_kl[0] += lb.dim_kl[0];
            epoch_mean.dim_kl[1] += lb.dim_kl[1];
            epoch_mean.total += lb.total;
            epoch_mean.gamma_eff = lb.gamma_eff;
            epoch_mean.beta_eff = lb.beta_eff;
            epoch_mean.alpha_eff = lb.alpha_eff;
            ++batches;
        }
        if (log && batches > 0) {
            epoch_mean.recon /= batches;
            epoch_mean.mi /= batches;
            epoch_mean.tc /= batches;
            epoch_mean.dim_kl[0] /= batches;
            epoch_mean.dim_kl[1] /= batches;
            epoch_mean.total /= batches;
            log->per_epoch.push_back(epoch_mean);
        }
    }
    model.epochs_trained = hyper.epochs;
    return model;
}

LatentCode matvae_encode(const MatVaeModel& m, const MaterialTriplet& t) {
    if (!m.normalizer_set)
        throw std::runtime_error("matvae_encode: model has no fitted normalizer");
    const auto xn = normalize(t, m.normalizer);
    MatrixXd x(3, 1);
    x << xn[0], xn[1], xn[2];
    MatrixXd mu, lv;
    matvae_encoder_forward(m, x, mu, lv);
    LatentCode code;
    code.z = radial_flow(mu.col(0), m.flow()).z;
    return code;
}

std::vector<MaterialTriplet> matvae_decode_batch(const MatVaeModel& m,
                                                 const Eigen::MatrixXd& z) {
    if (!m.normalizer_set)
        throw std::runtime_error("matvae_decode: model has no fitted normalizer");
    const MatrixXd out = matvae_decoder_forward(m, z);
    // Keep the log10 exponents inside double range so E and rho stay finite
    // and positive for arbitrary latents.
    auto clamp_exp = [](double v) { return std::clamp(v, -300.0, 300.0); };
    const Normalizer& n = m.normalizer;
    std::vector<MaterialTriplet> ts;
    ts.reserve(static_cast<std::size_t>(z.cols()));
    for (Eigen::Index i = 0; i < z.cols(); ++i) {
        MaterialTriplet t;
        t.e = std::pow(10.0, clamp_exp(n.e_log10_min +
                                       out(0, i) * (n.e_log10_max - n.e_log10_min)));
        t.nu = std::clamp(n.nu_min + out(1, i) * (n.nu_max - n.nu_min), 0.0, kNuDecodeMax);
        t.rho = std::pow(10.0, clamp_exp(n.rho_log10_min +
                                         out(2, i) * (n.rho_log10_max - n.rho_log10_min)));
        ts.push_back(t);
    }
    return ts;
}

MaterialTriplet matvae_decode(const MatVaeModel& m, const LatentCode& code) {
    MatrixXd z(2, 1);
    z.col(0) = code.z;
    return matvae_decode_batch(m, z).front();
}

std::vector<MaterialTriplet> matvae_interpolate(const MatVaeModel& m,
                                                const MaterialTriplet& a,
                                                const MaterialTriplet& b, int steps) {
    if (steps < 2) throw std::invalid_argument("matvae_interpolate: steps must be >= 2");
    const Vector2d za = matvae_encode(m, a).z;
    const Vector2d zb = matvae_encode(m, b).z;
    std::vector<MaterialTriplet> out;
    out.reserve(static_cast<std::size_t>(steps));
    for (int k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(steps - 1);
        LatentCode code;
        code.z = (1.0 - t) * za + t * zb;
        out.push_back(matvae_decode(m, code));
    }
    return out;
}

MaterialTriplet naive_interpolate(const MaterialTriplet& a, const MaterialTriplet& b,
                                  double t) {
    if (t < 0.0 || t > 1.0)
        throw std::invalid_argument("naive_interpolate: t must lie in [0, 1]");
    MaterialTriplet out;
    out.e = a.e + t * (b.e - a.e);
    out.nu = a.nu + t * (b.nu - a.nu);
    out.rho = a.rho + t * (b.rho - a.rho);
    return out;
}

std::vector<MaterialTriplet> matvae_sample_prior(const MatVaeModel& m, std::size_t count,
                                                 std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("matvae_sample_prior: count must be >= 1");
    Rng rng(seed);
    MatrixXd z(kLatentDim, static_cast<Eigen::Index>(count));
    for (Eigen::Index k = 0; k < z.size(); ++k) z.data()[k] = rng.normal();
    std::vector<MaterialTriplet> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        LatentCode code;
        code.z = z.col(static_cast<Eigen::Index>(i));
        out.push_back(matvae_decode(m, code));
    }
    return out;
}

namespace {

nlohmann::json tensor_to_json(const MatrixXd& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < t.cols(); ++c) row.push_back(t(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

MatrixXd tensor_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols,
                          const std::string& name) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
        throw std::invalid_argument("checkpoint tensor '" + name + "' has wrong shape");
    MatrixXd t(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw std::invalid_argument("checkpoint tensor '" + name + "' has wrong shape");
        for (Eigen::Index c = 0; c < cols; ++c)
            t(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return t;
}

bool is_encoder_tensor(const std::string& name) { return name.rfind("enc.", 0) == 0; }
bool is_decoder_tensor(const std::string& name) { return name.rfind("dec.", 0) == 0; }

}  // namespace

std::string matvae_to_json(const MatVaeModel& m) {
    nlohmann::json j;
    j["version"] = 1;
    j["normalizer"] = {{"e_log10_min", m.normalizer.e_log10_min},
                       {"e_log10_max", m.normalizer.e_log10_max},
                       {"nu_min", m.normalizer.nu_min},
                       {"nu_max", m.normalizer.nu_max},
                       {"rho_log10_min", m.normalizer.rho_log10_min},
                       {"rho_log10_max", m.normalizer.rho_log10_max}};
    nlohmann::json enc = nlohmann::json::array();
    nlohmann::json dec = nlohmann::json::array();
    for (std::size_t i = 0; i < m.params.tensor_count(); ++i) {
        const std::string& name = m.params.name(static_cast<int>(i));
        nlohmann::json entry = {{"name", name},
                                {"data", tensor_to_json(m.params[static_cast<int>(i)])}};
        if (is_encoder_tensor(name))
            enc.push_back(std::move(entry));
        else if (is_decoder_tensor(name))
            dec.push_back(std::move(entry));
    }
    j["encoder"] = std::move(enc);
    j["decoder"] = std::move(dec);
    const RadialFlowParams f = m.flow();
    j["flow"] = {{"z0", {f.z0(0), f.z0(1)}},
                 {"log_alpha_raw", f.log_alpha_raw},
                 {"beta_raw", f.beta_raw}};
    j["meta"] = {{"seed", m.seed}, {"epochs", m.epochs_trained}, {"hidden", m.hidden}};
    return j.dump(1);
}

MatVaeModel matvae_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("checkpoint parse failure: ") + e.what());
    }
    if (j.value("version", 0) != 1)
        throw std::invalid_argument("checkpoint: unsupported version");

    const int hidden = j.at("meta").value("hidden", 256);
    MatVaeModel m(hidden, j.at("meta").value("seed", std::uint64_t{0}));
    m.epochs_trained = j.at("meta").value("epochs", 0);

    const auto& nrm = j.at("normalizer");
    m.normalizer.e_log10_min = nrm.at("e_log10_min").get<double>();
    m.normalizer.e_log10_max = nrm.at("e_log10_max").get<double>();
    m.normalizer.nu_min = nrm.at("nu_min").get<double>();
    m.normalizer.nu_max = nrm.at("nu_max").get<double>();
    m.normalizer.rho_log10_min = nrm.at("rho_log10_min").get<double>();
    m.normalizer.rho_log10_max = nrm.at("rho_log10_max").get<double>();
    m.normalizer_set = true;

    auto load_group = [&](const nlohmann::json& group) {
        for (const auto& entry : group) {
            const std::string name = entry.at("name").get<std::string>();
            bool found = false;
            for (std::size_t i = 0; i < m.params.tensor_count(); ++i) {
                if (m.params.name(static_cast<int>(i)) == name) {
                    auto& t = m.params[static_cast<int>(i)];
                    t = tensor_from_json(entry.at("data"), t.rows(), t.cols(), name);
                    found = true;
                    break;
                }
            }
            if (!found)
                throw std::invalid_argument("checkpoint: unknown tensor '" + name + "'");
        }
    };
    load_group(j.at("encoder"));
    load_group(j.at("decoder"));

    const auto& f = j.at("flow");
    m.params[m.flow_z0](0, 0) = f.at("z0").at(0).get<double>();
    m.params[m.flow_z0](1, 0) = f.at("z0").at(1).get<double>();
    m.params[m.flow_raw](0, 0) = f.at("log_alpha_raw").get<double>();
    m.params[m.flow_raw](1, 0) = f.at("beta_raw").get<double>();
    return m;
}

void matvae_save(const MatVaeModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    out << matvae_to_json(m);
}

MatVaeModel matvae_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return matvae_from_json(ss.str());
}

}  // namespace matfield
