#include "matfield/nn.hpp"

#include <cmath>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace matfield::nn {

void keep_large_allocations_on_heap() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

namespace {
constexpr double kLnEps = 1e-5;
}

int ParamSet::add(const std::string& name, int rows, int cols) {
    tensors_.emplace_back(MatrixXd::Zero(rows, cols));
    names_.push_back(name);
    return static_cast<int>(tensors_.size()) - 1;
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
    return n;
}

double ParamSet::get_scalar(std::size_t flat) const {
    for (const auto& t : tensors_) {
        const auto n = static_cast<std::size_t>(t.size());
        if (flat < n) return t.data()[flat];
        flat -= n;
    }
    throw std::out_of_range("ParamSet::get_scalar");
}

void ParamSet::set_scalar(std::size_t flat, double v) {
    for (auto& t : tensors_) {
        const auto n = static_cast<std::size_t>(t.size());
        if (flat < n) {
            t.data()[flat] = v;
            return;
        }
        flat -= n;
    }
    throw std::out_of_range("ParamSet::set_scalar");
}

void ParamSet::set_zero() {
    for (auto& t : tensors_) t.setZero();
}

ParamSet ParamSet::zeros_like(const ParamSet& other) {
    ParamSet out;
    for (std::size_t i = 0; i < other.tensors_.size(); ++i)
        out.add(other.names_[i], static_cast<int>(other.tensors_[i].rows()),
                static_cast<int>(other.tensors_[i].cols()));
    return out;
}

double ParamSet::squared_norm() const {
    double s = 0.0;
    for (const auto& t : tensors_) s += t.squaredNorm();
    return s;
}

void clip_global_norm(ParamSet& grads, double max_norm) {
    const double norm = std::sqrt(grads.squared_norm());
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& t : grads.tensors()) t *= s;
    }
}

void AdamW::init(const ParamSet& params) {
    m_ = ParamSet::zeros_like(params);
    v_ = ParamSet::zeros_like(params);
    t_ = 0;
}

void AdamW::step(ParamSet& params, const ParamSet& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.tensor_count(); ++i) {
        auto& p = params[static_cast<int>(i)];
        const auto& g = grads[static_cast<int>(i)];
        auto& m = m_[static_cast<int>(i)];
        auto& v = v_[static_cast<int>(i)];
        m.array() = beta1 * m.array() + (1.0 - beta1) * g.array();
        v.array() = beta2 * v.array() + (1.0 - beta2) * g.array().square();
        p.array() -= lr * ((m.array() / bc1) / ((v.array() / bc2).sqrt() + eps) +
                           weight_decay * p.array());
    }
}

double silu(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return x * s;
}

MatrixXd silu_forward(const MatrixXd& x) {
    return x.unaryExpr([](double v) { return silu(v); });
}

MatrixXd silu_backward(const MatrixXd& x, const MatrixXd& dy) {
    MatrixXd dx = x.unaryExpr([](double v) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
    });
    return dx.cwiseProduct(dy);
}

MatrixXd layernorm_forward(const VectorXd& gain, const VectorXd& bias, const MatrixXd& x,
                           LayerNormCache& cache) {
    const Eigen::RowVectorXd mean = x.colwise().mean();
    cache.xhat = x.rowwise() - mean;
    const Eigen::RowVectorXd var =
        cache.xhat.colwise().squaredNorm() / static_cast<double>(x.rows());
    cache.inv_std = (var.transpose().array() + kLnEps).rsqrt().matrix();
    cache.xhat.array().rowwise() *= cache.inv_std.transpose().array();
    MatrixXd y = (cache.xhat.array().colwise() * gain.array()).matrix();
    y.colwise() += bias;
    return y;
}

MatrixXd layernorm_backward(const VectorXd& gain, const LayerNormCache& cache,
                            const MatrixXd& dy, VectorXd* dgain, VectorXd* dbias) {
    MatrixXd g = (dy.array().colwise() * gain.array()).matrix();
    const Eigen::RowVectorXd g_mean = g.colwise().mean();
    const Eigen::RowVectorXd gx_mean =
        g.cwiseProduct(cache.xhat).colwise().sum() / static_cast<double>(dy.rows());
    g.rowwise() -= g_mean;
    g -= (cache.xhat.array().rowwise() * gx_mean.array()).matrix();
    g.array().rowwise() *= cache.inv_std.transpose().array();
    if (dgain) *dgain += dy.cwiseProduct(cache.xhat).rowwise().sum();
    if (dbias) *dbias += dy.rowwise().sum();
    return g;
}

TrunkParams make_trunk(ParamSet& params, const TrunkShape& shape, const std::string& prefix) {
    TrunkParams t;
    t.shape = shape;
    t.w_in = params.add(prefix + ".in.w", shape.hidden, shape.input_dim);
    t.b_in = params.add(prefix + ".in.b", shape.hidden, 1);
    for (int b = 0; b < shape.num_blocks; ++b) {
        const std::string p = prefix + ".block" + std::to_string(b);
        TrunkParams::Block blk;
        blk.ln1_g = params.add(p + ".ln1.g", shape.hidden, 1);
        blk.ln1_b = params.add(p + ".ln1.b", shape.hidden, 1);
        blk.w1 = params.add(p + ".w1", shape.bottleneck, shape.hidden);
        blk.b1 = params.add(p + ".b1", shape.bottleneck, 1);
        blk.ln2_g = params.add(p + ".ln2.g", shape.bottleneck, 1);
        blk.ln2_b = params.add(p + ".ln2.b", shape.bottleneck, 1);
        blk.w2 = params.add(p + ".w2", shape.hidden, shape.bottleneck);
        blk.b2 = params.add(p + ".b2", shape.hidden, 1);
        t.blocks.push_back(blk);
    }
    return t;
}

void require_finite(const MatrixXd& m, const char* what) {
    if (!m.allFinite())
        throw std::runtime_error(std::string("non-finite values in ") + what);
}

std::vector<MatrixXd> make_dropout_masks(const TrunkShape& shape, int batch, double rate,
                                         Rng& rng) {
    std::vector<MatrixXd> masks;
    if (rate <= 0.0) return masks;
    const double keep = 1.0 - rate;
    const double scale = 1.0 / keep;
    for (int k = 0; k < shape.num_blocks + 1; ++k) {
        MatrixXd m(shape.hidden, batch);
        for (Eigen::Index j = 0; j < m.size(); ++j)
            m.data()[j] = (rng.uniform() < keep) ? scale : 0.0;
        masks.push_back(std::move(m));
    }
    return masks;
}

MatrixXd trunk_forward(const ParamSet& params, const TrunkParams& trunk, const MatrixXd& x,
                       const std::vector<MatrixXd>* drop_masks, TrunkCache& cache,
                       const char* tag) {
    cache.x = x;
    cache.drop_masks = drop_masks;
    cache.blocks.assign(static_cast<std::size_t>(trunk.shape.num_blocks), {});

    MatrixXd h = params[trunk.w_in] * x;
    h.colwise() += params[trunk.b_in].col(0);
    cache.proj_out = h;
    h = silu_forward(h);
    if (drop_masks) h = h.cwiseProduct((*drop_masks)[0]);
    require_finite(h, tag);

    for (int b = 0; b < trunk.shape.num_blocks; ++b) {
        const auto& blk = trunk.blocks[static_cast<std::size_t>(b)];
        auto& bc = cache.blocks[static_cast<std::size_t>(b)];
        bc.x_in = h;
        MatrixXd t = layernorm_forward(params[blk.ln1_g].col(0), params[blk.ln1_b].col(0), h,
                                       bc.ln1);
        bc.silu1_in = t;
        t = silu_forward(t);
        bc.lin1_in = t;
        t = params[blk.w1] * t;
        t.colwise() += params[blk.b1].col(0);
        t = layernorm_forward(params[blk.ln2_g].col(0), params[blk.ln2_b].col(0), t, bc.ln2);
        bc.silu2_in = t;
        t = silu_forward(t);
        bc.lin2_in = t;
        t = params[blk.w2] * t;
        t.colwise() += params[blk.b2].col(0);
        h = h + t;
        if (drop_masks) h = h.cwiseProduct((*drop_masks)[static_cast<std::size_t>(b) + 1]);
        if (!h.allFinite())
            throw std::runtime_error(std::string("non-finite values in ") + tag +
                                     " block " + std::to_string(b));
    }
    return h;
}

MatrixXd trunk_backward(const ParamSet& params, const TrunkParams& trunk,
                        const TrunkCache& cache, const MatrixXd& d_out, ParamSet* grads) {
    MatrixXd dh = d_out;
    for (int b = trunk.shape.num_blocks - 1; b >= 0; --b) {
        const auto& blk = trunk.blocks[static_cast<std::size_t>(b)];
        const auto& bc = cache.blocks[static_cast<std::size_t>(b)];
        if (cache.drop_masks)
            dh = dh.cwiseProduct((*cache.drop_masks)[static_cast<std::size_t>(b) + 1]);

        // Branch: t2 = W2 silu(ln2(W1 silu(ln1 x) + b1)) + b2, out = x + t2.
        MatrixXd dt = dh;
        if (grads) {
            (*grads)[blk.w2] += dt * bc.lin2_in.transpose();
            (*grads)[blk.b2].col(0) += dt.rowwise().sum();
        }
        dt = params[blk.w2].transpose() * dt;
        dt = silu_backward(bc.silu2_in, dt);
        {
            VectorXd* dgain = nullptr;
            VectorXd* dbias = nullptr;
            VectorXd dg, db;
            if (grads) {
                dg = VectorXd::Zero(params[blk.ln2_g].rows());
                db = VectorXd::Zero(params[blk.ln2_b].rows());
                dgain = &dg;
                dbias = &db;
            }
            dt = layernorm_backward(params[blk.ln2_g].col(0), bc.ln2, dt, dgain, dbias);
            if (grads) {
                (*grads)[blk.ln2_g].col(0) += dg;
                (*grads)[blk.ln2_b].col(0) += db;
            }
        }
        if (grads) {
            (*grads)[blk.w1] += dt * bc.lin1_in.transpose();
            (*grads)[blk.b1].col(0) += dt.rowwise().sum();
        }
        dt = params[blk.w1].transpose() * dt;
        dt = silu_backward(bc.silu1_in, dt);
        {
            VectorXd* dgain = nullptr;
            VectorXd* dbias = nullptr;
            VectorXd dg, db;
            if (grads) {
                dg = VectorXd::Zero(params[blk.ln1_g].rows());
                db = VectorXd::Zero(params[blk.ln1_b].rows());
                dgain = &dg;
                dbias = &db;
            }
            dt = layernorm_backward(params[blk.ln1_g].col(0), bc.ln1, dt, dgain, dbias);
            if (grads) {
                (*grads)[blk.ln1_g].col(0) += dg;
                (*grads)[blk.ln1_b].col(0) += db;
            }
        }
        dh = dh + dt;  // skip connection
    }

    if (cache.drop_masks) dh = dh.cwiseProduct((*cache.drop_masks)[0]);
    dh = silu_backward(cache.proj_out, dh);
    if (grads) {
        (*grads)[trunk.w_in] += dh * cache.x.transpose();
        (*grads)[trunk.b_in].col(0) += dh.rowwise().sum();
    }
    return params[trunk.w_in].transpose() * dh;
}

void init_linear(ParamSet& params, int w_id, int b_id, Rng& rng) {
    auto& w = params[w_id];
    const double scale = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * rng.normal();
    params[b_id].setZero();
}

void init_trunk(ParamSet& params, const TrunkParams& trunk, Rng& rng) {
    init_linear(params, trunk.w_in, trunk.b_in, rng);
    for (const auto& blk : trunk.blocks) {
        params[blk.ln1_g].setOnes();
        params[blk.ln1_b].setZero();
        init_linear(params, blk.w1, blk.b1, rng);
        params[blk.ln2_g].setOnes();
        params[blk.ln2_b].setZero();
        init_linear(params, blk.w2, blk.b2, rng);
    }
}

}  // namespace matfield::nn
