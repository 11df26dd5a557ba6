#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "matfield/rng.hpp"

namespace matfield::nn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Named parameter tensors with a flat scalar addressing scheme. The flat view
// drives the optimizer, global-norm clipping and finite-difference sweeps.
class ParamSet {
public:
    int add(const std::string& name, int rows, int cols);

    MatrixXd& operator[](int id) { return tensors_[id]; }
    const MatrixXd& operator[](int id) const { return tensors_[id]; }

    std::size_t tensor_count() const { return tensors_.size(); }
    const std::string& name(int id) const { return names_[id]; }

    std::size_t scalar_count() const;
    double get_scalar(std::size_t flat) const;
    void set_scalar(std::size_t flat, double v);

    void set_zero();
    static ParamSet zeros_like(const ParamSet& other);

    double squared_norm() const;

    std::vector<MatrixXd>& tensors() { return tensors_; }
    const std::vector<MatrixXd>& tensors() const { return tensors_; }

private:
    std::vector<MatrixXd> tensors_;
    std::vector<std::string> names_;
};

// Clips to max_norm measured over every scalar in the set.
void clip_global_norm(ParamSet& grads, double max_norm);

// Decoupled-weight-decay adaptive-moment optimizer.
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    void init(const ParamSet& params);
    void step(ParamSet& params, const ParamSet& grads, double lr);

private:
    ParamSet m_, v_;
    long t_ = 0;
};

double silu(double x);
MatrixXd silu_forward(const MatrixXd& x);
MatrixXd silu_backward(const MatrixXd& x, const MatrixXd& dy);

struct LayerNormCache {
    MatrixXd xhat;
    VectorXd inv_std;
};

// Per-column layer norm with learnable gain/bias.
MatrixXd layernorm_forward(const VectorXd& gain, const VectorXd& bias, const MatrixXd& x,
                           LayerNormCache& cache);
MatrixXd layernorm_backward(const VectorXd& gain, const LayerNormCache& cache,
                            const MatrixXd& dy, VectorXd* dgain, VectorXd* dbias);

// Shared MLP trunk: input projection + SiLU, then residual bottleneck blocks
// with pre-activation layer norm (x + W2 silu(ln2(W1 silu(ln1 x) + b1)) + b2).
// Heads are owned by the callers.
struct TrunkShape {
    int input_dim = 0;
    int hidden = 256;
    int bottleneck = 128;
    int num_blocks = 3;
};

struct TrunkParams {
    TrunkShape shape;
    int w_in = -1, b_in = -1;
    struct Block {
        int ln1_g, ln1_b, w1, b1, ln2_g, ln2_b, w2, b2;
    };
    std::vector<Block> blocks;
};

TrunkParams make_trunk(ParamSet& params, const TrunkShape& shape, const std::string& prefix);

struct TrunkBlockCache {
    MatrixXd x_in;
    LayerNormCache ln1;
    MatrixXd silu1_in;
    MatrixXd lin1_in;
    LayerNormCache ln2;
    MatrixXd silu2_in;
    MatrixXd lin2_in;
};

struct TrunkCache {
    MatrixXd x;
    MatrixXd proj_out;
    std::vector<TrunkBlockCache> blocks;
    const std::vector<MatrixXd>* drop_masks = nullptr;
};

// Dropout masks, one per dropped activation: after the input projection and
// after each block output. Entries are 0 or 1/(1-rate) (inverted dropout).
std::vector<MatrixXd> make_dropout_masks(const TrunkShape& shape, int batch, double rate,
                                         Rng& rng);

MatrixXd trunk_forward(const ParamSet& params, const TrunkParams& trunk, const MatrixXd& x,
                       const std::vector<MatrixXd>* drop_masks, TrunkCache& cache,
                       const char* tag);
MatrixXd trunk_backward(const ParamSet& params, const TrunkParams& trunk,
                        const TrunkCache& cache, const MatrixXd& d_out, ParamSet* grads);

// Deterministic Gaussian init scaled by 1/sqrt(fan_in); layer-norm gains 1.
void init_trunk(ParamSet& params, const TrunkParams& trunk, Rng& rng);
void init_linear(ParamSet& params, int w_id, int b_id, Rng& rng);

void require_finite(const MatrixXd& m, const char* what);

// Training loops churn through batch-sized temporaries; raising the
// allocator's mmap threshold keeps them on the heap instead of paying page
// faults on every step. No-op off glibc.
void keep_large_allocations_on_heap();

}  // namespace matfield::nn
