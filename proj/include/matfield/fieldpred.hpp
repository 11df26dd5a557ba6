#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "matfield/featlift.hpp"
#include "matfield/matvae.hpp"
#include "matfield/voxelizer.hpp"

namespace matfield {

// Per-voxel MLP head mapping lifted features to MatVAE latents:
// c -> hidden -> hidden -> 2 with SiLU on the hidden layers.
struct PredictorHead {
    PredictorHead(int in_channels, int hidden, std::uint64_t init_seed);

    nn::ParamSet params;
    int w1 = -1, b1 = -1, w2 = -1, b2 = -1, w3 = -1, b3 = -1;
    int in_channels = 0;
    int hidden = 128;
};

struct HeadCache {
    Eigen::MatrixXd x;
    Eigen::MatrixXd pre1, pre2;
};

Eigen::MatrixXd head_forward(const PredictorHead& h, const Eigen::MatrixXd& features,
                             HeadCache* cache = nullptr);
void head_backward(const PredictorHead& h, const HeadCache& cache,
                   const Eigen::MatrixXd& d_out, nn::ParamSet* grads);

struct AnnotatedVoxelSet {
    SolidVoxelization vox;
    VoxelFeatures features;
    std::vector<MaterialTriplet> materials;
};

void validate_annotated(const AnnotatedVoxelSet& data);

// All indices when count <= cap, otherwise cap distinct indices drawn without
// replacement; deterministic per epoch_seed. Default cap from the training
// setup: 32768 voxels per object.
inline constexpr std::size_t kDefaultVoxelCap = 32768;
std::vector<std::size_t> stochastic_subsample(std::size_t count, std::size_t cap,
                                              std::uint64_t epoch_seed);

// MSE in normalized space through the frozen MatVAE decoder; gradients flow
// into head parameters only.
double field_loss(const PredictorHead& h, const MatVaeModel& matvae,
                  const AnnotatedVoxelSet& data, const std::vector<std::size_t>& subset,
                  nn::ParamSet* grads);

struct HeadHyperparams {
    int epochs = 300;
    int batch = 256;
    double lr = 1e-3;
    double lr_final = 1e-4;
    double weight_decay = 1e-4;
    double grad_clip = 5.0;
    int hidden = 128;
    std::size_t voxel_cap = kDefaultVoxelCap;
    std::uint64_t seed = 0;
};

struct HeadTrainLog {
    std::vector<double> per_epoch_loss;
};

PredictorHead train_head(const AnnotatedVoxelSet& data, const MatVaeModel& matvae,
                         const HeadHyperparams& hyper, HeadTrainLog* log = nullptr);

// Per-voxel decode of the predicted latents; outputs are valid triplets.
std::vector<MaterialTriplet> predict_field(const PredictorHead& h, const MatVaeModel& matvae,
                                           const VoxelFeatures& features);

// Checkpoint I/O, same JSON tensor convention as the MatVAE checkpoint.
std::string head_to_json(const PredictorHead& h);
PredictorHead head_from_json(const std::string& text);
void head_save(const PredictorHead& h, const std::string& path);
PredictorHead head_load(const std::string& path);

}  // namespace matfield
