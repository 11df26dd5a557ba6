#include "matfield/fieldpred.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "matfield/rng.hpp"

namespace matfield {

using Eigen::MatrixXd;

PredictorHead::PredictorHead(int channels, int hidden_width, std::uint64_t init_seed)
    : in_channels(channels), hidden(hidden_width) {
    w1 = params.add("head.w1", hidden_width, channels);
    b1 = params.add("head.b1", hidden_width, 1);
    w2 = params.add("head.w2", hidden_width, hidden_width);
    b2 = params.add("head.b2", hidden_width, 1);
    w3 = params.add("head.w3", 2, hidden_width);
    b3 = params.add("head.b3", 2, 1);
    Rng rng(init_seed);
    nn::init_linear(params, w1, b1, rng);
    nn::init_linear(params, w2, b2, rng);
    nn::init_linear(params, w3, b3, rng);
}

Eigen::MatrixXd head_forward(const PredictorHead& h, const Eigen::MatrixXd& features,
                             HeadCache* cache) {
    if (features.rows() != h.in_channels)
        throw std::invalid_argument("head_forward: feature width mismatch");
    HeadCache local;
    HeadCache& c = cache ? *cache : local;
    c.x = features;
    MatrixXd t = h.params[h.w1] * features;
    t.colwise() += h.params[h.b1].col(0);
    c.pre1 = t;
    t = nn::silu_forward(t);
    MatrixXd t2 = h.params[h.w2] * t;
    t2.colwise() += h.params[h.b2].col(0);
    c.pre2 = t2;
    t2 = nn::silu_forward(t2);
    MatrixXd z = h.params[h.w3] * t2;
    z.colwise() += h.params[h.b3].col(0);
    nn::require_finite(z, "predictor head output");
    return z;
}

void head_backward(const PredictorHead& h, const HeadCache& cache,
                   const Eigen::MatrixXd& d_out, nn::ParamSet* grads) {
    const MatrixXd a1 = nn::silu_forward(cache.pre1);
    const MatrixXd a2 = nn::silu_forward(cache.pre2);
    if (grads) {
        (*grads)[h.w3] += d_out * a2.transpose();
        (*grads)[h.b3].col(0) += d_out.rowwise().sum();
    }
    MatrixXd dt = h.params[h.w3].transpose() * d_out;
    dt = nn::silu_backward(cache.pre2, dt);
    if (grads) {
        (*grads)[h.w2] += dt * a1.transpose();
        (*grads)[h.b2].col(0) += dt.rowwise().sum();
    }
    dt = h.params[h.w2].transpose() * dt;
    dt = nn::silu_backward(cache.pre1, dt);
    if (grads) {
        (*grads)[h.w1] += dt * cache.x.transpose();
        (*grads)[h.b1].col(0) += dt.rowwise().sum();
    }
}

void validate_annotated(const AnnotatedVoxelSet& data) {
    const std::size_t n = data.vox.centers.size();
    if (n == 0) throw std::invalid_argument("annotated voxel set is empty");
    if (static_cast<std::size_t>(data.features.values.cols()) != n ||
        data.materials.size() != n)
        throw std::invalid_argument("annotated voxel set has misaligned lengths");
    for (const auto& t : data.materials) require_valid_triplet(t, "annotated voxel set");
}

std::vector<std::size_t> stochastic_subsample(std::size_t count, std::size_t cap,
                                              std::uint64_t epoch_seed) {
    if (count < 1 || cap < 1)
        throw std::invalid_argument("stochastic_subsample: count and cap must be >= 1");
    if (count <= cap) {
        std::vector<std::size_t> all(count);
        for (std::size_t i = 0; i < count; ++i) all[i] = i;
        return all;
    }
    Rng rng(epoch_seed);
    return rng.sample_without_replacement(count, cap);
}

double field_loss(const PredictorHead& h, const MatVaeModel& matvae,
                  const AnnotatedVoxelSet& data, const std::vector<std::size_t>& subset,
                  nn::ParamSet* grads) {
    validate_annotated(data);
    if (!matvae.normalizer_set)
        throw std::invalid_argument("field_loss: MatVAE has no fitted normalizer");
    const std::size_t n = data.vox.centers.size();
    const auto s = static_cast<Eigen::Index>(subset.size());
    if (s == 0) throw std::invalid_argument("field_loss: empty subset");

    MatrixXd feats(h.in_channels, s);
    MatrixXd target(3, s);
    for (Eigen::Index i = 0; i < s; ++i) {
        const std::size_t vi = subset[static_cast<std::size_t>(i)];
        if (vi >= n) throw std::invalid_argument("field_loss: subset index out of range");
        feats.col(i) = data.features.values.col(static_cast<Eigen::Index>(vi));
        const auto xn = normalize(data.materials[vi], matvae.normalizer);
        target.col(i) = Eigen::Vector3d(xn[0], xn[1], xn[2]);
    }

    HeadCache hcache;
    const MatrixXd z = head_forward(h, feats, &hcache);
    DecoderCache dcache;
    const MatrixXd xhat = matvae_decoder_forward(matvae, z, &dcache);
    const double loss = (xhat - target).squaredNorm() / static_cast<double>(s);

    if (grads) {
        const MatrixXd dxhat = 2.0 * (xhat - target) / static_cast<double>(s);
        const MatrixXd dz = matvae_decoder_backward_input(matvae, dcache, dxhat);
        head_backward(h, hcache, dz, grads);
    }
    return loss;
}

PredictorHead train_head(const AnnotatedVoxelSet& data, const MatVaeModel& matvae,
                         const HeadHyperparams& hyper, HeadTrainLog* log) {
    validate_annotated(data);
    nn::keep_large_allocations_on_heap();
    PredictorHead head(static_cast<int>(data.features.values.rows()), hyper.hidden,
                       hyper.seed);

    nn::AdamW opt;
    opt.weight_decay = hyper.weight_decay;
    opt.init(head.params);
    nn::ParamSet grads = nn::ParamSet::zeros_like(head.params);
    Rng rng(hyper.seed + 1);

    const std::size_t n = data.vox.centers.size();
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        double lr = hyper.lr;
        if (hyper.epochs > 1) {
            const double t = static_cast<double>(epoch) / static_cast<double>(hyper.epochs - 1);
            lr = hyper.lr_final +
                 0.5 * (hyper.lr - hyper.lr_final) * (1.0 + std::cos(std::numbers::pi * t));
        }
        auto subset = stochastic_subsample(
            n, hyper.voxel_cap, hyper.seed + static_cast<std::uint64_t>(epoch) + 1);
        rng.shuffle(subset);

        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < subset.size();
             start += static_cast<std::size_t>(hyper.batch)) {
            const std::size_t end =
                std::min(subset.size(), start + static_cast<std::size_t>(hyper.batch));
            std::vector<std::size_t> batch(subset.begin() + static_cast<std::ptrdiff_t>(start),
                                           subset.begin() + static_cast<std::ptrdiff_t>(end));
            grads.set_zero();
            const double loss = field_loss(head, matvae, data, batch, &grads);
            if (!std::isfinite(loss))
                throw std::runtime_error("train_head: non-finite loss (divergence)");
            nn::clip_global_norm(grads, hyper.grad_clip);
            opt.step(head.params, grads, lr);
            epoch_loss += loss;
            ++batches;
        }
        if (log && batches > 0) log->per_epoch_loss.push_back(epoch_loss / batches);
    }
    return head;
}

std::vector<MaterialTriplet> predict_field(const PredictorHead& h, const MatVaeModel& matvae,
                                           const VoxelFeatures& features) {
    const MatrixXd z = head_forward(h, features.values);
    return matvae_decode_batch(matvae, z);
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

}  // namespace

std::string head_to_json(const PredictorHead& h) {
    nlohmann::json j;
    j["version"] = 1;
    j["meta"] = {{"in_channels", h.in_channels}, {"hidden", h.hidden}};
    nlohmann::json tensors = nlohmann::json::array();
    for (std::size_t i = 0; i < h.params.tensor_count(); ++i)
        tensors.push_back({{"name", h.params.name(static_cast<int>(i))},
                           {"data", tensor_to_json(h.params[static_cast<int>(i)])}});
    j["tensors"] = std::move(tensors);
    return j.dump(1);
}

PredictorHead head_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("head checkpoint parse failure: ") + e.what());
    }
    if (j.value("version", 0) != 1)
        throw std::invalid_argument("head checkpoint: unsupported version");
    PredictorHead h(j.at("meta").at("in_channels").get<int>(),
                    j.at("meta").at("hidden").get<int>(), 0);
    for (const auto& entry : j.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        bool found = false;
        for (std::size_t i = 0; i < h.params.tensor_count(); ++i) {
            if (h.params.name(static_cast<int>(i)) != name) continue;
            auto& t = h.params[static_cast<int>(i)];
            const auto& rows = entry.at("data");
            if (static_cast<Eigen::Index>(rows.size()) != t.rows())
                throw std::invalid_argument("head checkpoint tensor '" + name +
                                            "' has wrong shape");
            for (Eigen::Index r = 0; r < t.rows(); ++r) {
                const auto& row = rows[static_cast<std::size_t>(r)];
                if (static_cast<Eigen::Index>(row.size()) != t.cols())
                    throw std::invalid_argument("head checkpoint tensor '" + name +
                                                "' has wrong shape");
                for (Eigen::Index c = 0; c < t.cols(); ++c)
                    t(r, c) = row[static_cast<std::size_t>(c)].get<double>();
            }
            found = true;
            break;
        }
        if (!found)
            throw std::invalid_argument("head checkpoint: unknown tensor '" + name + "'");
    }
    return h;
}

void head_save(const PredictorHead& h, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write head checkpoint '" + path + "'");
    out << head_to_json(h);
}

PredictorHead head_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open head checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return head_from_json(ss.str());
}

}  // namespace matfield
