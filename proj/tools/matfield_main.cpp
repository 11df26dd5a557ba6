// matfield: voxel material-field toolkit.
//
// Subcommands: mtd sample|dedupe|validate, matvae train|encode|decode|interp|
// sample|reconstruct-report, voxelize mesh|splats, lift, field train|predict,
// metrics field|mass|dist, elasticity eval.
//
// Exit codes: 0 success, 1 usage error, 2 data error. Every randomized
// command takes a required --seed; outputs are byte-identical on re-run.

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Dense>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "matfield/featlift.hpp"
#include "matfield/fieldpred.hpp"
#include "matfield/io.hpp"
#include "matfield/matvae.hpp"
#include "matfield/metrics.hpp"
#include "matfield/mtd.hpp"
#include "matfield/transfer.hpp"
#include "matfield/voxelizer.hpp"

namespace {

using namespace matfield;

bool g_quiet = false;

void note(const std::string& msg) {
    if (!g_quiet) std::cerr << msg << "\n";
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << text;
}

MaterialTriplet parse_triplet_arg(const std::string& arg) {
    std::istringstream ss(arg);
    std::string tok;
    std::vector<double> vals;
    while (std::getline(ss, tok, ','))
        vals.push_back(std::stod(tok));
    if (vals.size() != 3)
        throw std::runtime_error("triplet argument must be 'e_pa,nu,rho_kgm3': got '" +
                                 arg + "'");
    MaterialTriplet t{vals[0], vals[1], vals[2]};
    require_valid_triplet(t, "triplet argument");
    return t;
}

struct MetricRow {
    std::string property;
    std::string metric;
    std::string aggregation;
    double value;
};

std::string rows_to_csv(const std::vector<MetricRow>& rows) {
    std::string out = "property,metric,aggregation,value\n";
    for (const auto& r : rows)
        out += r.property + "," + r.metric + "," + r.aggregation + "," + fmt17(r.value) + "\n";
    return out;
}

std::string rows_to_json(const std::vector<MetricRow>& rows) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows)
        j.push_back({{"property", r.property},
                     {"metric", r.metric},
                     {"aggregation", r.aggregation},
                     {"value", r.value}});
    return j.dump(1) + "\n";
}

std::string emit_rows(const std::vector<MetricRow>& rows, const std::string& format) {
    if (format == "json") return rows_to_json(rows);
    return rows_to_csv(rows);
}

// Latent CSV: header z0,z1.
std::vector<Eigen::Vector2d> read_latents_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line.rfind("z0,z1", 0) != 0)
        throw std::runtime_error("latent csv '" + path + "': missing z0,z1 header");
    std::vector<Eigen::Vector2d> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw std::runtime_error("latent csv '" + path + "': malformed row '" + line + "'");
        out.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
    }
    return out;
}

std::string latents_to_csv(const std::vector<Eigen::Vector2d>& zs) {
    std::string out = "z0,z1\n";
    for (const auto& z : zs) out += fmt17(z.x()) + "," + fmt17(z.y()) + "\n";
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"matfield: solid voxelization, material latent spaces, and "
                 "per-voxel material field tools"};
    app.name("matfield");
    app.require_subcommand(1);
    // Config-file injection relies on later occurrences overriding earlier.
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.add_flag("--quiet", g_quiet, "Suppress informational messages");

    int exit_data_error = 0;  // set to 2 when a handler throws a data error

    // ---- mtd ----
    auto* mtd_cmd = app.add_subcommand("mtd", "Material range database operations");
    mtd_cmd->require_subcommand(1);

    {
        auto* sample = mtd_cmd->add_subcommand("sample", "Sample triplets from a range db");
        auto ranges = std::make_shared<std::string>();
        auto total = std::make_shared<std::size_t>(0);
        auto seed = std::make_shared<std::uint64_t>(0);
        auto out = std::make_shared<std::string>();
        auto do_dedupe = std::make_shared<bool>(false);
        sample->add_option("--ranges", *ranges, "Range db JSON")->required();
        sample->add_option("--total", *total, "Total sample count")->required();
        sample->add_option("--seed", *seed, "RNG seed")->required();
        sample->add_option("--out", *out, "Output triplet CSV ('-' = stdout)");
        sample->add_flag("--dedupe", *do_dedupe, "Drop 6-significant-digit duplicates");
        sample->callback([=]() {
            const MaterialRangeDb db = load_ranges(*ranges);
            auto ts = sample_triplets(db, *total, *seed);
            if (*do_dedupe) ts = dedupe(ts);
            write_text(*out, io::triplets_to_csv(ts));
        });
    }
    {
        auto* dd = mtd_cmd->add_subcommand("dedupe", "Drop near-duplicate triplets");
        auto in = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        dd->add_option("--in", *in, "Input triplet CSV")->required();
        dd->add_option("--out", *out, "Output triplet CSV ('-' = stdout)");
        dd->callback([=]() {
            write_text(*out, io::triplets_to_csv(dedupe(io::read_triplets_csv(*in))));
        });
    }
    {
        auto* val = mtd_cmd->add_subcommand("validate",
                                            "Score triplets against the nearest ranges");
        auto ranges = std::make_shared<std::string>();
        auto in = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto format = std::make_shared<std::string>("csv");
        val->add_option("--ranges", *ranges, "Range db JSON")->required();
        val->add_option("--in", *in, "Input triplet CSV")->required();
        val->add_option("--out", *out, "Output path ('-' = stdout)");
        val->add_option("--format", *format, "csv or json")
            ->check(CLI::IsMember({"csv", "json"}));
        val->callback([=]() {
            const MaterialRangeDb db = load_ranges(*ranges);
            const auto ts = io::read_triplets_csv(*in);
            std::size_t valid = 0;
            nlohmann::json rows = nlohmann::json::array();
            std::string csv = "index,e_err,nu_err,rho_err,valid\n";
            for (std::size_t i = 0; i < ts.size(); ++i) {
                const ValidityError err = validity_error(ts[i], db);
                const bool ok = err.is_zero();
                valid += ok ? 1 : 0;
                csv += std::to_string(i) + "," + fmt17(err.e_err) + "," + fmt17(err.nu_err) +
                       "," + fmt17(err.rho_err) + "," + (ok ? "1" : "0") + "\n";
                rows.push_back({{"index", i},
                                {"e_err", err.e_err},
                                {"nu_err", err.nu_err},
                                {"rho_err", err.rho_err},
                                {"valid", ok}});
            }
            const double frac = ts.empty() ? 0.0
                                           : static_cast<double>(valid) /
                                                 static_cast<double>(ts.size());
            if (*format == "json") {
                nlohmann::json j{{"rows", rows}, {"valid_fraction", frac}};
                write_text(*out, j.dump(1) + "\n");
            } else {
                csv += "# valid_fraction," + fmt17(frac) + "\n";
                write_text(*out, csv);
            }
        });
    }

    // ---- matvae ----
    auto* vae_cmd = app.add_subcommand("matvae", "Material latent space (VAE) operations");
    vae_cmd->require_subcommand(1);

    {
        auto* train = vae_cmd->add_subcommand("train", "Train the material VAE");
        auto triplets = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto hyper = std::make_shared<Hyperparams>();
        train->add_option("--triplets", *triplets, "Training triplet CSV")->required();
        train->add_option("--out", *out, "Checkpoint JSON path")->required();
        train->add_option("--seed", hyper->seed, "RNG seed")->required();
        train->add_option("--epochs", hyper->epochs, "Training epochs");
        train->add_option("--batch", hyper->batch, "Batch size");
        train->add_option("--hidden", hyper->hidden, "Hidden width");
        train->add_option("--lr", hyper->lr, "Initial learning rate");
        train->add_option("--lr-final", hyper->lr_final, "Final learning rate");
        train->add_option("--dropout", hyper->dropout, "Dropout rate");
        train->add_option("--kl-anneal-epochs", hyper->kl_anneal_epochs,
                          "KL weight annealing epochs");
        train->add_option("--recon-scale", hyper->recon_scale,
                          "Gaussian-likelihood weight on the reconstruction term");
        train->callback([=]() {
            const auto ts = io::read_triplets_csv(*triplets);
            TrainLog log;
            const MatVaeModel model = matvae_train(ts, *hyper, &log);
            matvae_save(model, *out);
            if (!log.per_epoch.empty())
                note("final epoch: recon=" + std::to_string(log.per_epoch.back().recon) +
                     " total=" + std::to_string(log.per_epoch.back().total));
        });
    }
    {
        auto* enc = vae_cmd->add_subcommand("encode", "Encode triplets to latent codes");
        auto model_path = std::make_shared<std::string>();
        auto in = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        enc->add_option("--model", *model_path, "Checkpoint JSON")->required();
        enc->add_option("--in", *in, "Triplet CSV")->required();
        enc->add_option("--out", *out, "Latent CSV ('-' = stdout)");
        enc->callback([=]() {
            const MatVaeModel model = matvae_load(*model_path);
            std::vector<Eigen::Vector2d> zs;
            for (const auto& t : io::read_triplets_csv(*in))
                zs.push_back(matvae_encode(model, t).z);
            write_text(*out, latents_to_csv(zs));
        });
    }
    {
        auto* dec = vae_cmd->add_subcommand("decode", "Decode latent codes to triplets");
        auto model_path = std::make_shared<std::string>();
        auto in = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        dec->add_option("--model", *model_path, "Checkpoint JSON")->required();
        dec->add_option("--in", *in, "Latent CSV with z0,z1 header")->required();
        dec->add_option("--out", *out, "Triplet CSV ('-' = stdout)");
        dec->callback([=]() {
            const MatVaeModel model = matvae_load(*model_path);
            std::vector<MaterialTriplet> ts;
            for (const auto& z : read_latents_csv(*in)) {
                LatentCode code;
                code.z = z;
                ts.push_back(matvae_decode(model, code));
            }
            write_text(*out, io::triplets_to_csv(ts));
        });
    }
    {
        auto* interp = vae_cmd->add_subcommand("interp", "Interpolate between two materials");
        auto model_path = std::make_shared<std::string>();
        auto a = std::make_shared<std::string>();
        auto b = std::make_shared<std::string>();
        auto steps = std::make_shared<int>(5);
        auto naive = std::make_shared<bool>(false);
        auto out = std::make_shared<std::string>();
        interp->add_option("--model", *model_path, "Checkpoint JSON (omit with --naive)");
        interp->add_option("--a", *a, "Start triplet 'e_pa,nu,rho_kgm3'")->required();
        interp->add_option("--b", *b, "End triplet 'e_pa,nu,rho_kgm3'")->required();
        interp->add_option("--steps", *steps, "Number of points including endpoints");
        interp->add_flag("--naive", *naive, "Linear interpolation of raw properties");
        interp->add_option("--out", *out, "Triplet CSV ('-' = stdout)");
        interp->callback([=]() {
            const MaterialTriplet ta = parse_triplet_arg(*a);
            const MaterialTriplet tb = parse_triplet_arg(*b);
            if (*steps < 2) throw std::runtime_error("interp: steps must be >= 2");
            std::vector<MaterialTriplet> ts;
            if (*naive) {
                for (int k = 0; k < *steps; ++k)
                    ts.push_back(naive_interpolate(
                        ta, tb, static_cast<double>(k) / static_cast<double>(*steps - 1)));
            } else {
                if (model_path->empty())
                    throw CLI::ValidationError("interp", "--model is required without --naive");
                const MatVaeModel model = matvae_load(*model_path);
                ts = matvae_interpolate(model, ta, tb, *steps);
            }
            write_text(*out, io::triplets_to_csv(ts));
        });
    }
    {
        auto* sample = vae_cmd->add_subcommand("sample", "Decode prior samples");
        auto model_path = std::make_shared<std::string>();
        auto count = std::make_shared<std::size_t>(0);
        auto seed = std::make_shared<std::uint64_t>(0);
        auto out = std::make_shared<std::string>();
        sample->add_option("--model", *model_path, "Checkpoint JSON")->required();
        sample->add_option("--count", *count, "Number of samples")->required();
        sample->add_option("--seed", *seed, "RNG seed")->required();
        sample->add_option("--out", *out, "Triplet CSV ('-' = stdout)");
        sample->callback([=]() {
            const MatVaeModel model = matvae_load(*model_path);
            write_text(*out, io::triplets_to_csv(matvae_sample_prior(model, *count, *seed)));
        });
    }
    {
        auto* rep = vae_cmd->add_subcommand("reconstruct-report",
                                            "Reconstruction metrics over a triplet CSV");
        auto model_path = std::make_shared<std::string>();
        auto in = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto format = std::make_shared<std::string>("csv");
        rep->add_option("--model", *model_path, "Checkpoint JSON")->required();
        rep->add_option("--in", *in, "Triplet CSV")->required();
        rep->add_option("--out", *out, "Output path ('-' = stdout)");
        rep->add_option("--format", *format, "csv or json")
            ->check(CLI::IsMember({"csv", "json"}));
        rep->callback([=]() {
            const MatVaeModel model = matvae_load(*model_path);
            const auto ts = io::read_triplets_csv(*in);
            if (ts.empty()) throw std::runtime_error("reconstruct-report: empty input");
            std::array<double, 3> mse{0, 0, 0};
            std::vector<std::vector<std::pair<double, double>>> pairs_e(1), pairs_nu(1),
                pairs_rho(1);
            for (const auto& t : ts) {
                const MaterialTriplet r = matvae_decode(model, matvae_encode(model, t));
                const auto xn = normalize(t, model.normalizer);
                const auto yn = normalize(r, model.normalizer);
                for (std::size_t k = 0; k < 3; ++k)
                    mse[k] += (xn[k] - yn[k]) * (xn[k] - yn[k]) / double(ts.size());
                pairs_e[0].push_back({t.e, r.e});
                pairs_nu[0].push_back({t.nu, r.nu});
                pairs_rho[0].push_back({t.rho, r.rho});
            }
            std::vector<MetricRow> rows;
            rows.push_back({"e", "normalized_mse", "global", mse[0]});
            rows.push_back({"nu", "normalized_mse", "global", mse[1]});
            rows.push_back({"rho", "normalized_mse", "global", mse[2]});
            const auto add_stats = [&](const std::string& prop, const auto& pairs) {
                const ErrorStats s = pointwise_errors(pairs, Aggregation::kGlobalVoxelMean);
                rows.push_back({prop, "ade", "global", s.ade});
                rows.push_back({prop, "alde", "global", s.alde});
                rows.push_back({prop, "alre", "global", s.alre});
                rows.push_back({prop, "are", "global", s.are});
                rows.push_back({prop, "mnre", "global", s.mnre});
            };
            add_stats("e", pairs_e);
            add_stats("nu", pairs_nu);
            add_stats("rho", pairs_rho);
            write_text(*out, emit_rows(rows, *format));
        });
    }

    // ---- voxelize ----
    auto* vox_cmd = app.add_subcommand("voxelize", "Solid voxelization");
    vox_cmd->require_subcommand(1);
    {
        auto* mesh = vox_cmd->add_subcommand("mesh", "Voxelize a segmented OBJ mesh");
        auto in = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto r = std::make_shared<int>(64);
        auto k_seg = std::make_shared<std::int64_t>(-1);
        auto k_all = std::make_shared<std::int64_t>(-1);
        auto seed = std::make_shared<std::int64_t>(-1);
        mesh->add_option("input", *in, "OBJ path")->required();
        mesh->add_option("--r", *r, "Grid resolution")->required();
        mesh->add_option("--out", *out, "Output VOXF path")->required();
        mesh->add_option("--k-seg", *k_seg, "Per-segment voxel cap");
        mesh->add_option("--k-all", *k_all, "Global voxel cap");
        mesh->add_option("--seed", *seed, "RNG seed (required with caps)");
        mesh->callback([=]() {
            const bool randomized = *k_seg >= 0 || *k_all >= 0;
            if (randomized && *seed < 0)
                throw CLI::ValidationError("voxelize mesh",
                                           "--seed is required when --k-seg/--k-all are set");
            const SegmentedMesh m = io::read_obj(*in);
            const auto opt = [](std::int64_t v) {
                return v >= 0 ? std::optional<std::size_t>(static_cast<std::size_t>(v))
                              : std::nullopt;
            };
            const SolidVoxelization vox = voxelize_segmented(
                m, *r, opt(*k_seg), opt(*k_all),
                *seed >= 0 ? static_cast<std::uint64_t>(*seed) : 0);
            if (vox.centers.empty())
                note("warning: empty interior (non-watertight mesh or resolution too low)");
            io::write_voxf(vox, *out);
            note("wrote " + std::to_string(vox.centers.size()) + " voxels to " + *out);
        });
    }
    {
        auto* splats = vox_cmd->add_subcommand("splats", "Voxelize a Gaussian splat set");
        auto in = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto r = std::make_shared<int>(64);
        auto views = std::make_shared<int>(64);
        splats->add_option("input", *in, "Splat CSV path")->required();
        splats->add_option("--r", *r, "Grid resolution")->required();
        splats->add_option("--views", *views, "Carving view count");
        splats->add_option("--out", *out, "Output VOXF path")->required();
        splats->callback([=]() {
            const auto s = io::read_splats_csv(*in);
            const SolidVoxelization vox = voxelize_splats(s, *r, *views);
            io::write_voxf(vox, *out);
            note("wrote " + std::to_string(vox.centers.size()) + " voxels to " + *out);
        });
    }

    // ---- lift ----
    {
        auto* lift = app.add_subcommand("lift", "Lift per-view features onto voxels");
        auto vox_path = std::make_shared<std::string>();
        auto cams = std::make_shared<std::string>();
        auto features = std::make_shared<std::vector<std::string>>();
        auto out = std::make_shared<std::string>();
        lift->add_option("--vox", *vox_path, "VOXF voxelization")->required();
        lift->add_option("--cameras", *cams, "Camera JSON array")->required();
        lift->add_option("--features", *features, "VFMP feature maps, one per camera")
            ->required()
            ->expected(-1);
        lift->add_option("--out", *out, "Output VFEA path")->required();
        lift->callback([=]() {
            const SolidVoxelization vox = io::read_voxf(*vox_path);
            const auto views = io::read_cameras_json(*cams);
            if (views.size() != features->size())
                throw std::runtime_error("lift: need one feature map per camera (" +
                                         std::to_string(views.size()) + " cameras, " +
                                         std::to_string(features->size()) + " maps)");
            std::vector<std::pair<CameraView, FeatureMap>> pairs;
            for (std::size_t i = 0; i < views.size(); ++i)
                pairs.emplace_back(views[i], io::read_vfmp((*features)[i]));
            io::write_vfea(lift_features(vox, pairs), *out);
        });
    }

    // ---- field ----
    auto* field_cmd = app.add_subcommand("field", "Per-voxel material field prediction");
    field_cmd->require_subcommand(1);
    {
        auto* train = field_cmd->add_subcommand("train", "Train the predictor head");
        auto vox_path = std::make_shared<std::string>();
        auto feats = std::make_shared<std::string>();
        auto mats = std::make_shared<std::string>();
        auto vae_path = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto hyper = std::make_shared<HeadHyperparams>();
        train->add_option("--vox", *vox_path, "VOXF voxelization")->required();
        train->add_option("--features", *feats, "VFEA voxel features")->required();
        train->add_option("--materials", *mats, "Ground-truth sidecar CSV")->required();
        train->add_option("--matvae", *vae_path, "Frozen MatVAE checkpoint")->required();
        train->add_option("--out", *out, "Head checkpoint path")->required();
        train->add_option("--seed", hyper->seed, "RNG seed")->required();
        train->add_option("--epochs", hyper->epochs, "Training epochs");
        train->add_option("--batch", hyper->batch, "Batch size");
        train->add_option("--hidden", hyper->hidden, "Hidden width");
        train->add_option("--lr", hyper->lr, "Initial learning rate");
        train->add_option("--voxel-cap", hyper->voxel_cap, "Per-epoch stochastic voxel cap");
        train->callback([=]() {
            AnnotatedVoxelSet data;
            data.vox = io::read_voxf(*vox_path);
            data.features = io::read_vfea(*feats);
            for (const auto& row : io::read_materials_csv(*mats)) {
                if (row.voxel_index != data.materials.size())
                    throw std::runtime_error("field train: sidecar rows must be dense in "
                                             "voxel order");
                data.materials.push_back(row.triplet);
            }
            const MatVaeModel vae = matvae_load(*vae_path);
            HeadTrainLog log;
            const PredictorHead head = train_head(data, vae, *hyper, &log);
            head_save(head, *out);
            if (!log.per_epoch_loss.empty())
                note("final epoch loss: " + std::to_string(log.per_epoch_loss.back()));
        });
    }
    {
        auto* predict = field_cmd->add_subcommand("predict", "Predict per-voxel materials");
        auto feats = std::make_shared<std::string>();
        auto head_path = std::make_shared<std::string>();
        auto vae_path = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        predict->add_option("--features", *feats, "VFEA voxel features")->required();
        predict->add_option("--head", *head_path, "Head checkpoint")->required();
        predict->add_option("--matvae", *vae_path, "MatVAE checkpoint")->required();
        predict->add_option("--out", *out, "Output materials sidecar CSV")->required();
        predict->callback([=]() {
            const VoxelFeatures features = io::read_vfea(*feats);
            const PredictorHead head = head_load(*head_path);
            const MatVaeModel vae = matvae_load(*vae_path);
            io::write_materials_csv(predict_field(head, vae, features), *out);
        });
    }

    // ---- metrics ----
    auto* metrics_cmd = app.add_subcommand("metrics", "Evaluation metrics");
    metrics_cmd->require_subcommand(1);
    {
        auto* field = metrics_cmd->add_subcommand("field",
                                                  "Field error metrics (pred vs gt)");
        auto pred = std::make_shared<std::vector<std::string>>();
        auto gt = std::make_shared<std::vector<std::string>>();
        auto out = std::make_shared<std::string>();
        auto format = std::make_shared<std::string>("csv");
        auto base10 = std::make_shared<bool>(false);
        field->add_option("--pred", *pred, "Predicted sidecar CSVs, one per object")
            ->required()
            ->expected(-1);
        field->add_option("--gt", *gt, "Ground-truth sidecar CSVs, one per object")
            ->required()
            ->expected(-1);
        field->add_option("--out", *out, "Output path ('-' = stdout)");
        field->add_option("--format", *format, "csv or json")
            ->check(CLI::IsMember({"csv", "json"}));
        field->add_flag("--log10", *base10, "Use base-10 logs for ALDE/ALRE");
        field->callback([=]() {
            if (pred->size() != gt->size())
                throw std::runtime_error("metrics field: need matching --pred/--gt counts");
            std::vector<std::vector<std::pair<double, double>>> pe, pn, pr;
            for (std::size_t o = 0; o < pred->size(); ++o) {
                const auto p = io::read_materials_csv((*pred)[o]);
                const auto g = io::read_materials_csv((*gt)[o]);
                if (p.size() != g.size())
                    throw std::runtime_error("metrics field: object " + std::to_string(o) +
                                             " length mismatch");
                std::vector<std::pair<double, double>> oe, on, orho;
                for (std::size_t i = 0; i < p.size(); ++i) {
                    oe.push_back({g[i].triplet.e, p[i].triplet.e});
                    on.push_back({g[i].triplet.nu, p[i].triplet.nu});
                    orho.push_back({g[i].triplet.rho, p[i].triplet.rho});
                }
                pe.push_back(oe);
                pn.push_back(on);
                pr.push_back(orho);
            }
            const LogBase base = *base10 ? LogBase::kBase10 : LogBase::kNatural;
            std::vector<MetricRow> rows;
            const auto add = [&](const std::string& prop, const auto& pairs) {
                for (const auto agg : {Aggregation::kPerObjectMean,
                                       Aggregation::kGlobalVoxelMean}) {
                    const std::string tag =
                        agg == Aggregation::kPerObjectMean ? "per_object" : "global";
                    const ErrorStats s = pointwise_errors(pairs, agg, base);
                    rows.push_back({prop, "ade", tag, s.ade});
                    rows.push_back({prop, "alde", tag, s.alde});
                    rows.push_back({prop, "alre", tag, s.alre});
                    rows.push_back({prop, "are", tag, s.are});
                    rows.push_back({prop, "mnre", tag, s.mnre});
                }
            };
            add("e", pe);
            add("nu", pn);
            add("rho", pr);
            write_text(*out, emit_rows(rows, *format));
        });
    }
    {
        auto* mass = metrics_cmd->add_subcommand("mass", "Mass from mean density x volume");
        auto mats = std::make_shared<std::string>();
        auto volume = std::make_shared<double>(0.0);
        auto out = std::make_shared<std::string>();
        auto format = std::make_shared<std::string>("csv");
        mass->add_option("--materials", *mats, "Materials sidecar CSV")->required();
        mass->add_option("--volume", *volume, "Object volume in m^3")->required();
        mass->add_option("--out", *out, "Output path ('-' = stdout)");
        mass->add_option("--format", *format, "csv or json")
            ->check(CLI::IsMember({"csv", "json"}));
        mass->callback([=]() {
            std::vector<double> densities;
            for (const auto& row : io::read_materials_csv(*mats))
                densities.push_back(row.triplet.rho);
            const double kg = mass_estimate(densities, *volume);
            std::vector<MetricRow> rows{{"rho", "mass_kg", "global", kg}};
            write_text(*out, emit_rows(rows, *format));
        });
    }
    {
        auto* dist = metrics_cmd->add_subcommand("dist",
                                                 "Distribution distances between triplet sets");
        auto a = std::make_shared<std::string>();
        auto b = std::make_shared<std::string>();
        auto property = std::make_shared<std::string>("e");
        auto out = std::make_shared<std::string>();
        auto format = std::make_shared<std::string>("csv");
        auto bins = std::make_shared<int>(kDefaultKlBins);
        auto log_space = std::make_shared<bool>(false);
        dist->add_option("--a", *a, "First triplet CSV")->required();
        dist->add_option("--b", *b, "Second triplet CSV")->required();
        dist->add_option("--property", *property, "e, nu, or rho")
            ->check(CLI::IsMember({"e", "nu", "rho"}));
        dist->add_option("--bins", *bins, "Histogram bins for KL");
        dist->add_flag("--log10", *log_space, "Compare log10 values (for e and rho)");
        dist->add_option("--out", *out, "Output path ('-' = stdout)");
        dist->add_option("--format", *format, "csv or json")
            ->check(CLI::IsMember({"csv", "json"}));
        dist->callback([=]() {
            auto extract = [&](const std::string& path) {
                std::vector<double> vals;
                for (const auto& t : io::read_triplets_csv(path)) {
                    double v = *property == "e" ? t.e : (*property == "nu" ? t.nu : t.rho);
                    if (*log_space && *property != "nu") v = std::log10(v);
                    vals.push_back(v);
                }
                return vals;
            };
            const auto va = extract(*a);
            const auto vb = extract(*b);
            std::vector<MetricRow> rows;
            rows.push_back({*property, "w1", "global", wasserstein_1d(va, vb, 1)});
            rows.push_back({*property, "w2", "global", wasserstein_1d(va, vb, 2)});
            rows.push_back({*property, "kl", "global", kl_histogram(va, vb, *bins)});
            write_text(*out, emit_rows(rows, *format));
        });
    }

    // ---- elasticity ----
    auto* elast_cmd = app.add_subcommand("elasticity", "Pointwise constitutive evaluation");
    elast_cmd->require_subcommand(1);
    {
        auto* eval = elast_cmd->add_subcommand("eval",
                                               "Lame parameters, energy and stress at F");
        auto e = std::make_shared<double>(0.0);
        auto nu = std::make_shared<double>(0.0);
        auto f_vals = std::make_shared<std::vector<double>>();
        auto law = std::make_shared<std::string>("corotational");
        auto out = std::make_shared<std::string>();
        auto format = std::make_shared<std::string>("csv");
        eval->add_option("--e", *e, "Young's modulus, Pa")->required();
        eval->add_option("--nu", *nu, "Poisson's ratio")->required();
        eval->add_option("--f", *f_vals, "Deformation gradient, 9 row-major floats")
            ->expected(9);
        eval->add_option("--law", *law, "corotational or neohookean")
            ->check(CLI::IsMember({"corotational", "neohookean"}));
        eval->add_option("--out", *out, "Output path ('-' = stdout)");
        eval->add_option("--format", *format, "csv or json")
            ->check(CLI::IsMember({"csv", "json"}));
        eval->callback([=]() {
            const LameParams lp = lame(*e, *nu);
            Eigen::Matrix3d f = Eigen::Matrix3d::Identity();
            if (!f_vals->empty())
                for (int r = 0; r < 3; ++r)
                    for (int c = 0; c < 3; ++c)
                        f(r, c) = (*f_vals)[static_cast<std::size_t>(r * 3 + c)];
            const StressEnergy se = *law == "corotational"
                                        ? corotational(f, lp.lambda, lp.mu)
                                        : neo_hookean(f, lp.lambda, lp.mu);
            if (*format == "json") {
                nlohmann::json tau = nlohmann::json::array();
                for (int r = 0; r < 3; ++r)
                    for (int c = 0; c < 3; ++c) tau.push_back(se.stress(r, c));
                nlohmann::json j{{"lambda_pa", lp.lambda},
                                 {"mu_pa", lp.mu},
                                 {"energy_pa", se.energy},
                                 {"tau_pa", tau},
                                 {"law", *law}};
                write_text(*out, j.dump(1) + "\n");
            } else {
                std::string text = "quantity,value\n";
                text += "lambda_pa," + fmt17(lp.lambda) + "\n";
                text += "mu_pa," + fmt17(lp.mu) + "\n";
                text += "energy_pa," + fmt17(se.energy) + "\n";
                for (int r = 0; r < 3; ++r)
                    for (int c = 0; c < 3; ++c)
                        text += "tau_" + std::to_string(r) + std::to_string(c) + "," +
                                fmt17(se.stress(r, c)) + "\n";
                write_text(*out, text);
            }
        });
    }

    // JSON config support: --config <path> holds {"flag": value} entries for
    // the invoked subcommand; explicit flags win.
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                       args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (!config_path.empty()) {
        std::ifstream in(config_path, std::ios::binary);
        if (!in) {
            std::cerr << "error: cannot open config '" << config_path << "'\n";
            return 1;
        }
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& ex) {
            std::cerr << "error: config parse failure: " << ex.what() << "\n";
            return 1;
        }
        // Inject right after the subcommand names (leading non-dash tokens).
        std::size_t insert_at = 0;
        while (insert_at < args.size() && !args[insert_at].empty() &&
               args[insert_at][0] != '-')
            ++insert_at;
        std::vector<std::string> injected;
        for (const auto& [key, value] : j.items()) {
            if (value.is_boolean()) {
                if (value.get<bool>()) injected.push_back("--" + key);
            } else if (value.is_string()) {
                injected.push_back("--" + key + "=" + value.get<std::string>());
            } else {
                injected.push_back("--" + key + "=" + value.dump());
            }
        }
        args.insert(args.begin() + static_cast<std::ptrdiff_t>(insert_at),
                    injected.begin(), injected.end());
    }

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return exit_data_error;
}
