// Command-line surface: train / eval / synth / gradcheck / reconstruct.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// divergence, 1 anything else.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "p2sc/common.hpp"
#include "p2sc/data_io.hpp"
#include "p2sc/losses.hpp"
#include "p2sc/model.hpp"
#include "p2sc/ops.hpp"
#include "p2sc/train.hpp"

namespace fs = std::filesystem;
using namespace p2sc;

namespace {

struct TrainArgs {
    std::string config;
    std::string data;
    std::string out;
    int64_t seed = -1;
    std::string ablate;
};

struct EvalArgs {
    std::string ckpt;
    std::string data;
    std::string task;
    std::string out;
};

struct SynthArgs {
    std::string families = "sphere,cube,torus,plane";
    int64_t per_class = 100;
    int64_t points = 256;
    std::string out;
    double jitter = 0.02;
    uint64_t seed = 7;
    double train_frac = 0.8;
};

struct ReconArgs {
    std::string ckpt;
    std::string in;
    std::string out;
};

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<LabeledCloud> load_prepared(const std::string& manifest_path, const ModelConfig& cfg) {
    DatasetManifest manifest = load_manifest(manifest_path);
    std::vector<LabeledCloud> raw = load_dataset(manifest);
    return prepare_dataset(raw, cfg.points_per_cloud, cfg.seed);
}

int run_train(const TrainArgs& args) {
    ModelConfig cfg = ModelConfig::from_json_file(args.config);
    if (args.seed >= 0) cfg.seed = static_cast<uint64_t>(args.seed);
    if (!args.ablate.empty()) cfg = ablation(cfg, args.ablate);
    cfg.validate();

    std::vector<LabeledCloud> prepared = load_prepared(args.data, cfg);
    std::cout << "training on " << prepared.size() << " clouds, " << cfg.num_classes
              << " classes, preset " << cfg.preset << ", seed " << cfg.seed << "\n";

    Model model(cfg);
    std::cout << "parameters: " << model.params().trainable_numel() << " trainable in "
              << model.params().trainable_count() << " tensors\n";
    Trainer trainer(model, std::move(prepared));

    fs::create_directories(args.out);
    {
        std::ofstream cfg_echo(fs::path(args.out) / "config.json");
        cfg_echo << cfg.to_json_string() << "\n";
    }
    std::ofstream csv(fs::path(args.out) / "train_log.csv");
    P2SC_CHECK_AS(csv, DataError, "cannot write train_log.csv under " << args.out);

    for (int64_t e = 0; e < cfg.optim.epochs; ++e) {
        EpochStats s = trainer.run(1, &csv)[0];
        std::cout << "epoch " << s.epoch << "/" << cfg.optim.epochs << "  loss " << s.loss
                  << "  acc " << s.accuracy << "  lr " << s.lr << std::endl;
    }

    TrainerSnapshot snap = trainer.snapshot();
    const std::string ckpt = (fs::path(args.out) / "model.p2ck").string();
    save_checkpoint(ckpt, model, &snap);
    std::cout << "checkpoint written to " << ckpt << "\n";
    return 0;
}

int run_eval(const EvalArgs& args) {
    LoadedCheckpoint loaded = load_checkpoint(args.ckpt);
    Model& model = *loaded.model;
    std::vector<LabeledCloud> prepared = load_prepared(args.data, model.config());

    Metrics metrics;
    if (args.task == "cls") {
        metrics = evaluate_cls(model, prepared);
    } else if (args.task == "retrieval") {
        RetrievalMetrics details;
        metrics = evaluate_retrieval(model, prepared, &details);
        std::string pr_path = args.out;
        if (pr_path.size() > 4 && pr_path.substr(pr_path.size() - 4) == ".csv") {
            pr_path = pr_path.substr(0, pr_path.size() - 4) + "_pr.csv";
        } else {
            pr_path += "_pr.csv";
        }
        write_pr_csv(pr_path, details);
        std::cout << "PR curve written to " << pr_path << "\n";
    } else if (args.task == "seg") {
        metrics = evaluate_seg(model, prepared);
    } else {
        throw ConfigError("unknown task '" + args.task + "' (expected cls|retrieval|seg)");
    }

    write_metrics_csv(args.out, metrics);
    for (const auto& [k, v] : metrics.rows) std::cout << k << " = " << v << "\n";
    std::cout << "metrics written to " << args.out << "\n";
    return 0;
}

int run_synth(const SynthArgs& args) {
    P2SC_CHECK_AS(args.per_class >= 2, ConfigError, "synth: --per-class must be >= 2");
    std::vector<ShapeFamily> families;
    for (const std::string& name : split_csv(args.families)) {
        families.push_back(family_from_name(name));
    }
    P2SC_CHECK_AS(!families.empty(), ConfigError, "synth: no families given");

    fs::create_directories(fs::path(args.out) / "clouds");

    DatasetManifest manifest;
    for (size_t f = 0; f < families.size(); ++f) {
        manifest.class_names.push_back(family_name(families[f]));
        SyntheticSpec spec;
        spec.shape_family = families[f];
        spec.points_per_cloud = args.points;
        spec.jitter_sigma = args.jitter;
        spec.seed = args.seed;
        std::vector<PointCloud> clouds = generate_synthetic(spec, args.per_class);
        for (size_t i = 0; i < clouds.size(); ++i) {
            char leaf[64];
            std::snprintf(leaf, sizeof(leaf), "clouds/%s_%04zu.p2pc",
                          family_name(families[f]), i);
            save_cloud_binary((fs::path(args.out) / leaf).string(), clouds[i]);
            manifest.entries.push_back(ManifestEntry{leaf, static_cast<int>(f), ""});
        }
    }

    save_manifest((fs::path(args.out) / "manifest.json").string(), manifest);
    auto [train_m, test_m] = split_manifest(manifest, args.train_frac, args.seed);
    save_manifest((fs::path(args.out) / "train_manifest.json").string(), train_m);
    save_manifest((fs::path(args.out) / "test_manifest.json").string(), test_m);
    std::cout << "wrote " << manifest.entries.size() << " clouds (" << train_m.entries.size()
              << " train / " << test_m.entries.size() << " test) under " << args.out << "\n";
    return 0;
}

// Weighted scalar head so the finite-difference probe exercises every output
// coordinate with distinct sensitivities.
Tensor weighted_sum(const Tensor& t, uint64_t seed) {
    RngStream rng(seed);
    std::vector<double> w(static_cast<size_t>(t.numel()));
    for (double& x : w) x = rng.uniform(0.5, 1.5);
    Tensor c = Tensor::from_data(t.shape(), std::move(w), false);
    return ops::reduce_sum(ops::mul(t, c));
}

int run_gradcheck() {
    const double tol = 1e-4;
    double worst = 0.0;
    auto report = [&](const std::string& name, double err) {
        worst = std::max(worst, err);
        std::cout << (err <= tol ? "  ok   " : "  FAIL ") << name << "  max rel err " << err
                  << "\n";
    };

    RngStream rng(20240817);
    auto random_tensor = [&](Shape shape, double lo, double hi) {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        std::vector<double> v(static_cast<size_t>(n));
        for (double& x : v) x = rng.uniform(lo, hi);
        return Tensor::from_data(std::move(shape), std::move(v), true);
    };

    report("squash", grad_check([](const Tensor& x) { return weighted_sum(squash_rows(x), 11); },
                                random_tensor({5, 4}, -1.0, 1.0)));

    {
        ParamRegistry reg;
        RngStream init(42);
        ClusterBank bank(reg, "bank", 4, 6, init);
        Tensor rows = random_tensor({9, 6}, -1.0, 1.0);
        report("soft_assign(rows)",
               grad_check(
                   [&](const Tensor& x) {
                       return weighted_sum(soft_assign(x, bank.w, bank.b), 12);
                   },
                   rows));
        report("vlad(rows)", grad_check(
                                 [&](const Tensor& x) {
                                     Tensor a = soft_assign(x, bank.w, bank.b);
                                     return weighted_sum(vlad_aggregate(x, bank.q, a), 13);
                                 },
                                 rows));
        report("vlad(centers)", grad_check(
                                    [&](const Tensor& q) {
                                        Tensor a = soft_assign(rows, bank.w, bank.b);
                                        return weighted_sum(vlad_aggregate(rows, q, a), 14);
                                    },
                                    bank.q));
    }

    {
        ParamRegistry reg;
        RngStream init(43);
        CapsuleRouter router(reg, "routing", 6, 4, 3, 5, init);
        Tensor u = random_tensor({6, 4}, -0.8, 0.8);
        for (int64_t iters : {int64_t{1}, int64_t{3}}) {
            report("routing iters=" + std::to_string(iters),
                   grad_check(
                       [&](const Tensor& x) {
                           return weighted_sum(router.forward(x, iters), 15 + iters);
                       },
                       u));
        }
    }

    {
        LossConfig lc;
        Tensor lengths = Tensor::from_data({4}, {0.62, 0.31, 0.48, 0.77}, true);
        report("margin_loss",
               grad_check([&](const Tensor& x) { return margin_loss(x, 2, lc); }, lengths));
    }

    {
        Tensor a = random_tensor({7, 3}, -1.0, 1.0);
        Tensor b = random_tensor({5, 3}, -1.0, 1.0);
        report("chamfer", grad_check([&](const Tensor& x) { return chamfer(x, b); }, a));
    }

    std::cout << (worst <= tol ? "gradcheck passed" : "gradcheck FAILED") << " (max rel err "
              << worst << ", tolerance " << tol << ")\n";
    P2SC_CHECK_AS(worst <= tol, NumericError, "gradient check exceeded tolerance");
    return 0;
}

int run_reconstruct(const ReconArgs& args) {
    LoadedCheckpoint loaded = load_checkpoint(args.ckpt);
    Model& model = *loaded.model;
    P2SC_CHECK_AS(model.has_decoder(), ConfigError,
                  "reconstruct: checkpoint has no reconstruction decoder");

    PointCloud cloud = load_cloud(args.in);
    RngStream rng(mix_seed(model.config().seed, 0x5245434full));
    PointCloud prepared = prepare_cloud(cloud, model.config().points_per_cloud, rng);

    NoGradGuard ng;
    ForwardResult fwd = model.forward(prepared, /*training=*/false);
    auto lv = fwd.lengths.values();
    const int cls = classify({lv.begin(), lv.end()});
    Tensor capsule = ops::gather_rows(fwd.digit_caps, {cls});
    Tensor recon = model.reconstruct(capsule);

    PointCloud out;
    auto rv = recon.values();
    out.coords.resize(static_cast<size_t>(recon.dim(0)));
    for (size_t i = 0; i < out.coords.size(); ++i) {
        out.coords[i] = {rv[3 * i], rv[3 * i + 1], rv[3 * i + 2]};
    }
    const std::string ext = fs::path(args.out).extension().string();
    if (ext == ".xyz" || ext == ".txt") {
        save_cloud_xyz(args.out, out);
    } else {
        save_cloud_binary(args.out, out);
    }

    const double dist = chamfer(coords_tensor(prepared.coords), recon).item();
    std::cout << "predicted class " << cls << ", chamfer distance " << dist << "\n";
    std::cout << "reconstruction written to " << args.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Point2SpatialCapsule: point-cloud classification, retrieval and segmentation"};
    app.require_subcommand(1);

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "Train a model from a JSON config");
    train->add_option("--config", train_args.config, "model config JSON")
        ->required()
        ->check(CLI::ExistingFile);
    train->add_option("--data", train_args.data, "training manifest JSON")
        ->required()
        ->check(CLI::ExistingFile);
    train->add_option("--out", train_args.out, "output directory")->required();
    train->add_option("--seed", train_args.seed, "override config seed");
    train->add_option("--ablate", train_args.ablate, "ablation variant")
        ->check(CLI::IsMember({"no_multi", "no_vlad", "no_caps"}));

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
    eval->add_option("--ckpt", eval_args.ckpt, "checkpoint file")
        ->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--data", eval_args.data, "evaluation manifest JSON")
        ->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--task", eval_args.task, "cls|retrieval|seg")->required();
    eval->add_option("--out", eval_args.out, "metrics CSV path")->required();

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--families", synth_args.families, "comma-separated family names");
    synth->add_option("--per-class", synth_args.per_class, "clouds per family");
    synth->add_option("--points", synth_args.points, "points per cloud");
    synth->add_option("--out", synth_args.out, "output directory")->required();
    synth->add_option("--jitter", synth_args.jitter, "surface jitter sigma");
    synth->add_option("--seed", synth_args.seed, "generator seed");
    synth->add_option("--train-frac", synth_args.train_frac, "train split fraction");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient self-test");

    ReconArgs recon_args;
    CLI::App* recon = app.add_subcommand("reconstruct", "Decode a cloud through its capsule");
    recon->add_option("--ckpt", recon_args.ckpt, "checkpoint file")
        ->required()
        ->check(CLI::ExistingFile);
    recon->add_option("--in", recon_args.in, "input cloud")->required()->check(CLI::ExistingFile);
    recon->add_option("--out", recon_args.out, "output cloud path")->required();

    try {
        app.parse(argc, argv);
        if (train->parsed()) return run_train(train_args);
        if (eval->parsed()) return run_eval(eval_args);
        if (synth->parsed()) return run_synth(synth_args);
        if (gradcheck->parsed()) return run_gradcheck();
        if (recon->parsed()) return run_reconstruct(recon_args);
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
