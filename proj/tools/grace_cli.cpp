#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "grace/dataset.hpp"
#include "grace/encoder.hpp"
#include "grace/eval.hpp"
#include "grace/graph.hpp"
#include "grace/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
    std::string dataset;
    std::string data_root;
    std::string out_root = "runs";
    std::uint64_t seed = 0;
    std::uint64_t split_seed = 0;
    grace::TrainConfig train;
    grace::EvalConfig eval;
};

fs::path resolve_data_root(const std::string& flag) {
    if (!flag.empty()) return flag;
    return grace::default_data_root();
}

// Run directory named by the resolved config hash plus a timestamp so
// repeated invocations never collide.
fs::path make_run_dir(const std::string& out_root, const std::string& hash) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(now).count();
    fs::path dir = fs::path(out_root) / (hash + "-" + std::to_string(secs));
    fs::create_directories(dir);
    return dir;
}

void add_train_flags(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--dataset", o.dataset, "dataset name under the data root")->required();
    cmd->add_option("--data-root", o.data_root, "dataset root directory");
    cmd->add_option("--out", o.out_root, "directory for run outputs");
    cmd->add_option("-N,--n-way", o.train.n_way);
    cmd->add_option("-K,--k-shot", o.train.k_shot);
    cmd->add_option("-M,--m-query", o.train.m_query, "query samples per class");
    cmd->add_option("--tau", o.train.tau, "gate softmax temperature");
    cmd->add_option("--sigma", o.train.sigma, "calibration kernel bandwidth");
    cmd->add_option("--lambda", o.train.lambda_scale, "high-pass residual scale");
    cmd->add_option("--lr", o.train.learning_rate);
    cmd->add_option("--episodes", o.train.max_episodes, "training episode budget");
    cmd->add_option("--val-every", o.train.val_every);
    cmd->add_option("--patience", o.train.patience, "validation rounds without improvement");
    cmd->add_option("--val-tasks", o.train.val_tasks);
    cmd->add_option("--hidden", o.train.hidden_dim);
    cmd->add_option("--gate-hidden", o.train.gate_hidden);
    cmd->add_option("--seed", o.seed);
    cmd->add_option("--split-seed", o.split_seed, "class split shuffle seed");
    cmd->add_option("--variant", [&o](const std::vector<std::string>& v) {
            o.train.variant = grace::variant_from_string(v[0]);
            return true;
        },
        "model variant (full, no_high, no_low, no_cal, no_both, gate_wo_*)");
    cmd->add_flag("--per-dim-psi", o.train.per_dim_psi,
                  "per-dimension calibration kernel weights");
    cmd->add_flag("--lambda-trainable", o.train.lambda_trainable);
}

void add_eval_flags(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--runs", o.eval.runs, "independent evaluation repetitions");
    cmd->add_option("--tasks", o.eval.tasks_per_run, "tasks sampled per run");
    cmd->add_option("--eval-seed", o.eval.seed);
}

json config_json(const CommonOpts& o) {
    return json{{"dataset", o.dataset},
                {"n_way", o.train.n_way},
                {"k_shot", o.train.k_shot},
                {"m_query", o.train.m_query},
                {"tau", o.train.tau},
                {"sigma", o.train.sigma},
                {"lambda", o.train.lambda_scale},
                {"learning_rate", o.train.learning_rate},
                {"max_episodes", o.train.max_episodes},
                {"hidden_dim", o.train.hidden_dim},
                {"gate_hidden", o.train.gate_hidden},
                {"seed", o.seed},
                {"split_seed", o.split_seed},
                {"variant", grace::variant_to_string(o.train.variant)},
                {"config_hash", o.train.hash()}};
}

struct LoadedDataset {
    grace::Graph graph;
    grace::ClassSplit split;
};

LoadedDataset load(const CommonOpts& o) {
    grace::Graph graph = grace::load_dataset(o.dataset, resolve_data_root(o.data_root));
    grace::ClassSplit split;
    try {
        split = grace::class_split(o.dataset, graph.num_classes(), o.split_seed);
    } catch (const std::invalid_argument&) {
        // datasets without published sizes (synthetic ones) get an even split
        const int c = graph.num_classes();
        const int val = std::max(1, c / 4), novel = std::max(1, c / 4);
        split = grace::class_split_sizes(c, c - val - novel, val, novel, o.split_seed);
    }
    return {std::move(graph), std::move(split)};
}

void print_report(const std::string& label, const grace::EvalReport& r) {
    std::cout << label << ": accuracy " << r.mean_accuracy << " +- " << r.std_accuracy
              << " (ci95 " << r.ci95 << ", tasks " << r.per_task_accuracy.size()
              << ", epsilon_g " << r.diagnostics.epsilon_g << ", shift "
              << r.diagnostics.dist_shift << ")\n";
}

int cmd_train(CommonOpts& o) {
    o.train.seed = o.seed;
    auto [graph, split] = load(o);
    const fs::path dir = make_run_dir(o.out_root, o.train.hash());
    const grace::TrainResult result =
        grace::train(graph, split, o.train, (dir / "train_log.jsonl").string());
    grace::save_checkpoint(result.params, dir / "checkpoint.grck", o.train.hash());
    std::ofstream(dir / "config.json") << config_json(o).dump(2) << "\n";
    std::cout << "trained " << result.episodes_run << " episodes, best validation accuracy "
              << 100.0 * result.best_val_accuracy << "\n";
    std::cout << "run dir: " << dir.string() << "\n";
    return 0;
}

int cmd_eval(CommonOpts& o, const std::string& checkpoint) {
    o.train.seed = o.seed;
    auto [graph, split] = load(o);
    grace::EncoderParams params;
    if (!checkpoint.empty()) {
        params = grace::load_checkpoint(checkpoint);
    } else {
        const grace::TrainResult result = grace::train(graph, split, o.train);
        params = result.params;
    }
    const grace::EvalReport report = grace::evaluate(params, graph, split, o.train, o.eval);
    const fs::path dir = make_run_dir(o.out_root, o.train.hash());
    grace::save_report(report, (dir / "report").string());
    std::ofstream(dir / "config.json") << config_json(o).dump(2) << "\n";
    print_report(o.dataset, report);
    std::cout << "run dir: " << dir.string() << "\n";
    return 0;
}

int cmd_ablate(CommonOpts& o, const std::string& variants_csv) {
    o.train.seed = o.seed;
    auto [graph, split] = load(o);
    std::vector<grace::Variant> variants;
    std::stringstream ss(variants_csv);
    std::string item;
    while (std::getline(ss, item, ',')) variants.push_back(grace::variant_from_string(item));

    const fs::path dir = make_run_dir(o.out_root, o.train.hash());
    std::ofstream csv(dir / "ablation.csv");
    csv << "variant,mean_accuracy,std,ci95\n";
    for (grace::Variant v : variants) {
        const grace::EvalReport r = grace::ablation_run(v, graph, split, o.train, o.eval);
        print_report(grace::variant_to_string(v), r);
        csv << grace::variant_to_string(v) << ',' << r.mean_accuracy << ',' << r.std_accuracy
            << ',' << r.ci95 << "\n";
    }
    std::ofstream(dir / "config.json") << config_json(o).dump(2) << "\n";
    std::cout << "run dir: " << dir.string() << "\n";
    return 0;
}

int cmd_sweep(CommonOpts& o, const std::string& param, const std::vector<double>& grid) {
    o.train.seed = o.seed;
    auto [graph, split] = load(o);
    const auto rows = grace::hyperparam_sweep(param, grid, graph, split, o.train, o.eval);
    const fs::path dir = make_run_dir(o.out_root, o.train.hash());
    std::ofstream csv(dir / ("sweep_" + param + ".csv"));
    csv << param << ",mean_accuracy\n";
    for (const auto& row : rows) {
        std::cout << param << "=" << row.value << ": accuracy " << row.mean_accuracy << "\n";
        csv << row.value << ',' << row.mean_accuracy << "\n";
    }
    std::ofstream(dir / "config.json") << config_json(o).dump(2) << "\n";
    std::cout << "run dir: " << dir.string() << "\n";
    return 0;
}

int cmd_case_study(CommonOpts& o, int num_bins, const std::string& checkpoint) {
    o.train.seed = o.seed;
    auto [graph, split] = load(o);
    grace::EncoderParams params;
    if (!checkpoint.empty()) {
        params = grace::load_checkpoint(checkpoint);
    } else {
        params = grace::train(graph, split, o.train).params;
    }
    const fs::path dir = make_run_dir(o.out_root, o.train.hash());
    const grace::CaseStudyResult result = grace::gating_case_study(
        params, graph, num_bins, o.train, (dir / "case_study").string());
    std::cout << "populated bins: " << result.bins.size()
              << ", spearman(bin, low-pass weight): " << result.spearman << "\n";
    std::cout << "run dir: " << dir.string() << "\n";
    return 0;
}

int cmd_synth(const std::string& name, const std::string& data_root, int nodes, int classes,
              double p_in, double p_out, int feature_dim, double separation, std::uint64_t seed,
              bool mixed) {
    const grace::Graph graph =
        mixed ? grace::synth_mixed_homophily(nodes, classes, p_in, p_out, feature_dim, seed,
                                             separation)
              : grace::synth_sbm(nodes, classes, p_in, p_out, feature_dim, seed, separation);
    grace::save_dataset(graph, name, resolve_data_root(data_root));
    std::cout << "wrote " << name << ": " << graph.num_nodes() << " nodes, "
              << graph.num_edges() << " edges, edge homophily "
              << grace::edge_homophily_ratio(graph) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot node classification with adaptive spectral experts"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string checkpoint, variants = "full,no_high,no_low,no_cal,no_both";
    std::string sweep_param = "sigma";
    std::vector<double> sweep_grid;
    int case_bins = 20;

    auto* train_cmd = app.add_subcommand("train", "meta-train a model");
    add_train_flags(train_cmd, opts);

    auto* eval_cmd = app.add_subcommand("eval", "meta-test a model");
    add_train_flags(eval_cmd, opts);
    add_eval_flags(eval_cmd, opts);
    eval_cmd->add_option("--checkpoint", checkpoint, "trained checkpoint (else trains first)");

    auto* ablate_cmd = app.add_subcommand("ablate", "paired variant comparison");
    add_train_flags(ablate_cmd, opts);
    add_eval_flags(ablate_cmd, opts);
    ablate_cmd->add_option("--variants", variants, "comma-separated variant list");

    auto* sweep_cmd = app.add_subcommand("sweep", "hyperparameter sensitivity");
    add_train_flags(sweep_cmd, opts);
    add_eval_flags(sweep_cmd, opts);
    sweep_cmd->add_option("--param", sweep_param, "sigma or tau");
    sweep_cmd->add_option("--grid", sweep_grid, "grid values")->required();

    auto* case_cmd = app.add_subcommand("case-study", "gate weight vs homophily bins");
    add_train_flags(case_cmd, opts);
    case_cmd->add_option("--bins", case_bins);
    case_cmd->add_option("--checkpoint", checkpoint, "trained checkpoint (else trains first)");

    std::string synth_name = "synth", synth_root;
    int synth_nodes = 1000, synth_classes = 6, synth_dim = 32;
    double synth_pin = 0.05, synth_pout = 0.005, synth_sep = 1.0;
    std::uint64_t synth_seed = 0;
    bool synth_mixed = false;
    auto* synth_cmd = app.add_subcommand("synth", "generate a block-model dataset");
    synth_cmd->add_option("--name", synth_name);
    synth_cmd->add_option("--data-root", synth_root);
    synth_cmd->add_option("--nodes", synth_nodes);
    synth_cmd->add_option("--classes", synth_classes);
    synth_cmd->add_option("--p-in", synth_pin);
    synth_cmd->add_option("--p-out", synth_pout);
    synth_cmd->add_option("--feature-dim", synth_dim);
    synth_cmd->add_option("--separation", synth_sep);
    synth_cmd->add_option("--seed", synth_seed);
    synth_cmd->add_flag("--mixed", synth_mixed, "half homophilic, half heterophilic regions");

    std::string conv_src, conv_name, conv_root;
    auto* conv_cmd = app.add_subcommand("convert-dataset", "text files to dataset container");
    conv_cmd->add_option("--src", conv_src, "directory with edges.tsv, labels.txt, features.tsv")
        ->required();
    conv_cmd->add_option("--name", conv_name)->required();
    conv_cmd->add_option("--data-root", conv_root);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(opts);
        if (eval_cmd->parsed()) return cmd_eval(opts, checkpoint);
        if (ablate_cmd->parsed()) return cmd_ablate(opts, variants);
        if (sweep_cmd->parsed()) return cmd_sweep(opts, sweep_param, sweep_grid);
        if (case_cmd->parsed()) return cmd_case_study(opts, case_bins, checkpoint);
        if (synth_cmd->parsed())
            return cmd_synth(synth_name, synth_root, synth_nodes, synth_classes, synth_pin,
                             synth_pout, synth_dim, synth_sep, synth_seed, synth_mixed);
        if (conv_cmd->parsed()) {
            grace::convert_text_dataset(conv_src, conv_name, resolve_data_root(conv_root));
            std::cout << "converted " << conv_name << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << json{{"message", e.what()}}.dump() << "\n";
        return 1;
    }
    return 0;
}
