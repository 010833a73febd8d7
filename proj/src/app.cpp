#include "fedimpres/app.hpp"

#include "fedimpres/errors.hpp"
#include "fedimpres/metrics.hpp"
#include "fedimpres/partition.hpp"
#include "fedimpres/rng.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>

namespace fedimpres {

namespace fs = std::filesystem;

namespace {

struct ConfigFlags {
    std::string config_path;
    std::map<std::string, std::string> overrides;
    std::vector<std::string> sets;
};

void add_config_flags(CLI::App& cmd, ConfigFlags& f) {
    cmd.add_option("--config", f.config_path, "flat key = value config file");
    const std::vector<std::pair<std::string, std::string>> flags = {
        {"--seed", "seed"},       {"--out", "out"},         {"--algorithm", "algorithm"}, {"--beta", "beta"},
        {"--rho", "rho"},         {"--alpha", "alpha"},     {"--clients", "clients"},     {"--rounds", "rounds"},
        {"--local-epochs", "local_epochs"}};
    for (const auto& [flag, key] : flags)
        cmd.add_option_function<std::string>(flag, [&f, key](const std::string& v) { f.overrides[key] = v; },
                                             "overrides config key " + key);
    cmd.add_option("--set", f.sets, "KEY=VALUE override for any config key");
}

ExperimentConfig resolve(const ConfigFlags& f) {
    ExperimentConfig cfg = f.config_path.empty() ? ExperimentConfig{} : parse_config_file(f.config_path);
    for (const auto& [key, value] : f.overrides) set_config_value(cfg, key, value);
    for (const auto& kv : f.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

void echo_to(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.out);
    write_text_file((fs::path(cfg.out) / "config.txt").string(), echo_config(cfg));
}

Model initial_model(const ExperimentConfig& cfg, const Dataset& train) {
    return Model::initialized(parse_arch(cfg.arch, train.sample_shape(), train.n_classes), train.sample_shape(),
                              derive_seed(cfg.seed, "model-init"));
}

std::optional<SeedPool> init_pool(const ExperimentConfig& cfg, const ExperimentData& data) {
    switch (cfg.synthesis.init_mode) {
    case InitMode::random: return std::nullopt;
    case InitMode::holdout: return holdout_seed_pool(data.train, data.split.holdout);
    case InitMode::file: {
        SeedPool pool = file_seed_pool(cfg.init_path, cfg.synthesis.batch_size);
        Shape s(pool.images.shape().begin() + 1, pool.images.shape().end());
        if (s != data.train.sample_shape())
            throw ValidationError("seed pool images are " + shape_str(s) + ", expected " +
                                  shape_str(data.train.sample_shape()));
        return pool;
    }
    }
    return std::nullopt;
}

FederatedContext make_context(const ExperimentConfig& cfg, const ExperimentData& data) {
    FederatedContext ctx;
    ctx.train = &data.train;
    ctx.test = data.test ? &*data.test : nullptr;
    ctx.init_pool = init_pool(cfg, data);
    ctx.round = cfg.round;
    ctx.synthesis = cfg.synthesis;
    ctx.master_seed = cfg.seed;
    return ctx;
}

Model load_model(const ExperimentConfig& cfg, const std::string& path, const Shape& sample_shape, std::size_t K) {
    Model shell(parse_arch(cfg.arch, sample_shape, K), sample_shape);
    return shell.with_params(load_weights(path));
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

template <class Fn>
int guarded(Fn&& fn) {
    try {
        fn();
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ValidationError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

} // namespace

ExperimentResult run_configured(const ExperimentConfig& cfg) {
    cfg.validate();
    const ExperimentData data = prepare_data(cfg);
    const Model global = initial_model(cfg, data.train);
    FederatedContext ctx = make_context(cfg, data);
    echo_to(cfg);
    ExperimentResult result = run_experiment(ctx, global, make_clients(data.shards, global, cfg.seed));

    const std::string alg = to_string(cfg.round.algorithm);
    const fs::path out(cfg.out);
    write_records(result.records, (out / record_file_name(cfg.run_id, alg, "csv")).string(), RecordFormat::csv);
    write_records(result.records, (out / record_file_name(cfg.run_id, alg, "json")).string(), RecordFormat::json);
    if (cfg.round.track_cross)
        write_text_file((out / (cfg.run_id + "_" + alg + "_forgetting.csv")).string(),
                        forgetting_to_csv(forgetting_curve(result.records)));
    save_weights(result.global.params(), (out / (cfg.run_id + "_" + alg + "_model.bin")).string());
    return result;
}

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Federated impression learning lab", "fedimpres"};
    app.require_subcommand(1);

    ConfigFlags run_flags, part_flags, synth_flags, eval_flags;
    auto* run = app.add_subcommand("run", "run a federated experiment");
    add_config_flags(*run, run_flags);

    auto* part = app.add_subcommand("partition", "write the holdout and client shard index files");
    add_config_flags(*part, part_flags);

    std::string synth_model, synth_output;
    auto* synth = app.add_subcommand("synthesize", "synthesise one impression batch from a saved model");
    add_config_flags(*synth, synth_flags);
    synth->add_option("--model", synth_model, "weights written by run")->required();
    synth->add_option("--output", synth_output, "FIDB output (default <out>/impression.fidb)");

    std::string eval_model, eval_data;
    auto* eval = app.add_subcommand("eval", "score a saved model on a FIDB file");
    add_config_flags(*eval, eval_flags);
    eval->add_option("--model", eval_model, "weights written by run")->required();
    eval->add_option("--data", eval_data, "FIDB file to score")->required();

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    if (run->parsed())
        return guarded([&] {
            const ExperimentConfig cfg = resolve(run_flags);
            const auto result = run_configured(cfg);
            const auto& last = result.records.back();
            std::cout << "rounds=" << result.records.size();
            if (last.global_acc) std::cout << " global_acc=" << fmt(*last.global_acc);
            std::cout << " out=" << cfg.out << "\n";
        });

    if (part->parsed())
        return guarded([&] {
            const ExperimentConfig cfg = resolve(part_flags);
            const ExperimentData data = prepare_data(cfg);
            echo_to(cfg);
            const fs::path dir = fs::path(cfg.out) / "shards";
            write_shards(data.shards, dir.string());
            std::string holdout;
            for (auto i : data.split.holdout) holdout += std::to_string(i) + "\n";
            write_text_file((dir / "holdout.txt").string(), holdout);
            const auto hist = class_histogram(data.train, data.shards);
            for (std::size_t c = 0; c < hist.size(); ++c) {
                std::cout << "client " << c << ":";
                for (auto n : hist[c]) std::cout << " " << n;
                std::cout << "\n";
            }
        });

    if (synth->parsed())
        return guarded([&] {
            const ExperimentConfig cfg = resolve(synth_flags);
            const ExperimentData data = prepare_data(cfg);
            const Model server = load_model(cfg, synth_model, data.train.sample_shape(), data.train.n_classes);
            const FederatedContext ctx = make_context(cfg, data);
            const ImpressionBatch batch = synthesize(server, round_seed_pool(ctx, server, 0, nullptr), cfg.synthesis);
            const std::string path =
                synth_output.empty() ? (fs::path(cfg.out) / "impression.fidb").string() : synth_output;
            if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
            save_dataset(impression_dataset(batch, data.train.n_classes), path);
            std::cout << "initial_ce=" << fmt(batch.initial_ce) << " final_ce=" << fmt(batch.final_ce)
                      << " output=" << path << "\n";
        });

    return guarded([&] {
        const ExperimentConfig cfg = resolve(eval_flags);
        const Dataset data = load_dataset(eval_data);
        const Model model = load_model(cfg, eval_model, data.sample_shape(), data.n_classes);
        const Evaluation ev = evaluate(model, data);
        std::cout << "accuracy=" << fmt(ev.accuracy) << " loss=" << fmt(ev.mean_loss) << " n=" << data.size() << "\n";
    });
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args);
}

} // namespace fedimpres
