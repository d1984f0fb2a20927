#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "planktonfl/planktonfl.hpp"

namespace planktonfl::cli {

enum ExitCode : int { ok = 0, other_error = 1, config_error = 2, data_error = 3, numeric_error = 4 };

struct RunOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "planktonfl_out";
    std::optional<std::string> topology;
    std::optional<std::size_t> clients;
    std::optional<double> lr;
    bool wall_clock = false;
    bool parallel = false;
};

inline ExperimentConfig resolve_config(const RunOptions& opts) {
    ExperimentConfig cfg;
    if (!opts.config_path.empty()) cfg = parse_config(opts.config_path);
    if (opts.topology) {
        cfg.topology = parse_topology(*opts.topology);
        // A bare topology switch keeps the file's client count where it is legal.
        if (cfg.topology == Topology::cl) cfg.clients = 1;
        if (cfg.topology == Topology::mefl) cfg.clients = std::max<std::size_t>(cfg.clients, 2);
    }
    if (opts.clients) cfg.clients = *opts.clients;
    if (opts.lr) cfg.lr = *opts.lr;
    if (opts.seed) cfg.seed = *opts.seed;
    cfg.validate();
    return cfg;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::filesystem::path prepare_out_dir(const std::string& dir) {
    std::filesystem::path out(dir);
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
    return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("failed writing " + path.string());
}

/// Manifest: the resolved config (also saved as config.cfg, which
/// `--config` reads back), the data fingerprint and every artifact written.
inline void write_manifest(const std::filesystem::path& out_dir, const std::string& command, const ExperimentConfig& cfg,
                           const ExperimentData& data, const nlohmann::ordered_json& artifacts,
                           const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) {
    const std::string config_text = to_config_text(cfg);
    write_text(out_dir / "config.cfg", config_text);
    nlohmann::ordered_json m;
    m["command"] = command;
    m["config"] = config_text;
    m["seed"] = cfg.seed;
    m["data_fingerprint"] = hex64(data.fingerprint);
    m["train_records"] = data.train.size();
    m["test_records"] = data.test.size();
    m["warnings"] = data.warnings;
    m["artifacts"] = artifacts;
    m["artifacts"]["config"] = (out_dir / "config.cfg").string();
    for (const auto& [k, v] : extra.items()) m[k] = v;
    write_text(out_dir / "manifest.json", m.dump(2) + "\n");
}

inline Execution execution_of(const RunOptions& opts) { return opts.parallel ? Execution::parallel : Execution::serial; }

inline void print_warnings(const ExperimentData& data, std::ostream& err) {
    for (const auto& w : data.warnings) err << "warning: " << w << '\n';
}

inline int cmd_train(const RunOptions& opts, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve_config(opts);
    const auto dir = prepare_out_dir(opts.out_dir);
    const auto data = prepare_data(cfg);
    print_warnings(data, err);
    const History h = run_experiment(cfg, data, execution_of(opts));

    std::ostringstream csv;
    write_metrics_csv(csv, std::span<const History>(&h, 1), CsvOptions{opts.wall_clock});
    write_text(dir / "metrics.csv", csv.str());
    const auto checkpoint = dir / "checkpoint.favg";
    save_checkpoint(checkpoint, h.final_weights, static_cast<std::uint32_t>(h.records.size()), data.train.size());
    write_manifest(dir, "train", cfg, data,
                   {{"metrics", (dir / "metrics.csv").string()}, {"checkpoint", checkpoint.string()}},
                   {{"final_accuracy", h.final_accuracy}, {"stop_reason", to_string(h.stop_reason)}});
    const char* unit = cfg.topology == Topology::cl ? " epochs=" : " rounds=";
    out << to_string(cfg.topology) << " clients=" << cfg.clients << " lr=" << cfg.lr << unit << h.records.size()
        << " stop=" << to_string(h.stop_reason) << " final_accuracy=" << h.final_accuracy << '\n';
    return ok;
}

inline int cmd_sweep(const RunOptions& opts, std::vector<std::size_t> ks, std::ostream& out, std::ostream& err) {
    auto o = opts;
    if (!o.topology) o.topology = "fl";
    const auto topology = parse_topology(*o.topology);
    if (topology == Topology::cl) throw ConfigError("topology: sweep needs fl or mefl");
    if (ks.empty()) ks = default_client_range(topology);
    o.clients = ks.front();
    const auto cfg = resolve_config(o);
    const auto dir = prepare_out_dir(o.out_dir);
    const auto data = prepare_data(cfg);
    print_warnings(data, err);
    const auto sweep = client_sweep(cfg, data, topology, ks, execution_of(o));

    std::ostringstream csv;
    write_metrics_csv(csv, sweep.histories, CsvOptions{o.wall_clock});
    write_text(dir / "metrics.csv", csv.str());
    std::ostringstream table;
    table << "topology,clients,final_accuracy\n";
    for (const auto& e : sweep.entries) {
        table << to_string(topology) << ',' << e.clients << ',' << format_number("%.9g", e.final_accuracy) << '\n';
        out << to_string(topology) << " K=" << e.clients << " final_accuracy=" << e.final_accuracy << '\n';
    }
    write_text(dir / "sweep.csv", table.str());
    write_manifest(dir, "sweep", cfg, data,
                   {{"metrics", (dir / "metrics.csv").string()}, {"sweep", (dir / "sweep.csv").string()}},
                   {{"clients", ks}});
    return ok;
}

inline int cmd_grid(const RunOptions& opts, std::vector<double> lrs, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve_config(opts);
    if (lrs.empty()) lrs = default_learning_rates();
    const auto dir = prepare_out_dir(opts.out_dir);
    const auto data = prepare_data(cfg);
    print_warnings(data, err);
    const auto grid = grid_search(cfg, data, lrs, execution_of(opts));

    std::ostringstream csv;
    write_metrics_csv(csv, grid.histories, CsvOptions{opts.wall_clock});
    write_text(dir / "metrics.csv", csv.str());
    std::ostringstream table;
    table << "lr,final_accuracy\n";
    for (const auto& h : grid.histories) {
        table << format_number("%.10g", h.config.lr) << ',' << format_number("%.9g", h.final_accuracy) << '\n';
        out << "lr=" << h.config.lr << " final_accuracy=" << h.final_accuracy << '\n';
    }
    write_text(dir / "grid.csv", table.str());
    out << "best_lr=" << grid.best_lr << '\n';
    write_manifest(dir, "grid", cfg, data,
                   {{"metrics", (dir / "metrics.csv").string()}, {"grid", (dir / "grid.csv").string()}},
                   {{"learning_rates", lrs}, {"best_lr", grid.best_lr}});
    return ok;
}

inline int cmd_inspect(const RunOptions& opts, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve_config(opts);
    const auto data = prepare_data(cfg);
    print_warnings(data, err);
    std::vector<Partition> parts;
    if (cfg.topology == Topology::cl) {
        Partition all;
        all.indices.resize(data.train.size());
        for (std::size_t i = 0; i < all.indices.size(); ++i) all.indices[i] = i;
        parts.push_back(std::move(all));
    } else {
        parts = make_partitions(cfg, data.train, default_partitioner(cfg.topology));
    }
    out << "topology=" << to_string(cfg.topology) << " clients=" << parts.size() << " train=" << data.train.size()
        << " test=" << data.test.size() << '\n';
    for (const auto& p : parts) {
        std::map<std::string, std::size_t> tags;
        std::vector<std::size_t> classes(data.classes(), 0);
        for (auto i : p.indices) {
            ++tags[data.train[i].source];
            ++classes[static_cast<std::size_t>(data.train[i].label)];
        }
        out << "client " << p.client << " n_k=" << p.size() << " sources:";
        for (const auto& [tag, n] : tags) out << ' ' << tag << '=' << n;
        out << " classes:";
        for (auto n : classes) out << ' ' << n;
        out << '\n';
    }
    return ok;
}

/// Writes a decoded checkpoint as JSON: header fields plus every tensor's
/// shape and values.
inline int cmd_checkpoint_export(const std::string& input, const std::string& output, std::ostream& out) {
    const auto msg = load_checkpoint(input);
    nlohmann::ordered_json j;
    j["round"] = msg.round;
    j["client"] = msg.client;
    j["samples"] = msg.samples;
    j["tensors"] = nlohmann::ordered_json::array();
    std::size_t scalars = 0;
    for (const auto& t : msg.tensors) {
        j["tensors"].push_back({{"shape", t.shape()}, {"values", t.values()}});
        scalars += t.size();
    }
    write_text(output, j.dump() + "\n");
    out << "exported " << msg.tensors.size() << " tensors (" << scalars << " scalars) from round " << msg.round << '\n';
    return ok;
}

inline int cmd_checkpoint_import(const std::string& input, const std::string& output, std::ostream& out) {
    std::ifstream in(input);
    if (!in) throw DataError("cannot open " + input);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(input + ": " + e.what());
    }
    ParameterMessage msg;
    try {
        msg.round = j.at("round").get<std::uint32_t>();
        msg.client = j.value("client", kCheckpointClient);
        msg.samples = j.at("samples").get<std::uint64_t>();
        for (const auto& t : j.at("tensors")) {
            Tensor tensor(t.at("shape").get<Shape>());
            const auto values = t.at("values").get<std::vector<float>>();
            if (values.size() != tensor.size())
                throw DataError(input + ": tensor declares " + std::to_string(tensor.size()) + " values, holds " +
                                std::to_string(values.size()));
            std::copy(values.begin(), values.end(), tensor.values().begin());
            msg.tensors.push_back(std::move(tensor));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(input + ": " + e.what());
    }
    write_bytes(output, encode_parameter_message(msg));
    out << "imported " << msg.tensors.size() << " tensors into " << output << '\n';
    return ok;
}

inline int cmd_checkpoint_inspect(const std::string& input, std::ostream& out) {
    const auto msg = load_checkpoint(input);
    out << "round=" << msg.round << " client=" << msg.client << " samples=" << msg.samples
        << " tensors=" << msg.tensors.size() << '\n';
    for (std::size_t i = 0; i < msg.tensors.size(); ++i) out << "  " << i << ": " << to_string(msg.tensors[i].shape()) << '\n';
    return ok;
}

inline void add_run_options(CLI::App* cmd, RunOptions& opts) {
    cmd->add_option("--config", opts.config_path, "Experiment config file (key = value lines)");
    cmd->add_option("--seed", opts.seed, "Master seed (overrides the file)");
    cmd->add_option("--out", opts.out_dir, "Output directory")->capture_default_str();
    cmd->add_option("--topology", opts.topology, "cl, fl or mefl (overrides the file)");
    cmd->add_option("--clients", opts.clients, "Client count (overrides the file)");
    cmd->add_option("--lr", opts.lr, "Learning rate (overrides the file)");
    cmd->add_flag("--wall-clock", opts.wall_clock, "Record real seconds per round in metrics.csv");
    cmd->add_flag("--parallel", opts.parallel, "Train the clients of a round on separate threads");
}

/// Parses `args` (without the program name) and runs the subcommand.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Federated learning simulator for plankton image classification", "planktonfl"};
    app.require_subcommand(1);
    RunOptions opts;

    auto* train = app.add_subcommand("train", "Run one experiment");
    add_run_options(train, opts);

    std::vector<std::size_t> ks;
    auto* sweep = app.add_subcommand("sweep", "Run one federated experiment per client count");
    add_run_options(sweep, opts);
    sweep->add_option("--k", ks, "Client counts (default: 1..10 for fl, 2..10 for mefl)");

    std::vector<double> lrs;
    auto* grid = app.add_subcommand("grid", "Learning-rate grid search");
    add_run_options(grid, opts);
    grid->add_option("--rates", lrs, "Learning rates (default: 0.001 0.0001 0.0005)");

    auto* inspect = app.add_subcommand("inspect-partitions", "Print per-client sample counts and source tags");
    add_run_options(inspect, opts);

    std::string ck_in, ck_out;
    auto* checkpoint = app.add_subcommand("checkpoint", "Convert or inspect parameter message files");
    checkpoint->require_subcommand(1);
    auto* ck_export = checkpoint->add_subcommand("export", "Binary checkpoint to JSON");
    ck_export->add_option("input", ck_in, "Checkpoint file")->required();
    ck_export->add_option("output", ck_out, "JSON file")->required();
    auto* ck_import = checkpoint->add_subcommand("import", "JSON to binary checkpoint");
    ck_import->add_option("input", ck_in, "JSON file")->required();
    ck_import->add_option("output", ck_out, "Checkpoint file")->required();
    auto* ck_inspect = checkpoint->add_subcommand("inspect", "Print a checkpoint header");
    ck_inspect->add_option("input", ck_in, "Checkpoint file")->required();

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return config_error;
    }

    try {
        if (train->parsed()) return cmd_train(opts, out, err);
        if (sweep->parsed()) return cmd_sweep(opts, ks, out, err);
        if (grid->parsed()) return cmd_grid(opts, lrs, out, err);
        if (inspect->parsed()) return cmd_inspect(opts, out, err);
        if (ck_export->parsed()) return cmd_checkpoint_export(ck_in, ck_out, out);
        if (ck_import->parsed()) return cmd_checkpoint_import(ck_in, ck_out, out);
        if (ck_inspect->parsed()) return cmd_checkpoint_inspect(ck_in, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const NumericFault& e) {
        err << "numeric fault: " << e.what() << '\n';
        return numeric_error;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return data_error;
    } catch (const DecodeError& e) {
        err << "data error: " << e.what() << '\n';
        return data_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return other_error;
    }
    return other_error;
}

} // namespace planktonfl::cli
