#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "planktonfl/data.hpp"
#include "planktonfl/error.hpp"
#include "planktonfl/federation.hpp"
#include "planktonfl/image_io.hpp"
#include "planktonfl/model_spec.hpp"
#include "planktonfl/network.hpp"
#include "planktonfl/parameters.hpp"

namespace planktonfl {

enum class Topology { cl, fl, mefl };
enum class StopReason { cap, early_stop };
enum class Partitioner { iid, by_source };

inline const char* to_string(Topology t) {
    switch (t) {
    case Topology::cl: return "cl";
    case Topology::fl: return "fl";
    case Topology::mefl: return "mefl";
    }
    return "?";
}

inline const char* to_string(StopReason r) { return r == StopReason::cap ? "cap" : "early-stop"; }

inline constexpr std::size_t kMaxClients = 10;

struct DataDescriptor {
    enum class Kind { synthetic, folder } kind = Kind::synthetic;
    std::string path;
    std::size_t classes = 11;
    std::size_t per_class = 20;
    double skew = 0.0;
    std::vector<std::string> sources{"A", "B"};
};

struct ExperimentConfig {
    Topology topology = Topology::cl;
    std::size_t clients = 1;
    double lr = 1e-4;
    std::size_t rounds = 75; // epochs for CL
    std::size_t batch_size = 8;
    std::size_t local_epochs = 1;
    std::uint64_t seed = 0;
    std::size_t min_epochs = 50;
    double early_stop_delta = 1e-6;
    bool early_stop = true; // CL only
    DataDescriptor data;
    bool augment = true;
    bool split_before_augment = false;
    double split_fraction = 0.8;
    std::size_t image_size = 128;
    std::vector<std::size_t> conv_filters{32, 32, 64, 64};
    std::size_t dense_units = 128;

    void validate() const {
        if (topology == Topology::mefl && clients < 2)
            throw ConfigError("clients: mefl needs at least 2 clients, got " + std::to_string(clients));
        if (clients < 1 || clients > kMaxClients)
            throw ConfigError("clients: must lie in [1, " + std::to_string(kMaxClients) + "], got " +
                              std::to_string(clients));
        if (topology == Topology::cl && clients != 1) throw ConfigError("clients: cl runs with a single client");
        if (!(lr > 0.0)) throw ConfigError("lr: must be positive");
        if (rounds < 1) throw ConfigError("rounds: must be at least 1");
        if (batch_size < 1) throw ConfigError("batch_size: must be at least 1");
        if (!(early_stop_delta >= 0.0)) throw ConfigError("early_stop_delta: must be non-negative");
        if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("split_fraction: must lie in (0, 1)");
        if (image_size < 8) throw ConfigError("image_size: must be at least 8");
        if (conv_filters.size() != 4) throw ConfigError("model.filters: exactly 4 conv widths are required");
        if (data.kind == DataDescriptor::Kind::folder && data.path.empty())
            throw ConfigError("data.path: required when data.kind = folder");
        if (!(data.skew >= 0.0 && data.skew <= 1.0)) throw ConfigError("data.skew: must lie in [0, 1]");
    }

    ModelSpec model(std::size_t classes) const {
        return default_model({image_size, 3, classes, conv_filters, dense_units});
    }

    FedAvgConfig fedavg() const { return {clients, batch_size, local_epochs, lr, rounds, seed}; }
};

/// The held-out split every topology evaluates against.
struct ExperimentData {
    DatasetSource train;
    DatasetSource test;
    std::uint64_t fingerprint = 0; // of the data before augmentation and splitting
    std::vector<std::string> warnings;

    std::size_t classes() const { return train.n_classes; }
};

inline DatasetSource load_source(const ExperimentConfig& cfg) {
    if (cfg.data.kind == DataDescriptor::Kind::folder) return ingest_image_folder(cfg.data.path, cfg.image_size);
    SyntheticOptions opts;
    opts.n_classes = cfg.data.classes;
    opts.per_class = cfg.data.per_class;
    opts.source_tags = cfg.data.sources;
    opts.class_source_skew = cfg.data.skew;
    opts.seed = cfg.seed;
    opts.side = cfg.image_size;
    return generate_synthetic(opts);
}

/// Load, then augment and split (or split, then augment the training half).
inline ExperimentData prepare_data(const ExperimentConfig& cfg, DatasetSource source) {
    ExperimentData out;
    out.fingerprint = fingerprint(source);
    const AugmentationPolicy policy;
    if (cfg.augment && !cfg.split_before_augment) source = augment(source, policy, cfg.seed);
    auto split = split_train_test(source, cfg.split_fraction, cfg.seed);
    out.train = std::move(split.train);
    out.test = std::move(split.test);
    out.warnings = std::move(split.warnings);
    if (cfg.augment && cfg.split_before_augment) out.train = augment(out.train, policy, cfg.seed);
    if (out.test.empty()) throw DataError("the test split is empty; add records or lower split_fraction");
    return out;
}

inline ExperimentData prepare_data(const ExperimentConfig& cfg) { return prepare_data(cfg, load_source(cfg)); }

struct History {
    ExperimentConfig config;
    std::vector<RoundRecord> records;
    double final_accuracy = 0.0;
    StopReason stop_reason = StopReason::cap;
    ParameterSet final_weights;
};

/// Called after every epoch or round with its record and the new global weights.
using RoundObserver = std::function<void(const RoundRecord&, const ParameterSet&)>;

/// True once more than `min_epochs` epochs are recorded and the last two
/// test accuracies differ by less than `delta`.
inline bool early_stop_check(std::span<const double> accuracies, std::size_t min_epochs = 50, double delta = 1e-6) {
    if (accuracies.size() <= min_epochs || accuracies.size() < 2) return false;
    const double change = accuracies[accuracies.size() - 1] - accuracies[accuracies.size() - 2];
    return std::abs(change) < delta;
}

/// CL: one model on the whole training set, up to `rounds` epochs with early
/// stopping. Epoch e trains exactly like round e of a single-client
/// federation (client 0 over every training record).
inline History run_centralized(const ExperimentConfig& cfg, const ExperimentData& data,
                               const RoundObserver& observer = {}) {
    if (cfg.topology != Topology::cl) throw ConfigError("topology: run_centralized needs cl");
    cfg.validate();
    const ModelSpec spec = cfg.model(data.classes());
    FedAvgConfig fed = cfg.fedavg();
    fed.clients = 1;

    Partition all;
    all.client = 0;
    all.indices.resize(data.train.size());
    for (std::size_t i = 0; i < all.indices.size(); ++i) all.indices[i] = i;
    GlobalState state = make_global_state({std::move(all)}, init_parameters(spec, cfg.seed));

    History h;
    h.config = cfg;
    std::vector<double> accuracies;
    for (std::size_t epoch = 0; epoch < cfg.rounds; ++epoch) {
        h.records.push_back(run_round(state, spec, data.train, data.test, fed));
        if (observer) observer(h.records.back(), state.weights);
        accuracies.push_back(h.records.back().test_accuracy);
        if (cfg.early_stop && early_stop_check(accuracies, cfg.min_epochs, cfg.early_stop_delta)) {
            h.stop_reason = StopReason::early_stop;
            break;
        }
    }
    h.final_accuracy = h.records.back().test_accuracy;
    h.final_weights = std::move(state.weights);
    return h;
}

inline std::vector<Partition> make_partitions(const ExperimentConfig& cfg, const DatasetSource& train,
                                              Partitioner partitioner) {
    return partitioner == Partitioner::iid ? partition_iid(train, cfg.clients, cfg.seed)
                                           : partition_by_source(train, cfg.clients);
}

inline Partitioner default_partitioner(Topology t) {
    return t == Topology::mefl ? Partitioner::by_source : Partitioner::iid;
}

/// FL / ME-FL: exactly `rounds` FedAvg rounds, never stopped early.
inline History run_federated(const ExperimentConfig& cfg, const ExperimentData& data, Partitioner partitioner,
                             Execution execution = Execution::serial, const RoundObserver& observer = {}) {
    if (cfg.topology == Topology::cl) throw ConfigError("topology: run_federated needs fl or mefl");
    cfg.validate();
    const ModelSpec spec = cfg.model(data.classes());
    const FedAvgConfig fed = cfg.fedavg();
    GlobalState state = make_global_state(make_partitions(cfg, data.train, partitioner), init_parameters(spec, cfg.seed));

    History h;
    h.config = cfg;
    for (std::size_t r = 0; r < cfg.rounds; ++r) {
        h.records.push_back(run_round(state, spec, data.train, data.test, fed, execution));
        if (observer) observer(h.records.back(), state.weights);
    }
    h.final_accuracy = h.records.back().test_accuracy;
    h.final_weights = std::move(state.weights);
    return h;
}

inline History run_experiment(const ExperimentConfig& cfg, const ExperimentData& data,
                              Execution execution = Execution::serial) {
    if (cfg.topology == Topology::cl) return run_centralized(cfg, data);
    return run_federated(cfg, data, default_partitioner(cfg.topology), execution);
}

struct GridResult {
    double best_lr = 0.0;
    std::vector<History> histories; // one per learning rate, in input order
};

/// Picks the rate whose final accuracy is highest; ties go to the smaller rate.
inline double select_best_lr(std::span<const double> lrs, std::span<const double> final_accuracies) {
    if (lrs.empty() || lrs.size() != final_accuracies.size()) throw ConfigError("lr: grid needs at least one rate");
    std::size_t best = 0;
    for (std::size_t i = 1; i < lrs.size(); ++i) {
        if (final_accuracies[i] > final_accuracies[best] ||
            (final_accuracies[i] == final_accuracies[best] && lrs[i] < lrs[best]))
            best = i;
    }
    return lrs[best];
}

inline const std::vector<double>& default_learning_rates() {
    static const std::vector<double> rates{0.001, 0.0001, 0.0005};
    return rates;
}

inline GridResult grid_search(const ExperimentConfig& cfg, const ExperimentData& data,
                              std::span<const double> lrs = default_learning_rates(),
                              Execution execution = Execution::serial) {
    if (lrs.empty()) throw ConfigError("lr: grid needs at least one rate");
    GridResult out;
    std::vector<double> finals;
    for (double lr : lrs) {
        ExperimentConfig run = cfg;
        run.lr = lr;
        out.histories.push_back(run_experiment(run, data, execution));
        finals.push_back(out.histories.back().final_accuracy);
    }
    out.best_lr = select_best_lr(lrs, finals);
    return out;
}

struct SweepEntry {
    std::size_t clients = 0;
    double final_accuracy = 0.0;
};

struct SweepResult {
    std::vector<SweepEntry> entries;
    std::vector<History> histories;
};

inline std::vector<std::size_t> default_client_range(Topology t) {
    std::vector<std::size_t> ks;
    for (std::size_t k = t == Topology::mefl ? 2 : 1; k <= kMaxClients; ++k) ks.push_back(k);
    return ks;
}

/// One federated run per client count on the same data and seed.
inline SweepResult client_sweep(const ExperimentConfig& cfg, const ExperimentData& data, Topology topology,
                                std::span<const std::size_t> client_counts, Execution execution = Execution::serial) {
    if (topology == Topology::cl) throw ConfigError("topology: client sweeps need fl or mefl");
    const std::size_t lo = topology == Topology::mefl ? 2 : 1;
    for (auto k : client_counts)
        if (k < lo || k > kMaxClients)
            throw ConfigError("clients: " + std::to_string(k) + " outside [" + std::to_string(lo) + ", " +
                              std::to_string(kMaxClients) + "] for " + to_string(topology));
    SweepResult out;
    for (auto k : client_counts) {
        ExperimentConfig run = cfg;
        run.topology = topology;
        run.clients = k;
        out.histories.push_back(run_federated(run, data, default_partitioner(topology), execution));
        out.entries.push_back({k, out.histories.back().final_accuracy});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics CSV

inline constexpr const char* kMetricsHeader = "topology,lr,clients,round,train_loss,test_accuracy,seconds,stop_reason";

struct CsvOptions {
    bool wall_clock = false; // otherwise the seconds column is 0 so reruns are byte-identical
};

inline std::string format_number(const char* fmt, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

inline void write_metrics_header(std::ostream& out) { out << kMetricsHeader << '\n'; }

/// One row per round; every row carries the run's stop reason.
inline void write_metrics_rows(std::ostream& out, const History& h, const CsvOptions& opts = {}) {
    for (const auto& r : h.records) {
        out << to_string(h.config.topology) << ',' << format_number("%.10g", h.config.lr) << ',' << h.config.clients
            << ',' << r.round << ',' << format_number("%.9g", r.train_loss) << ','
            << format_number("%.9g", r.test_accuracy) << ','
            << (opts.wall_clock ? format_number("%.6f", r.seconds) : std::string("0")) << ','
            << to_string(h.stop_reason) << '\n';
    }
}

inline void write_metrics_csv(std::ostream& out, std::span<const History> histories, const CsvOptions& opts = {}) {
    write_metrics_header(out);
    for (const auto& h : histories) write_metrics_rows(out, h, opts);
}

} // namespace planktonfl
