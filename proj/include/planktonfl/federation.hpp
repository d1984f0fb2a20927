#pragma once

#include <chrono>
#include <cstdint>
#include <exception>
#include <set>
#include <span>
#include <thread>
#include <vector>

#include "planktonfl/data.hpp"
#include "planktonfl/error.hpp"
#include "planktonfl/model_spec.hpp"
#include "planktonfl/network.hpp"
#include "planktonfl/parameters.hpp"
#include "planktonfl/rng.hpp"

namespace planktonfl {

struct FedAvgConfig {
    std::size_t clients = 1;
    std::size_t batch_size = 8;
    std::size_t local_epochs = 1;
    double lr = 1e-4;
    std::size_t rounds = 75;
    std::uint64_t seed = 0;

    void validate() const {
        if (clients < 1) throw ConfigError("clients must be at least 1");
        if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
        if (rounds < 1) throw ConfigError("rounds must be at least 1");
        if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    }
};

struct ClientState {
    std::size_t id = 0;
    Partition partition;
    ParameterSet weights;
};

struct GlobalState {
    std::size_t round = 0; // completed rounds
    ParameterSet weights;
    std::vector<ClientState> clients;
};

/// Per-round metrics. `round` is 1-based.
struct RoundRecord {
    std::size_t round = 0;
    double test_accuracy = 0.0;
    double train_loss = 0.0;
    double seconds = 0.0;
};

struct LocalResult {
    ParameterSet weights;
    std::uint64_t samples = 0;
    double mean_loss = 0.0; // sample-weighted over every batch of every local epoch
};

/// Client `id`'s stream for `round`; shuffles and dropout masks draw from it.
inline std::uint64_t client_stream_seed(std::uint64_t master, std::size_t id, std::size_t round) {
    return derive_seed(master, Stream::client, {id, round});
}

/// Runs LE epochs of minibatch SGD on the client's shard starting from `w`.
/// Each epoch reshuffles the shard; the final ragged batch is kept.
inline LocalResult local_training(const ModelSpec& spec, const DatasetSource& train, const ClientState& client,
                                  const ParameterSet& w, const FedAvgConfig& cfg, std::size_t round) {
    const auto& indices = client.partition.indices;
    if (indices.empty()) throw DataError("client " + std::to_string(client.id) + " has an empty partition");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be at least 1");

    LocalResult out{w, indices.size(), 0.0};
    Rng rng(client_stream_seed(cfg.seed, client.id, round));
    std::vector<std::size_t> order(indices.begin(), indices.end());
    double loss_total = 0.0;
    std::size_t seen = 0;
    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, order.size() - start);
            auto [batch, labels] = make_batch(train, std::span<const std::size_t>(order).subspan(start, len));
            auto step = loss_and_grad(spec, out.weights, batch, std::span<const int>(labels), rng);
            out.weights = sgd_step(std::move(out.weights), step.grads, cfg.lr);
            loss_total += step.loss * static_cast<double>(len);
            seen += len;
        }
    }
    out.mean_loss = seen ? loss_total / static_cast<double>(seen) : 0.0;
    return out;
}

struct ClientUpdate {
    std::uint64_t samples = 0;
    ParameterSet weights;
};

/// Sample-weighted mean of client weights, accumulated in double in list
/// order and stored back as float.
inline ParameterSet fedavg_aggregate(std::span<const ClientUpdate> updates) {
    if (updates.empty()) throw ProtocolError("aggregation needs at least one client update");
    double total = 0.0;
    for (const auto& u : updates) {
        if (u.samples == 0) throw ProtocolError("client update carries zero samples");
        if (!same_layout(u.weights.blocks, updates[0].weights.blocks))
            throw ProtocolError("client updates disagree on parameter shapes");
        total += static_cast<double>(u.samples);
    }

    ParameterSet out = updates[0].weights;
    std::vector<double> acc;
    for (std::size_t b = 0; b < out.blocks.size(); ++b) {
        for (Tensor ParamBlock<float>::*member : {&ParamBlock<float>::weight, &ParamBlock<float>::bias}) {
            Tensor& dst = out.blocks[b].*member;
            acc.assign(dst.size(), 0.0);
            for (const auto& u : updates) {
                const double weight = static_cast<double>(u.samples) / total;
                const Tensor& src = u.weights.blocks[b].*member;
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weight * static_cast<double>(src[i]);
            }
            for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<float>(acc[i]);
        }
    }
    return out;
}

/// sum_k (n_k / n) F_k(w), F_k the eval-mode mean loss over shard k.
inline double global_objective(const ModelSpec& spec, const DatasetSource& data, std::span<const Partition> partitions,
                               const ParameterSet& w) {
    if (partitions.empty()) throw DataError("global objective needs at least one partition");
    std::set<std::size_t> seen;
    double n = 0.0;
    for (const auto& p : partitions) {
        if (p.indices.empty()) throw DataError("partition " + std::to_string(p.client) + " is empty");
        for (auto i : p.indices)
            if (!seen.insert(i).second) throw DataError("partitions overlap at record " + std::to_string(i));
        n += static_cast<double>(p.size());
    }
    double f = 0.0;
    for (const auto& p : partitions) {
        const double fk = evaluate(spec, w, data, std::span<const std::size_t>(p.indices)).mean_loss;
        f += static_cast<double>(p.size()) / n * fk;
    }
    return f;
}

/// Every client starts from `w0`.
inline GlobalState make_global_state(std::vector<Partition> partitions, ParameterSet w0) {
    GlobalState g;
    g.weights = std::move(w0);
    for (auto& p : partitions) {
        ClientState c;
        c.id = p.client;
        c.partition = std::move(p);
        c.weights = g.weights;
        g.clients.push_back(std::move(c));
    }
    return g;
}

enum class Execution { serial, parallel };

/// One FedAvg round: local training on every client from w_r, weighted
/// aggregation in client order, sync of every client to w_{r+1}, then
/// evaluation of w_{r+1} on `test`. If any client fails the state is left
/// untouched and the first failure (by client order) is rethrown.
inline RoundRecord run_round(GlobalState& state, const ModelSpec& spec, const DatasetSource& train,
                             const DatasetSource& test, const FedAvgConfig& cfg,
                             Execution execution = Execution::serial) {
    if (state.clients.empty()) throw ConfigError("no clients registered");
    const auto started = std::chrono::steady_clock::now();
    const std::size_t k = state.clients.size();
    std::vector<LocalResult> results(k);
    std::vector<std::exception_ptr> failures(k);

    auto train_one = [&](std::size_t i) {
        try {
            results[i] = local_training(spec, train, state.clients[i], state.weights, cfg, state.round);
        } catch (...) {
            failures[i] = std::current_exception();
        }
    };
    if (execution == Execution::parallel && k > 1) {
        std::vector<std::jthread> workers;
        workers.reserve(k);
        for (std::size_t i = 0; i < k; ++i) workers.emplace_back(train_one, i);
    } else {
        for (std::size_t i = 0; i < k; ++i) train_one(i);
    }
    for (auto& f : failures)
        if (f) std::rethrow_exception(f);

    std::vector<ClientUpdate> updates;
    updates.reserve(k);
    double n = 0.0;
    for (auto& r : results) n += static_cast<double>(r.samples);
    double train_loss = 0.0;
    for (auto& r : results) {
        train_loss += static_cast<double>(r.samples) / n * r.mean_loss;
        updates.push_back({r.samples, std::move(r.weights)});
    }
    ParameterSet next = fedavg_aggregate(updates);
    const Evaluation eval = evaluate(spec, next, test);

    state.weights = std::move(next);
    for (auto& c : state.clients) c.weights = state.weights;
    ++state.round;

    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
    return {state.round, eval.accuracy, train_loss, elapsed.count()};
}

} // namespace planktonfl
