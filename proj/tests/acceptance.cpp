#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "planktonfl/planktonfl.hpp"

using namespace planktonfl;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s << std::setprecision(digits) << v;
    return s.str();
}

Verdict gradient_oracle() {
    const auto t0 = Clock::now();
    constexpr double step = 1e-3;
    const ModelSpec spec = testing::toy_spec();
    const std::vector<int> labels{0, 1, 2, 1};

    // Central differences are only meaningful away from ReLU and max-pool
    // switching points, so take the first seed whose margin exceeds 2 steps.
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
        const auto params = init_parameters<float>(spec, seed);
        Tensor batch({4, 8, 8, 1});
        Rng rng(seed + 100);
        for (auto& v : batch.values()) v = static_cast<float>(rng.uniform());
        const double margin = testing::kink_margin(spec, params, batch);
        if (!(margin > 2 * step)) continue;

        const auto report = testing::check_gradients(spec, params, batch, labels, step, 1e-3);
        const double elapsed = seconds_since(t0);
        Verdict v;
        v.pass = report.failures == 0 && report.coordinates == params.scalar_count() && elapsed < 60.0;
        v.detail = "seed " + std::to_string(seed) + ", " + std::to_string(report.coordinates) +
                   " coordinates, worst relative error " + fmt(report.worst_relative) + ", " + fmt(elapsed, 3) + " s";
        return v;
    }
    return {false, "no seed with a clear kink margin"};
}

ParameterSet scalar_params(float w) {
    ParameterSet p;
    ParamBlock<float> b;
    b.weight = Tensor({1});
    b.weight[0] = w;
    b.bias = Tensor({1});
    b.bias[0] = w;
    p.blocks.push_back(std::move(b));
    return p;
}

Verdict fedavg_arithmetic() {
    const std::vector<ClientUpdate> updates{{2, scalar_params(1.0f)}, {6, scalar_params(2.0f)}};
    const std::vector<ClientUpdate> swapped{updates[1], updates[0]};
    const auto avg = fedavg_aggregate(updates);
    const auto avg_swapped = fedavg_aggregate(swapped);
    const double value = avg.blocks[0].weight[0];

    const ModelSpec spec = testing::toy_spec(3);
    const auto w = init_parameters<float>(spec, 21);
    const std::vector<ClientUpdate> same{{5, w}, {9, w}, {1, w}};
    const bool fixed = bit_identical(fedavg_aggregate(same), w);

    Verdict v;
    v.pass = std::abs(value - 1.75) <= 1e-7 && bit_identical(avg, avg_swapped) && fixed;
    v.detail = "aggregate " + fmt(value, 9) + (bit_identical(avg, avg_swapped) ? ", order-free" : ", ORDER-DEPENDENT") +
               (fixed ? ", fixed point exact" : ", fixed point MOVED");
    return v;
}

Verdict partition_invariance() {
    SyntheticOptions o;
    o.n_classes = 10;
    o.per_class = 20;
    o.side = 16;
    o.seed = 31;
    const auto data = generate_synthetic(o);
    const ModelSpec spec = default_model({16, 3, 10, {4, 4, 8, 8}, 16});
    const auto w = init_parameters<float>(spec, 32);
    const double centralized = evaluate(spec, w, data).mean_loss;

    double worst = 0.0;
    std::string detail = "centralized " + fmt(centralized, 8) + ";";
    for (std::size_t k : {1u, 2u, 5u, 10u}) {
        const auto parts = partition_iid(data, k, 33);
        const double f = global_objective(spec, data, parts, w);
        worst = std::max(worst, std::abs(f - centralized));
        detail += " K=" + std::to_string(k) + " " + fmt(f, 8);
    }
    detail += "; worst gap " + fmt(worst, 3);
    return {data.size() == 200 && worst <= 1e-5, detail};
}

Verdict one_client_equivalence() {
    const auto t0 = Clock::now();
    ExperimentConfig cl;
    cl.topology = Topology::cl;
    cl.image_size = 32;
    cl.conv_filters = {16, 16, 32, 32};
    cl.dense_units = 64;
    cl.augment = false;
    cl.data.classes = 11;
    cl.data.per_class = 30;
    cl.lr = 0.03;
    cl.rounds = 10;
    cl.batch_size = 8;
    cl.local_epochs = 1;
    cl.seed = 4;
    auto fl = cl;
    fl.topology = Topology::fl;
    fl.clients = 1;

    const auto data = prepare_data(cl);
    std::vector<ParameterSet> cl_path, fl_path;
    const auto a = run_centralized(cl, data, [&](const RoundRecord&, const ParameterSet& w) { cl_path.push_back(w); });
    const auto b = run_federated(fl, data, Partitioner::iid, Execution::serial,
                                 [&](const RoundRecord&, const ParameterSet& w) { fl_path.push_back(w); });

    std::size_t matching = 0;
    for (std::size_t e = 0; e < std::min(cl_path.size(), fl_path.size()); ++e)
        if (bit_identical(cl_path[e], fl_path[e]) && a.records[e].test_accuracy == b.records[e].test_accuracy &&
            a.records[e].train_loss == b.records[e].train_loss)
            ++matching;
    const bool moved = cl_path.size() > 1 && !bit_identical(cl_path.front(), cl_path.back());
    const double elapsed = seconds_since(t0);

    Verdict v;
    v.pass = data.train.size() + data.test.size() == 330 && cl_path.size() == 10 && fl_path.size() == 10 &&
             matching == 10 && moved && elapsed < 300.0;
    v.detail = std::to_string(matching) + "/10 epochs bit-identical, final accuracy " + fmt(a.final_accuracy) + ", " +
               fmt(elapsed, 3) + " s";
    return v;
}

Verdict trend_reproduction() {
    const auto t0 = Clock::now();
    ExperimentConfig base;
    base.image_size = 32;
    base.conv_filters = {8, 8, 16, 16};
    base.dense_units = 32;
    base.augment = false;
    base.data.classes = 11;
    base.data.per_class = 40;
    base.data.skew = 1.0;
    base.lr = 0.03;
    base.rounds = 75;
    base.seed = 7;
    const auto data = prepare_data(base);

    auto final_of = [&](Topology t, std::size_t k) {
        auto cfg = base;
        cfg.topology = t;
        cfg.clients = k;
        return run_experiment(cfg, data).final_accuracy;
    };
    const double cl = final_of(Topology::cl, 1);
    std::vector<double> fl;
    for (std::size_t k : {1u, 2u, 3u, 8u, 9u, 10u}) fl.push_back(final_of(Topology::fl, k));
    const double mefl10 = final_of(Topology::mefl, 10);
    const double fl10 = fl[5];
    const double low = (fl[0] + fl[1] + fl[2]) / 3.0;
    const double high = (fl[3] + fl[4] + fl[5]) / 3.0;
    const double elapsed = seconds_since(t0);

    const bool a = cl >= fl10 && fl10 >= mefl10;
    const bool b = low - high >= 0.0;
    const bool c = mefl10 < fl10 - 0.10;
    Verdict v;
    v.pass = a && b && c && elapsed < 1800.0;
    v.detail = "CL " + fmt(cl, 3) + ", FL K=1,2,3 " + fmt(fl[0], 3) + " " + fmt(fl[1], 3) + " " + fmt(fl[2], 3) +
               ", K=8,9,10 " + fmt(fl[3], 3) + " " + fmt(fl[4], 3) + " " + fmt(fl[5], 3) + ", ME-FL K=10 " +
               fmt(mefl10, 3) + "; (a) " + (a ? "ok" : "no") + " (b) " + (b ? "ok" : "no") + " (c) " +
               (c ? "ok" : "no") + "; " + fmt(elapsed, 4) + " s";
    return v;
}

Verdict augmentation_cardinality() {
    SyntheticOptions o;
    o.n_classes = 7;
    o.per_class = 43;
    o.side = 16;
    o.seed = 6;
    const auto ds = generate_synthetic(o);
    const auto out = augment(ds, AugmentationPolicy{}, 6);
    return {ds.size() == 301 && out.size() == 2107,
            std::to_string(ds.size()) + " inputs -> " + std::to_string(out.size()) + " outputs"};
}

std::size_t epochs_run(const std::function<double(std::size_t)>& accuracy_at) {
    std::vector<double> seen;
    for (std::size_t epoch = 1; epoch <= 75; ++epoch) {
        seen.push_back(accuracy_at(epoch));
        if (early_stop_check(seen, 50, 1e-6)) break;
    }
    return seen.size();
}

Verdict early_stopping() {
    const std::size_t constant = epochs_run([](std::size_t) { return 0.42; });
    const std::size_t moving = epochs_run([](std::size_t e) { return 0.5 + (e % 2 == 0 ? 0.01 : 0.0); });
    return {constant == 51 && moving == 75,
            "constant stream stops at " + std::to_string(constant) + ", |delta| = 0.01 stream runs " +
                std::to_string(moving)};
}

ParameterMessage random_message(Rng& rng) {
    ParameterMessage msg;
    msg.round = static_cast<std::uint32_t>(rng.next());
    msg.client = static_cast<std::uint32_t>(rng.next());
    msg.samples = rng.next();
    const std::size_t count = 1 + rng.below(6);
    for (std::size_t t = 0; t < count; ++t) {
        Shape shape;
        const std::size_t rank = 1 + rng.below(4);
        for (std::size_t d = 0; d < rank; ++d) shape.push_back(1 + rng.below(5));
        Tensor tensor(shape);
        for (auto& v : tensor.values()) v = std::bit_cast<float>(static_cast<std::uint32_t>(rng.next()));
        msg.tensors.push_back(std::move(tensor));
    }
    return msg;
}

Verdict wire_format() {
    Rng rng(1000);
    std::size_t exact = 0, corruptions = 0, detected = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto msg = random_message(rng);
        const auto bytes = encode_parameter_message(msg);
        const auto back = decode_parameter_message(bytes);
        bool same = back.round == msg.round && back.client == msg.client && back.samples == msg.samples &&
                    back.tensors.size() == msg.tensors.size();
        for (std::size_t t = 0; same && t < msg.tensors.size(); ++t)
            same = back.tensors[t].shape() == msg.tensors[t].shape() &&
                   std::memcmp(back.tensors[t].data(), msg.tensors[t].data(), msg.tensors[t].size() * sizeof(float)) == 0;
        if (same) ++exact;

        const std::size_t header = message_header_size(msg.tensors);
        for (std::size_t pos = 0; pos < header; ++pos) {
            auto bad = bytes;
            bad[pos] ^= static_cast<std::uint8_t>(1 + rng.below(255));
            ++corruptions;
            try {
                decode_parameter_message(bad);
            } catch (const DecodeError&) {
                ++detected;
            }
        }
    }
    return {exact == 1000 && detected == corruptions,
            std::to_string(exact) + "/1000 bit-exact round trips, " + std::to_string(detected) + "/" +
                std::to_string(corruptions) + " header corruptions detected"};
}

Verdict determinism() {
    ExperimentConfig cfg;
    cfg.topology = Topology::fl;
    cfg.clients = 4;
    cfg.rounds = 20;
    cfg.image_size = 16;
    cfg.conv_filters = {4, 4, 8, 8};
    cfg.dense_units = 16;
    cfg.augment = false;
    cfg.data.per_class = 20;
    cfg.lr = 0.03;
    cfg.seed = 9;
    const auto data = prepare_data(cfg);
    auto csv = [&](Execution e) {
        const History h = run_experiment(cfg, data, e);
        std::ostringstream out;
        write_metrics_csv(out, std::span<const History>(&h, 1));
        return out.str();
    };
    const std::string serial = csv(Execution::serial);
    const std::string parallel = csv(Execution::parallel);
    const auto rows = std::count(serial.begin(), serial.end(), '\n');
    return {serial == parallel && rows == 21,
            std::string(serial == parallel ? "byte-identical" : "DIFFERENT") + " metrics CSVs, " +
                std::to_string(rows - 1) + " rounds"};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"gradient oracle", gradient_oracle},
        {"fedavg arithmetic", fedavg_arithmetic},
        {"partition invariance of the global objective", partition_invariance},
        {"one-client equivalence", one_client_equivalence},
        {"trend reproduction", trend_reproduction},
        {"augmentation cardinality", augmentation_cardinality},
        {"early stopping", early_stopping},
        {"wire format", wire_format},
        {"determinism", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        if (!v.pass) ++failed;
        std::cout << (v.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": " << v.detail
                  << std::endl;
    }
    std::cout << criteria.size() - static_cast<std::size_t>(failed) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed == 0 ? 0 : 1;
}
