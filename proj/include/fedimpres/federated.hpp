#pragma once

#include "fedimpres/dataset.hpp"
#include "fedimpres/impression.hpp"
#include "fedimpres/metrics.hpp"
#include "fedimpres/model.hpp"
#include "fedimpres/partition.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace fedimpres {

enum class Algorithm { fedavg, fedprox, fedimpres };
enum class AggregationMode { uniform, weighted };

std::string to_string(Algorithm a);
std::string to_string(AggregationMode m);
Algorithm parse_algorithm(const std::string& name);
AggregationMode parse_aggregation(const std::string& name);

struct RoundConfig {
    Algorithm algorithm = Algorithm::fedimpres;
    int local_epochs = 5;
    double local_lr = 0.01;
    std::size_t batch_size = 16;
    double beta = 1.0; // weight of the impression CE in local training
    double mu = 0.01;  // FedProx proximal coefficient
    int warmup_rounds = 2;
    int total_rounds = 8;
    AggregationMode aggregation = AggregationMode::uniform;
    // Record cross-client accuracy matrices after every local epoch.
    bool track_cross = false;
    // Start each round's synthesis from the previous round's impression (experimental).
    bool warm_start = false;

    void validate() const;
};

// Local-epoch budget of a run: total_rounds x local_epochs.
int local_epoch_budget(const RoundConfig& cfg);

struct ClientState {
    int id = 0;
    std::vector<std::size_t> shard;
    Model model;
    std::uint64_t rng_seed = 0;
};

std::vector<ClientState> make_clients(const ShardSet& shards, const Model& global, std::uint64_t master_seed);

// Per-step loss weights: CE(local) + beta * CE(impression) + mu/2 ||w - w_G||^2.
struct LocalObjective {
    double beta = 0.0;
    double mu = 0.0;
};

// Gradient of one local step's loss at `current`, the combination of the
// mean CE gradient on the local batch, beta times the mean CE gradient on
// the impression batch and mu (w - w_G).
GradientSet local_step_gradient(const Model& current, const Model& global, const Tensor& batch,
                                std::span<const int> labels, const ImpressionBatch* impression,
                                const LocalObjective& objective);

struct LocalUpdate {
    int client = 0;
    TensorList params;
    std::size_t n_samples = 0;
};

// Called with epoch 0 before training and after every completed epoch.
using EpochHook = std::function<void(int epoch, const Model& local)>;

// E epochs of shuffled mini-batch SGD starting from the global weights.
// `round_idx` selects the client's shuffling stream.
LocalUpdate local_train(const ClientState& client, const Model& global, const Dataset& data,
                        const ImpressionBatch* impression, const RoundConfig& cfg, int round_idx,
                        const EpochHook& hook = {});

// local_train without an impression and with the proximal term mu/2 ||w - w_G||^2.
LocalUpdate fedprox_local_train(const ClientState& client, const Model& global, const Dataset& data,
                                const RoundConfig& cfg, int round_idx, const EpochHook& hook = {});

// Uniform: arithmetic mean. Weighted: sum n_i w_i / sum n_i. Summation runs
// in client-id order regardless of the order of `updates`.
TensorList aggregate(std::vector<LocalUpdate> updates, AggregationMode mode);

// Everything a round needs besides the global model and the clients.
struct FederatedContext {
    const Dataset* train = nullptr;
    const Dataset* test = nullptr; // optional global test set
    // Shards used for cross-client accuracy; defaults to the client shards.
    std::vector<std::vector<std::size_t>> eval_shards;
    // Fixed initialisation pool (holdout or file mode); random noise when empty.
    std::optional<SeedPool> init_pool;
    RoundConfig round;
    SynthesisConfig synthesis;
    std::uint64_t master_seed = 0;
    // Worker threads for client training; 0 reads FEDIMPRES_THREADS.
    unsigned threads = 0;
};

// Threads allowed by FEDIMPRES_THREADS, or the hardware concurrency.
unsigned configured_threads();

// Seed pool for synthesis in round `round_idx`.
SeedPool round_seed_pool(const FederatedContext& ctx, const Model& global, int round_idx,
                         const ImpressionBatch* previous);

struct RoundOutcome {
    Model global;
    std::vector<ClientState> clients;
    RoundRecord record;
    std::optional<ImpressionBatch> impression;
};

RoundOutcome run_round(const Model& global, const std::vector<ClientState>& clients, int round_idx,
                       const FederatedContext& ctx, const ImpressionBatch* previous = nullptr);

struct ExperimentResult {
    std::vector<RoundRecord> records;
    Model global;
    std::vector<ClientState> clients;
};

ExperimentResult run_experiment(const FederatedContext& ctx, Model initial, std::vector<ClientState> clients);

} // namespace fedimpres
