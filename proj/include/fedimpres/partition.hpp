#pragma once

#include "fedimpres/dataset.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedimpres {

// Per-client index lists into a parent dataset.
struct ShardSet {
    std::vector<std::vector<std::size_t>> shards;
    double alpha = 0.0;
    std::uint64_t seed = 0;

    std::size_t total() const;
    friend bool operator==(const ShardSet&, const ShardSet&) = default;
};

// Label-skew partition. For every class k the class's indices are shuffled,
// client proportions p ~ Dirichlet(alpha * 1) are drawn, and p * n_k is
// rounded to integers by largest remainder (ties to the lower client id).
// Clients that already hold at least |subset| / n_clients samples get a zero
// proportion for the remaining classes, as in the common FL benchmark code.
// Clients left empty then receive one sample taken from the currently
// largest shard. Each shard is returned sorted.
ShardSet dirichlet_partition(const Dataset& data, std::span<const std::size_t> subset, std::size_t n_clients,
                             double alpha, std::uint64_t seed);
ShardSet dirichlet_partition(const Dataset& data, std::size_t n_clients, double alpha, std::uint64_t seed);

// Integer split of `total` by proportions with the largest-remainder rule.
std::vector<std::size_t> largest_remainder(std::span<const double> proportions, std::size_t total);

struct HoldoutSplit {
    std::vector<std::size_t> holdout;   // public unlabeled pool
    std::vector<std::size_t> remaining; // data to partition among clients
};

// Seeded, mutually exclusive split of [0, n) taking round(fraction * n) held-out indices.
HoldoutSplit holdout_split(std::size_t n, double fraction, std::uint64_t seed);

// counts[client][class]
std::vector<std::vector<std::size_t>> class_histogram(const Dataset& data, const ShardSet& shards);
// Mean over shards of (largest class count / shard size).
double mean_majority_fraction(const Dataset& data, const ShardSet& shards);

// One file per client, `shard_<id>.txt`, one index per line.
void write_shards(const ShardSet& shards, const std::string& dir);

} // namespace fedimpres
