#include "fedimpres/partition.hpp"

#include "fedimpres/errors.hpp"
#include "fedimpres/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

namespace fedimpres {

std::size_t ShardSet::total() const {
    std::size_t n = 0;
    for (const auto& s : shards) n += s.size();
    return n;
}

std::vector<std::size_t> largest_remainder(std::span<const double> proportions, std::size_t total) {
    const std::size_t n = proportions.size();
    std::vector<std::size_t> counts(n, 0);
    std::vector<double> frac(n, 0.0);
    std::size_t assigned = 0;
    for (std::size_t j = 0; j < n; ++j) {
        const double quota = proportions[j] * static_cast<double>(total);
        const double base = std::floor(quota);
        counts[j] = static_cast<std::size_t>(base);
        frac[j] = quota - base;
        assigned += counts[j];
    }
    // Proportions that sum to slightly more than 1 can overshoot.
    while (assigned > total) {
        auto it = std::max_element(counts.begin(), counts.end());
        --*it;
        --assigned;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++counts[order[r % n]];
    return counts;
}

ShardSet dirichlet_partition(const Dataset& data, std::span<const std::size_t> subset, std::size_t n_clients,
                             double alpha, std::uint64_t seed) {
    if (!(alpha > 0.0)) throw InputError("Dirichlet alpha must be positive");
    if (n_clients == 0) throw InputError("n_clients must be >= 1");
    if (n_clients > subset.size())
        throw InputError("cannot split " + std::to_string(subset.size()) + " samples among " +
                         std::to_string(n_clients) + " clients");

    std::vector<std::vector<std::size_t>> by_class(data.n_classes);
    for (auto idx : subset) {
        if (idx >= data.size()) throw InputError("subset index " + std::to_string(idx) + " out of range");
        by_class.at(static_cast<std::size_t>(data.labels[idx])).push_back(idx);
    }

    Rng rng(seed);
    ShardSet out;
    out.alpha = alpha;
    out.seed = seed;
    out.shards.resize(n_clients);
    std::vector<double> logg(n_clients), p(n_clients);
    const double even_share = static_cast<double>(subset.size()) / static_cast<double>(n_clients);
    for (auto& members : by_class) {
        std::sort(members.begin(), members.end());
        rng.shuffle(std::span<std::size_t>(members));
        // Dirichlet via normalised Gamma draws, in log space so tiny alphas do not underflow.
        for (auto& v : logg) v = rng.log_gamma(alpha);
        // Clients already holding their even share take no more classes.
        std::vector<bool> open(n_clients);
        bool any_open = false;
        for (std::size_t j = 0; j < n_clients; ++j) {
            open[j] = static_cast<double>(out.shards[j].size()) < even_share;
            any_open = any_open || open[j];
        }
        if (!any_open) open.assign(n_clients, true);
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n_clients; ++j)
            if (open[j]) m = std::max(m, logg[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < n_clients; ++j) s += (p[j] = open[j] ? std::exp(logg[j] - m) : 0.0);
        for (auto& v : p) v /= s;
        auto counts = largest_remainder(p, members.size());
        std::size_t at = 0;
        for (std::size_t j = 0; j < n_clients; ++j) {
            out.shards[j].insert(out.shards[j].end(), members.begin() + at, members.begin() + at + counts[j]);
            at += counts[j];
        }
    }

    for (std::size_t j = 0; j < n_clients; ++j) {
        if (!out.shards[j].empty()) continue;
        std::size_t donor = 0;
        for (std::size_t d = 1; d < n_clients; ++d)
            if (out.shards[d].size() > out.shards[donor].size()) donor = d;
        out.shards[j].push_back(out.shards[donor].back());
        out.shards[donor].pop_back();
    }
    for (auto& s : out.shards) std::sort(s.begin(), s.end());
    return out;
}

ShardSet dirichlet_partition(const Dataset& data, std::size_t n_clients, double alpha, std::uint64_t seed) {
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), 0);
    return dirichlet_partition(data, all, n_clients, alpha, seed);
}

HoldoutSplit holdout_split(std::size_t n, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw InputError("holdout fraction must be in [0, 1)");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(perm));
    const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    HoldoutSplit split;
    split.holdout.assign(perm.begin(), perm.begin() + count);
    split.remaining.assign(perm.begin() + count, perm.end());
    std::sort(split.holdout.begin(), split.holdout.end());
    std::sort(split.remaining.begin(), split.remaining.end());
    return split;
}

std::vector<std::vector<std::size_t>> class_histogram(const Dataset& data, const ShardSet& shards) {
    std::vector<std::vector<std::size_t>> h(shards.shards.size(), std::vector<std::size_t>(data.n_classes, 0));
    for (std::size_t j = 0; j < shards.shards.size(); ++j)
        for (auto idx : shards.shards[j]) ++h[j][static_cast<std::size_t>(data.labels.at(idx))];
    return h;
}

double mean_majority_fraction(const Dataset& data, const ShardSet& shards) {
    auto h = class_histogram(data, shards);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < h.size(); ++j) {
        if (shards.shards[j].empty()) continue;
        sum += static_cast<double>(*std::max_element(h[j].begin(), h[j].end())) /
               static_cast<double>(shards.shards[j].size());
        ++n;
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

void write_shards(const ShardSet& shards, const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t j = 0; j < shards.shards.size(); ++j) {
        const auto path = (std::filesystem::path(dir) / ("shard_" + std::to_string(j) + ".txt")).string();
        std::ofstream os(path);
        if (!os) throw Error("cannot open " + path + " for writing");
        for (auto idx : shards.shards[j]) os << idx << '\n';
        if (!os) throw Error("write failed: " + path);
    }
}

} // namespace fedimpres
