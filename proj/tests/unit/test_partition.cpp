#include "fedimpres/errors.hpp"
#include "fedimpres/partition.hpp"
#include "golden.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

using namespace fedimpres;

namespace {

// Labels only; partitioning never looks at pixels.
Dataset labeled(std::vector<std::size_t> per_class) {
    Dataset d;
    d.n_classes = per_class.size();
    for (std::size_t k = 0; k < per_class.size(); ++k)
        for (std::size_t i = 0; i < per_class[k]; ++i) d.labels.push_back(static_cast<int>(k));
    d.images = Tensor({d.labels.size(), 1, 1, 1}, 0.5);
    return d;
}

void check_cover(const ShardSet& s, std::vector<std::size_t> expected) {
    std::vector<std::size_t> all;
    for (const auto& shard : s.shards) {
        CHECK_FALSE(shard.empty());
        CHECK(std::is_sorted(shard.begin(), shard.end()));
        all.insert(all.end(), shard.begin(), shard.end());
    }
    std::sort(all.begin(), all.end());
    std::sort(expected.begin(), expected.end());
    CHECK(all == expected);
}

std::vector<std::size_t> iota_n(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

} // namespace

TEST_CASE("largest remainder hand examples") {
    std::vector<double> half{0.5, 0.5};
    CHECK(largest_remainder(half, 3) == std::vector<std::size_t>{2, 1});
    std::vector<double> p{0.2, 0.3, 0.5};
    CHECK(largest_remainder(p, 10) == std::vector<std::size_t>{2, 3, 5});
    std::vector<double> third{1.0 / 3, 1.0 / 3, 1.0 / 3};
    CHECK(largest_remainder(third, 10) == std::vector<std::size_t>{4, 3, 3});
    std::vector<double> skew{0.74, 0.26};
    CHECK(largest_remainder(skew, 2) == std::vector<std::size_t>{1, 1});
    std::vector<double> one{1.0};
    CHECK(largest_remainder(one, 7) == std::vector<std::size_t>{7});
    CHECK(largest_remainder(p, 0) == std::vector<std::size_t>{0, 0, 0});
}

TEST_CASE("single client receives every index") {
    Dataset d = labeled({5, 3, 4});
    ShardSet s = dirichlet_partition(d, 1, 0.5, 3);
    REQUIRE(s.shards.size() == 1);
    CHECK(s.shards[0] == iota_n(12));
    CHECK(s.alpha == 0.5);
    CHECK(s.seed == 3);
}

TEST_CASE("partitions conserve and cover the subset") {
    Dataset d = labeled({40, 25, 31, 7});
    for (double alpha : {0.005, 0.1, 1.0, 100.0})
        for (std::uint64_t seed = 0; seed < 20; ++seed)
            for (std::size_t n : {2, 5, 8}) {
                ShardSet s = dirichlet_partition(d, n, alpha, seed);
                CHECK(s.shards.size() == n);
                CHECK(s.total() == d.size());
                check_cover(s, iota_n(d.size()));
            }
    std::vector<std::size_t> subset{1, 4, 41, 42, 70, 99, 100, 102};
    ShardSet s = dirichlet_partition(d, subset, 3, 0.3, 9);
    check_cover(s, subset);
}

TEST_CASE("partition is deterministic per seed") {
    Dataset d = labeled({30, 30, 30});
    CHECK(dirichlet_partition(d, 4, 0.1, 77) == dirichlet_partition(d, 4, 0.1, 77));
    CHECK_FALSE(dirichlet_partition(d, 4, 0.1, 77).shards == dirichlet_partition(d, 4, 0.1, 78).shards);
}

TEST_CASE("large alpha splits every class almost evenly") {
    Dataset d = labeled({80, 120, 40});
    ShardSet s = dirichlet_partition(d, 4, 1e6, 5);
    auto h = class_histogram(d, s);
    const std::size_t per_class[] = {80, 120, 40};
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t k = 0; k < 3; ++k) {
            const double expect = static_cast<double>(per_class[k]) / 4.0;
            CHECK(std::abs(static_cast<double>(h[j][k]) - expect) <= 1.0);
        }
}

TEST_CASE("tiny alpha yields near single-class shards") {
    Dataset d = labeled(std::vector<std::size_t>(8, 100));
    ShardSet s = dirichlet_partition(d, 8, 0.005, 1);
    auto h = class_histogram(d, s);
    for (std::size_t j = 0; j < 8; ++j) {
        const double major = static_cast<double>(*std::max_element(h[j].begin(), h[j].end()));
        CHECK(major / static_cast<double>(s.shards[j].size()) >= 0.9);
    }
    std::string text;
    for (const auto& row : h) {
        for (std::size_t k = 0; k < row.size(); ++k) text += (k ? " " : "") + std::to_string(row[k]);
        text += "\n";
    }
    CHECK(text == golden::pinned("partition_alpha0.005_seed1.txt", text));
}

TEST_CASE("empty shards are repaired from the largest shard") {
    Dataset d = labeled({3});
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ShardSet s = dirichlet_partition(d, 3, 0.001, seed);
        for (const auto& shard : s.shards) CHECK(shard.size() == 1);
        check_cover(s, iota_n(3));
    }
    Dataset e = labeled({50, 50});
    for (std::uint64_t seed = 0; seed < 10; ++seed) check_cover(dirichlet_partition(e, 8, 0.001, seed), iota_n(100));
}

TEST_CASE("partition argument errors") {
    Dataset d = labeled({2, 2});
    CHECK_THROWS_AS(dirichlet_partition(d, 5, 0.1, 0), InputError);
    CHECK_THROWS_AS(dirichlet_partition(d, 0, 0.1, 0), InputError);
    CHECK_THROWS_AS(dirichlet_partition(d, 2, 0.0, 0), InputError);
    CHECK_THROWS_AS(dirichlet_partition(d, 2, -1.0, 0), InputError);
    std::vector<std::size_t> bad{0, 9};
    CHECK_THROWS_AS(dirichlet_partition(d, bad, 1, 0.1, 0), InputError);
}

TEST_CASE("holdout split") {
    HoldoutSplit h = holdout_split(101, 0.1, 4);
    CHECK(h.holdout.size() == 10);
    CHECK(h.remaining.size() == 91);
    std::set<std::size_t> all(h.holdout.begin(), h.holdout.end());
    all.insert(h.remaining.begin(), h.remaining.end());
    CHECK(all.size() == 101);
    CHECK(*all.rbegin() == 100);
    HoldoutSplit again = holdout_split(101, 0.1, 4);
    CHECK(again.holdout == h.holdout);
    CHECK(holdout_split(101, 0.1, 5).holdout != h.holdout);
    CHECK(holdout_split(10, 0.0, 1).holdout.empty());
    CHECK(holdout_split(10, 0.25, 1).holdout.size() == 3); // llround(2.5)
    CHECK_THROWS_AS(holdout_split(10, 1.0, 1), InputError);
}

TEST_CASE("class histogram and majority fraction") {
    Dataset d = labeled({3, 2});
    ShardSet s;
    s.shards = {{0, 1, 3}, {2, 4}};
    auto h = class_histogram(d, s);
    CHECK(h == std::vector<std::vector<std::size_t>>{{2, 1}, {1, 1}});
    CHECK(mean_majority_fraction(d, s) == doctest::Approx((2.0 / 3.0 + 0.5) / 2.0).epsilon(1e-15));
}

TEST_CASE("shard files list one index per line") {
    ShardSet s;
    s.shards = {{0, 5}, {7}};
    const auto dir = std::filesystem::temp_directory_path() / "fedimpres_test_shards";
    std::filesystem::remove_all(dir);
    write_shards(s, dir.string());
    std::ifstream a(dir / "shard_0.txt"), b(dir / "shard_1.txt");
    std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == "0\n5\n");
    CHECK(sb == "7\n");
    std::filesystem::remove_all(dir);
}
