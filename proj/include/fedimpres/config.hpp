#pragma once

#include "fedimpres/dataset.hpp"
#include "fedimpres/federated.hpp"
#include "fedimpres/impression.hpp"
#include "fedimpres/model.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace fedimpres {

struct ExperimentConfig {
    RoundConfig round;
    SynthesisConfig synthesis;

    // FIDB paths; the toy task is generated when `dataset` is empty.
    std::string dataset;
    std::string test_dataset;
    std::string init_path; // seed pool file for init_mode = file

    std::size_t toy_classes = 8;
    std::size_t toy_channels = 1;
    std::size_t toy_height = 8;
    std::size_t toy_width = 8;
    std::size_t toy_train_per_class = 64;
    std::size_t toy_test_per_class = 32;
    double toy_noise = 0.3;
    std::size_t toy_blobs = 2;

    std::size_t clients = 8;
    double alpha = 0.01;
    double holdout_fraction = 0.1;

    std::uint64_t seed = 0;
    // Comma-separated hidden layers: dense:N, relu, conv:OUT:K:STRIDE:PAD, flatten.
    // The dense head to the class count is appended.
    std::string arch = "dense:32,relu";
    double gamma = 0.01; // accepted and echoed, not used
    std::string run_id = "run";
    std::string out = "out";

    void validate() const;
};

std::string to_string(InitMode mode);
InitMode parse_init_mode(const std::string& name);

// Flat `key = value` lines; `#` starts a comment. Keys absent from the text
// keep the values already in `cfg`. Errors carry the line number.
void apply_config_text(ExperimentConfig& cfg, const std::string& text);
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

// Sets one key (used for command-line overrides).
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value, int line = 0);
std::vector<std::string> config_keys();

// Every key in a fixed order, one `key = value` line each. Parsing the echo
// reproduces the configuration exactly.
std::string echo_config(const ExperimentConfig& cfg);

std::vector<LayerSpec> parse_arch(const std::string& arch, const Shape& sample_shape, std::size_t n_classes);

struct ExperimentData {
    Dataset train; // full training set, holdout included
    std::optional<Dataset> test;
    HoldoutSplit split;
    ShardSet shards;
};

// Loads or generates the data and carves holdout and client shards.
ExperimentData prepare_data(const ExperimentConfig& cfg);

} // namespace fedimpres
