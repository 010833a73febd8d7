#pragma once

#include "fedimpres/dataset.hpp"
#include "fedimpres/model.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedimpres {

struct Evaluation {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

Evaluation evaluate(const Model& model, const Dataset& data);
Evaluation evaluate(const Model& model, const Dataset& data, std::span<const std::size_t> indices);

// A[i][j]: accuracy of model i on evaluation shard j.
using CrossAccuracyMatrix = std::vector<std::vector<double>>;

CrossAccuracyMatrix cross_matrix(std::span<const Model> models, const Dataset& data,
                                 const std::vector<std::vector<std::size_t>>& eval_shards);

struct ClientMetrics {
    int client = 0;
    double local_loss = 0.0;
    double local_acc = 0.0;

    friend bool operator==(const ClientMetrics&, const ClientMetrics&) = default;
};

struct ImpressionStats {
    double initial_ce = 0.0;
    double final_ce = 0.0;
    double penalty = 0.0;
    double head_grad_norm = 0.0;

    friend bool operator==(const ImpressionStats&, const ImpressionStats&) = default;
};

struct RoundRecord {
    int round = 0;
    std::string algorithm;
    std::vector<ClientMetrics> clients;
    std::optional<double> global_acc;
    std::optional<double> global_loss;
    // Entry e holds the matrix after e local epochs (entry 0: the broadcast model).
    std::vector<CrossAccuracyMatrix> cross_by_epoch;
    std::optional<ImpressionStats> impression;

    friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

struct ForgettingPoint {
    int round = 0;
    int epoch = 0;
    double value = 0.0; // mean off-diagonal accuracy of the client's row
};

// Per client, the mean off-diagonal cross accuracy after each local epoch of
// each recorded round, in (round, epoch) order. Empty with fewer than two clients.
std::vector<std::vector<ForgettingPoint>> forgetting_curve(std::span<const RoundRecord> records);

enum class RecordFormat { csv, json };

// Long form: round,client,metric,value; server-level rows use client "server".
std::string records_to_csv(std::span<const RoundRecord> records);
std::string records_to_json(std::span<const RoundRecord> records);
std::vector<RoundRecord> records_from_json(const std::string& text);
std::string forgetting_to_csv(const std::vector<std::vector<ForgettingPoint>>& curve);

void write_records(std::span<const RoundRecord> records, const std::string& path, RecordFormat format);
void write_text_file(const std::string& path, const std::string& text);

// "{run_id}_{algorithm}.{ext}"
std::string record_file_name(const std::string& run_id, const std::string& algorithm, const std::string& ext);

} // namespace fedimpres
