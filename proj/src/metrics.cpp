#include "fedimpres/metrics.hpp"

#include "fedimpres/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace fedimpres {

namespace {

constexpr std::size_t kEvalChunk = 512;

} // namespace

Evaluation evaluate(const Model& model, const Dataset& data, std::span<const std::size_t> indices) {
    if (indices.empty()) throw InputError("evaluate: dataset is empty");
    std::size_t correct = 0;
    double loss = 0.0;
    for (std::size_t at = 0; at < indices.size(); at += kEvalChunk) {
        auto chunk = indices.subspan(at, std::min(kEvalChunk, indices.size() - at));
        Tensor x = gather_rows(data.images, chunk);
        std::vector<int> y;
        y.reserve(chunk.size());
        for (auto i : chunk) y.push_back(data.labels.at(i));
        Tensor z = forward(model, x);
        auto pred = argmax_rows(z);
        for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
        loss += ce_loss(z, y) * static_cast<double>(y.size());
    }
    const double n = static_cast<double>(indices.size());
    return {static_cast<double>(correct) / n, loss / n};
}

Evaluation evaluate(const Model& model, const Dataset& data) {
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), 0);
    return evaluate(model, data, all);
}

CrossAccuracyMatrix cross_matrix(std::span<const Model> models, const Dataset& data,
                                 const std::vector<std::vector<std::size_t>>& eval_shards) {
    CrossAccuracyMatrix a(models.size(), std::vector<double>(eval_shards.size(), 0.0));
    for (std::size_t i = 0; i < models.size(); ++i)
        for (std::size_t j = 0; j < eval_shards.size(); ++j) a[i][j] = evaluate(models[i], data, eval_shards[j]).accuracy;
    return a;
}

std::vector<std::vector<ForgettingPoint>> forgetting_curve(std::span<const RoundRecord> records) {
    std::vector<std::vector<ForgettingPoint>> curve;
    for (const auto& r : records) {
        for (std::size_t e = 0; e < r.cross_by_epoch.size(); ++e) {
            const auto& m = r.cross_by_epoch[e];
            if (m.size() < 2) continue;
            if (curve.size() < m.size()) curve.resize(m.size());
            for (std::size_t i = 0; i < m.size(); ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < m[i].size(); ++j)
                    if (j != i) s += m[i][j];
                curve[i].push_back({r.round, static_cast<int>(e), s / static_cast<double>(m[i].size() - 1)});
            }
        }
    }
    return curve;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void row(std::string& out, int round, const std::string& client, const std::string& metric, double v) {
    out += std::to_string(round);
    out += ',';
    out += client;
    out += ',';
    out += metric;
    out += ',';
    out += fmt(v);
    out += '\n';
}

} // namespace

std::string records_to_csv(std::span<const RoundRecord> records) {
    std::string out = "round,client,metric,value\n";
    for (const auto& r : records) {
        for (const auto& c : r.clients) {
            row(out, r.round, std::to_string(c.client), "local_loss", c.local_loss);
            row(out, r.round, std::to_string(c.client), "local_acc", c.local_acc);
        }
        if (r.global_acc) row(out, r.round, "server", "global_acc", *r.global_acc);
        if (r.global_loss) row(out, r.round, "server", "global_loss", *r.global_loss);
        if (r.impression) {
            row(out, r.round, "server", "impression_initial_ce", r.impression->initial_ce);
            row(out, r.round, "server", "impression_final_ce", r.impression->final_ce);
            row(out, r.round, "server", "impression_penalty", r.impression->penalty);
            row(out, r.round, "server", "impression_head_grad_norm", r.impression->head_grad_norm);
        }
        for (std::size_t e = 0; e < r.cross_by_epoch.size(); ++e)
            for (std::size_t i = 0; i < r.cross_by_epoch[e].size(); ++i)
                for (std::size_t j = 0; j < r.cross_by_epoch[e][i].size(); ++j)
                    row(out, r.round, std::to_string(i), "cross_acc_e" + std::to_string(e) + "_on" + std::to_string(j),
                        r.cross_by_epoch[e][i][j]);
    }
    return out;
}

std::string records_to_json(std::span<const RoundRecord> records) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["round"] = r.round;
        j["algorithm"] = r.algorithm;
        auto clients = nlohmann::ordered_json::array();
        for (const auto& c : r.clients)
            clients.push_back({{"client", c.client}, {"local_loss", c.local_loss}, {"local_acc", c.local_acc}});
        j["clients"] = std::move(clients);
        j["global_acc"] = r.global_acc ? nlohmann::ordered_json(*r.global_acc) : nlohmann::ordered_json(nullptr);
        j["global_loss"] = r.global_loss ? nlohmann::ordered_json(*r.global_loss) : nlohmann::ordered_json(nullptr);
        j["cross_by_epoch"] = r.cross_by_epoch;
        if (r.impression)
            j["impression"] = {{"initial_ce", r.impression->initial_ce},
                               {"final_ce", r.impression->final_ce},
                               {"penalty", r.impression->penalty},
                               {"head_grad_norm", r.impression->head_grad_norm}};
        else
            j["impression"] = nullptr;
        arr.push_back(std::move(j));
    }
    return arr.dump(2) + "\n";
}

std::vector<RoundRecord> records_from_json(const std::string& text) {
    std::vector<RoundRecord> out;
    try {
        auto arr = nlohmann::json::parse(text);
        for (const auto& j : arr) {
            RoundRecord r;
            r.round = j.at("round").get<int>();
            r.algorithm = j.at("algorithm").get<std::string>();
            for (const auto& c : j.at("clients"))
                r.clients.push_back({c.at("client").get<int>(), c.at("local_loss").get<double>(),
                                     c.at("local_acc").get<double>()});
            if (!j.at("global_acc").is_null()) r.global_acc = j["global_acc"].get<double>();
            if (!j.at("global_loss").is_null()) r.global_loss = j["global_loss"].get<double>();
            r.cross_by_epoch = j.at("cross_by_epoch").get<std::vector<CrossAccuracyMatrix>>();
            if (const auto& imp = j.at("impression"); !imp.is_null())
                r.impression = ImpressionStats{imp.at("initial_ce").get<double>(), imp.at("final_ce").get<double>(),
                                               imp.at("penalty").get<double>(), imp.at("head_grad_norm").get<double>()};
            out.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed round records: ") + e.what());
    }
    return out;
}

std::string forgetting_to_csv(const std::vector<std::vector<ForgettingPoint>>& curve) {
    std::string out = "client,round,epoch,mean_offdiag_acc\n";
    for (std::size_t i = 0; i < curve.size(); ++i)
        for (const auto& p : curve[i])
            out += std::to_string(i) + "," + std::to_string(p.round) + "," + std::to_string(p.epoch) + "," +
                   fmt(p.value) + "\n";
    return out;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) throw Error("write failed: " + path);
}

void write_records(std::span<const RoundRecord> records, const std::string& path, RecordFormat format) {
    write_text_file(path, format == RecordFormat::csv ? records_to_csv(records) : records_to_json(records));
}

std::string record_file_name(const std::string& run_id, const std::string& algorithm, const std::string& ext) {
    return run_id + "_" + algorithm + "." + ext;
}

} // namespace fedimpres
