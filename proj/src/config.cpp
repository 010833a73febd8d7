#include "fedimpres/config.hpp"

#include "fedimpres/errors.hpp"
#include "fedimpres/partition.hpp"
#include "fedimpres/rng.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace fedimpres {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) parts.push_back(trim(cur));
    if (!s.empty() && s.back() == sep) parts.emplace_back();
    return parts;
}

template <class T>
T parse_number(const std::string& key, const std::string& text, int line) {
    T v{};
    const char* first = text.data();
    const char* last = first + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (text.empty() || ec != std::errc() || ptr != last)
        throw ConfigError("key '" + key + "': cannot parse '" + text + "' as a number", line);
    return v;
}

bool parse_bool(const std::string& key, const std::string& text, int line) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + text + "'", line);
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct KeySpec {
    std::string name;
    std::function<void(ExperimentConfig&, const std::string&, int)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

KeySpec size_key(std::string name, std::function<std::size_t&(ExperimentConfig&)> ref) {
    return {name,
            [name, ref](ExperimentConfig& c, const std::string& v, int line) {
                ref(c) = parse_number<std::size_t>(name, v, line);
            },
            [ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); }};
}

KeySpec int_key(std::string name, std::function<int&(ExperimentConfig&)> ref) {
    return {name,
            [name, ref](ExperimentConfig& c, const std::string& v, int line) { ref(c) = parse_number<int>(name, v, line); },
            [ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); }};
}

KeySpec u64_key(std::string name, std::function<std::uint64_t&(ExperimentConfig&)> ref) {
    return {name,
            [name, ref](ExperimentConfig& c, const std::string& v, int line) {
                ref(c) = parse_number<std::uint64_t>(name, v, line);
            },
            [ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); }};
}

KeySpec double_key(std::string name, std::function<double&(ExperimentConfig&)> ref) {
    return {name,
            [name, ref](ExperimentConfig& c, const std::string& v, int line) {
                ref(c) = parse_number<double>(name, v, line);
            },
            [ref](const ExperimentConfig& c) { return fmt_double(ref(const_cast<ExperimentConfig&>(c))); }};
}

KeySpec bool_key(std::string name, std::function<bool&(ExperimentConfig&)> ref) {
    return {name,
            [name, ref](ExperimentConfig& c, const std::string& v, int line) { ref(c) = parse_bool(name, v, line); },
            [ref](const ExperimentConfig& c) { return std::string(ref(const_cast<ExperimentConfig&>(c)) ? "true" : "false"); }};
}

KeySpec string_key(std::string name, std::function<std::string&(ExperimentConfig&)> ref) {
    return {name, [ref](ExperimentConfig& c, const std::string& v, int) { ref(c) = v; },
            [ref](const ExperimentConfig& c) { return ref(const_cast<ExperimentConfig&>(c)); }};
}

const std::vector<KeySpec>& key_table() {
    static const std::vector<KeySpec> table = [] {
        using C = ExperimentConfig;
        std::vector<KeySpec> t;
        t.push_back({"algorithm",
                     [](C& c, const std::string& v, int line) {
                         try {
                             c.round.algorithm = parse_algorithm(v);
                         } catch (const ValidationError& e) {
                             throw ConfigError(e.what(), line);
                         }
                     },
                     [](const C& c) { return to_string(c.round.algorithm); }});
        t.push_back(int_key("rounds", [](C& c) -> int& { return c.round.total_rounds; }));
        t.push_back(int_key("local_epochs", [](C& c) -> int& { return c.round.local_epochs; }));
        t.push_back(double_key("train_lr", [](C& c) -> double& { return c.round.local_lr; }));
        t.push_back(size_key("batch_size", [](C& c) -> std::size_t& { return c.round.batch_size; }));
        t.push_back(double_key("beta", [](C& c) -> double& { return c.round.beta; }));
        t.push_back(double_key("mu", [](C& c) -> double& { return c.round.mu; }));
        t.push_back(int_key("warmup_rounds", [](C& c) -> int& { return c.round.warmup_rounds; }));
        t.push_back({"aggregation",
                     [](C& c, const std::string& v, int line) {
                         try {
                             c.round.aggregation = parse_aggregation(v);
                         } catch (const ValidationError& e) {
                             throw ConfigError(e.what(), line);
                         }
                     },
                     [](const C& c) { return to_string(c.round.aggregation); }});
        t.push_back(bool_key("track_cross", [](C& c) -> bool& { return c.round.track_cross; }));
        t.push_back(bool_key("warm_start", [](C& c) -> bool& { return c.round.warm_start; }));

        t.push_back(double_key("synth_lr", [](C& c) -> double& { return c.synthesis.pixel_lr; }));
        t.push_back(size_key("synth_batch", [](C& c) -> std::size_t& { return c.synthesis.batch_size; }));
        t.push_back(int_key("admm_epochs", [](C& c) -> int& { return c.synthesis.admm_epochs; }));
        t.push_back(int_key("pixel_steps", [](C& c) -> int& { return c.synthesis.pixel_steps_per_epoch; }));
        t.push_back(double_key("rho", [](C& c) -> double& { return c.synthesis.rho; }));
        t.push_back({"init_mode",
                     [](C& c, const std::string& v, int line) {
                         try {
                             c.synthesis.init_mode = parse_init_mode(v);
                         } catch (const ValidationError& e) {
                             throw ConfigError(e.what(), line);
                         }
                     },
                     [](const C& c) { return to_string(c.synthesis.init_mode); }});
        t.push_back(string_key("init_path", [](C& c) -> std::string& { return c.init_path; }));
        t.push_back(bool_key("ce_only", [](C& c) -> bool& { return c.synthesis.ablation_ce_only; }));
        t.push_back(bool_key("balance_labels", [](C& c) -> bool& { return c.synthesis.balance_labels; }));
        t.push_back(double_key("divergence_factor", [](C& c) -> double& { return c.synthesis.divergence_factor; }));
        t.push_back(double_key("gamma", [](C& c) -> double& { return c.gamma; }));

        t.push_back(string_key("dataset", [](C& c) -> std::string& { return c.dataset; }));
        t.push_back(string_key("test_dataset", [](C& c) -> std::string& { return c.test_dataset; }));
        t.push_back(size_key("toy_classes", [](C& c) -> std::size_t& { return c.toy_classes; }));
        t.push_back(size_key("toy_channels", [](C& c) -> std::size_t& { return c.toy_channels; }));
        t.push_back(size_key("toy_height", [](C& c) -> std::size_t& { return c.toy_height; }));
        t.push_back(size_key("toy_width", [](C& c) -> std::size_t& { return c.toy_width; }));
        t.push_back(size_key("toy_train_per_class", [](C& c) -> std::size_t& { return c.toy_train_per_class; }));
        t.push_back(size_key("toy_test_per_class", [](C& c) -> std::size_t& { return c.toy_test_per_class; }));
        t.push_back(double_key("toy_noise", [](C& c) -> double& { return c.toy_noise; }));
        t.push_back(size_key("toy_blobs", [](C& c) -> std::size_t& { return c.toy_blobs; }));
        t.push_back(size_key("clients", [](C& c) -> std::size_t& { return c.clients; }));
        t.push_back(double_key("alpha", [](C& c) -> double& { return c.alpha; }));
        t.push_back(double_key("holdout_fraction", [](C& c) -> double& { return c.holdout_fraction; }));

        t.push_back(u64_key("seed", [](C& c) -> std::uint64_t& { return c.seed; }));
        t.push_back(string_key("arch", [](C& c) -> std::string& { return c.arch; }));
        t.push_back(string_key("run_id", [](C& c) -> std::string& { return c.run_id; }));
        t.push_back(string_key("out", [](C& c) -> std::string& { return c.out; }));
        return t;
    }();
    return table;
}

} // namespace

std::string to_string(InitMode mode) {
    switch (mode) {
    case InitMode::random: return "random";
    case InitMode::holdout: return "holdout";
    case InitMode::file: return "file";
    }
    return "unknown";
}

InitMode parse_init_mode(const std::string& name) {
    if (name == "random") return InitMode::random;
    if (name == "holdout") return InitMode::holdout;
    if (name == "file") return InitMode::file;
    throw ValidationError("unknown init_mode '" + name + "' (expected random, holdout or file)");
}

void ExperimentConfig::validate() const {
    round.validate();
    synthesis.validate();
    if (clients < 1) throw ValidationError("clients must be >= 1");
    if (!(alpha > 0.0)) throw ValidationError("alpha must be positive");
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ValidationError("holdout_fraction must be in [0, 1)");
    if (synthesis.init_mode == InitMode::holdout && !(holdout_fraction > 0.0))
        throw ValidationError("init_mode = holdout needs holdout_fraction > 0");
    if (synthesis.init_mode == InitMode::file && init_path.empty())
        throw ValidationError("init_mode = file needs init_path");
    if (!(gamma >= 0.0)) throw ValidationError("gamma must be >= 0");
    if (run_id.empty()) throw ValidationError("run_id must not be empty");
    if (run_id.find('/') != std::string::npos) throw ValidationError("run_id must not contain '/'");
    if (dataset.empty()) {
        if (toy_classes < 2) throw ValidationError("toy_classes must be >= 2");
        if (toy_classes > 255) throw ValidationError("toy_classes must be <= 255");
        if (toy_channels < 1 || toy_height < 1 || toy_width < 1)
            throw ValidationError("toy image dimensions must be >= 1");
        if (toy_train_per_class < 1 || toy_test_per_class < 1)
            throw ValidationError("toy sample counts must be >= 1");
        if (!(toy_noise >= 0.0)) throw ValidationError("toy_noise must be >= 0");
        if (toy_blobs < 1) throw ValidationError("toy_blobs must be >= 1");
    }
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& k : key_table()) keys.push_back(k.name);
    return keys;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value, int line) {
    for (const auto& k : key_table())
        if (k.name == key) return k.set(cfg, value, line);
    throw ConfigError("unknown key '" + key + "'", line);
}

void apply_config_text(ExperimentConfig& cfg, const std::string& text) {
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        const std::string s = trim(raw);
        if (s.empty()) continue;
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("expected 'key = value', got '" + s + "'", line);
        const std::string key = trim(s.substr(0, eq));
        if (key.empty()) throw ConfigError("missing key before '='", line);
        set_config_value(cfg, key, trim(s.substr(eq + 1)), line);
    }
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    apply_config_text(cfg, text);
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string echo_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& k : key_table()) out += k.name + " = " + k.get(cfg) + "\n";
    return out;
}

std::vector<LayerSpec> parse_arch(const std::string& arch, const Shape& sample_shape, std::size_t n_classes) {
    std::vector<LayerSpec> layers;
    Shape cur = sample_shape;
    auto flat = [&] { return shape_numel(cur); };
    auto bad = [&](const std::string& tok, const std::string& why) {
        return ConfigError("arch token '" + tok + "': " + why);
    };
    const std::string body = trim(arch);
    if (!body.empty()) {
        for (const auto& tok : split(body, ',')) {
            const auto parts = split(tok, ':');
            auto num = [&](std::size_t i) {
                try {
                    return parse_number<std::size_t>("arch", parts.at(i), 0);
                } catch (const std::exception&) {
                    throw bad(tok, "bad number");
                }
            };
            if (parts[0] == "dense") {
                if (parts.size() != 2) throw bad(tok, "expected dense:WIDTH");
                const std::size_t w = num(1);
                if (w == 0) throw bad(tok, "width must be >= 1");
                layers.push_back(DenseLayer{flat(), w});
                cur = {w};
            } else if (parts[0] == "relu" && parts.size() == 1) {
                layers.push_back(ReluLayer{});
            } else if (parts[0] == "flatten" && parts.size() == 1) {
                layers.push_back(FlattenLayer{});
                cur = {flat()};
            } else if (parts[0] == "conv") {
                if (parts.size() != 5) throw bad(tok, "expected conv:OUT:KERNEL:STRIDE:PAD");
                if (cur.size() != 3) throw bad(tok, "convolution needs a C x H x W input");
                Conv2dLayer c{cur[0], num(1), num(2), num(3), num(4)};
                if (c.out_ch == 0 || c.kernel == 0 || c.stride == 0) throw bad(tok, "sizes must be >= 1");
                if (cur[1] + 2 * c.pad < c.kernel || cur[2] + 2 * c.pad < c.kernel)
                    throw bad(tok, "kernel larger than the padded input");
                const std::size_t h = (cur[1] + 2 * c.pad - c.kernel) / c.stride + 1;
                const std::size_t w = (cur[2] + 2 * c.pad - c.kernel) / c.stride + 1;
                layers.push_back(c);
                cur = {c.out_ch, h, w};
            } else {
                throw bad(tok, "unknown layer");
            }
        }
    }
    layers.push_back(DenseLayer{flat(), n_classes});
    return layers;
}

ExperimentData prepare_data(const ExperimentConfig& cfg) {
    ExperimentData d;
    if (cfg.dataset.empty()) {
        ToyTaskSpec spec;
        spec.n_classes = cfg.toy_classes;
        spec.channels = cfg.toy_channels;
        spec.height = cfg.toy_height;
        spec.width = cfg.toy_width;
        spec.noise = cfg.toy_noise;
        spec.blobs_per_class = cfg.toy_blobs;
        spec.prototype_seed = derive_seed(cfg.seed, "toy-prototypes");
        spec.per_class.assign(cfg.toy_classes, cfg.toy_train_per_class);
        spec.sample_seed = derive_seed(cfg.seed, "toy-train");
        d.train = make_toy_task(spec);
        spec.per_class.assign(cfg.toy_classes, cfg.toy_test_per_class);
        spec.sample_seed = derive_seed(cfg.seed, "toy-test");
        d.test = make_toy_task(spec);
    } else {
        d.train = load_dataset(cfg.dataset);
        if (!cfg.test_dataset.empty()) {
            d.test = load_dataset(cfg.test_dataset);
            if (d.test->sample_shape() != d.train.sample_shape() || d.test->n_classes != d.train.n_classes)
                throw ValidationError("test dataset does not match the training dataset's shape or class count");
        }
    }
    d.split = holdout_split(d.train.size(), cfg.holdout_fraction, derive_seed(cfg.seed, "holdout"));
    if (d.split.remaining.size() < cfg.clients)
        throw ConfigError("clients (" + std::to_string(cfg.clients) + ") exceeds the " +
                          std::to_string(d.split.remaining.size()) + " samples left after the holdout");
    d.shards = dirichlet_partition(d.train, d.split.remaining, cfg.clients, cfg.alpha, derive_seed(cfg.seed, "partition"));
    return d;
}

} // namespace fedimpres
