#include "fedimpres/dataset.hpp"

#include "fedimpres/errors.hpp"
#include "fedimpres/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fedimpres {

Shape Dataset::sample_shape() const {
    if (images.rank() < 2) throw ValidationError("dataset images need a leading sample dimension");
    return Shape(images.shape().begin() + 1, images.shape().end());
}

void Dataset::validate() const {
    if (labels.empty()) throw ValidationError("dataset is empty");
    if (images.rank() != 4 || images.dim(0) != labels.size())
        throw ValidationError("dataset images " + shape_str(images.shape()) + " do not match " +
                              std::to_string(labels.size()) + " labels");
    if (n_classes == 0 || n_classes > 256) throw ValidationError("n_classes must be in [1, 256]");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes)
            throw ValidationError("sample " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                                  " outside [0, " + std::to_string(n_classes) + ")");
    for (std::size_t i = 0; i < images.size(); ++i)
        if (!(images[i] >= 0.0 && images[i] <= 1.0))
            throw ValidationError("pixel " + std::to_string(i) + " outside [0, 1]");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.images = gather_rows(images, indices);
    out.n_classes = n_classes;
    out.labels.reserve(indices.size());
    for (auto i : indices) out.labels.push_back(labels.at(i));
    return out;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    std::uint8_t b[4];
    std::memcpy(b, &v, 4);
    out.insert(out.end(), b, b + 4);
}

} // namespace

std::vector<std::uint8_t> encode_fidb(const Dataset& data) {
    data.validate();
    const std::size_t N = data.images.dim(0), C = data.images.dim(1), H = data.images.dim(2), W = data.images.dim(3);
    std::vector<std::uint8_t> out;
    out.reserve(28 + N + data.images.size() * 4);
    out.insert(out.end(), {'F', 'I', 'D', 'B'});
    for (std::size_t v : {std::size_t{kFidbVersion}, N, C, H, W, data.n_classes}) put_u32(out, static_cast<std::uint32_t>(v));
    for (int y : data.labels) out.push_back(static_cast<std::uint8_t>(y));
    for (double p : data.images.data()) {
        float f = static_cast<float>(p);
        std::uint8_t b[4];
        std::memcpy(b, &f, 4);
        out.insert(out.end(), b, b + 4);
    }
    return out;
}

Dataset decode_fidb(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    if (bytes.size() < 4) throw FormatError("truncated FIDB magic", 0);
    if (std::memcmp(bytes.data(), "FIDB", 4) != 0) throw FormatError("bad FIDB magic", 0);
    pos = 4;
    auto get_u32 = [&](const char* field) {
        if (pos + 4 > bytes.size()) throw FormatError(std::string("truncated FIDB header field ") + field, pos);
        std::uint32_t v;
        std::memcpy(&v, bytes.data() + pos, 4);
        pos += 4;
        return v;
    };
    const std::uint32_t version = get_u32("version");
    if (version != kFidbVersion) throw FormatError("unsupported FIDB version " + std::to_string(version), 4);
    const std::uint32_t N = get_u32("N"), C = get_u32("C"), H = get_u32("H"), W = get_u32("W"), K = get_u32("K");
    if (N == 0) throw ValidationError("FIDB file holds no samples");
    if (C == 0 || H == 0 || W == 0) throw FormatError("FIDB image dimensions must be positive", 12);
    if (K == 0 || K > 256) throw ValidationError("FIDB class count must be in [1, 256]");

    const std::size_t pixels = static_cast<std::size_t>(N) * C * H * W;
    if (pos + N > bytes.size()) throw FormatError("truncated FIDB label block", pos);
    Dataset d;
    d.n_classes = K;
    d.labels.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
        d.labels[i] = bytes[pos + i];
        if (d.labels[i] >= static_cast<int>(K))
            throw ValidationError("sample " + std::to_string(i) + " has label " + std::to_string(d.labels[i]) +
                                  " >= K=" + std::to_string(K));
    }
    pos += N;
    if (pos + pixels * 4 > bytes.size()) throw FormatError("truncated FIDB pixel block", pos);
    if (pos + pixels * 4 < bytes.size()) throw FormatError("trailing bytes after FIDB pixel block", pos + pixels * 4);
    std::vector<double> values(pixels);
    for (std::size_t i = 0; i < pixels; ++i) {
        float f;
        std::memcpy(&f, bytes.data() + pos + 4 * i, 4);
        if (!(f >= 0.0f && f <= 1.0f))
            throw ValidationError("pixel " + std::to_string(i) + " outside [0, 1] at byte offset " +
                                  std::to_string(pos + 4 * i));
        values[i] = f;
    }
    d.images = Tensor({N, C, H, W}, std::move(values));
    return d;
}

void save_dataset(const Dataset& data, const std::string& path) {
    auto bytes = encode_fidb(data);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw Error("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot open dataset " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_fidb(bytes);
}

Tensor toy_prototypes(const ToyTaskSpec& spec) {
    const std::size_t K = spec.n_classes, C = spec.channels, H = spec.height, W = spec.width;
    if (K == 0 || C == 0 || H == 0 || W == 0) throw InputError("toy task dimensions must be positive");
    Rng rng(spec.prototype_seed);
    Tensor protos({K, C, H, W}, 0.0);
    const double scale = static_cast<double>(std::min(H, W));
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t blob = 0; blob < std::max<std::size_t>(spec.blobs_per_class, 1); ++blob) {
            const double cy = rng.uniform() * static_cast<double>(H - 1);
            const double cx = rng.uniform() * static_cast<double>(W - 1);
            const double width = scale * (0.08 + 0.12 * rng.uniform());
            std::vector<double> amp(C);
            for (auto& a : amp) a = 0.5 + 0.5 * rng.uniform();
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x) {
                        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
                        double& px = protos[((k * C + c) * H + y) * W + x];
                        px += amp[c] * std::exp(-(dy * dy + dx * dx) / (2.0 * width * width));
                    }
        }
    }
    for (double& v : protos.data()) v = std::min(v, 1.0);
    return protos;
}

Dataset make_toy_task(const ToyTaskSpec& spec) {
    if (spec.per_class.size() != spec.n_classes)
        throw InputError("toy task needs one sample count per class");
    if (spec.noise < 0.0) throw InputError("toy task noise must be non-negative");
    Tensor protos = toy_prototypes(spec);
    const std::size_t stride = spec.channels * spec.height * spec.width;
    std::size_t total = 0;
    for (auto n : spec.per_class) total += n;
    if (total == 0) throw InputError("toy task has no samples");

    Rng rng(spec.sample_seed);
    std::vector<double> pixels;
    pixels.reserve(total * stride);
    Dataset d;
    d.n_classes = spec.n_classes;
    // Class-major order; partitioners and loaders never rely on it.
    for (std::size_t k = 0; k < spec.n_classes; ++k) {
        for (std::size_t i = 0; i < spec.per_class[k]; ++i) {
            for (std::size_t p = 0; p < stride; ++p) {
                double v = protos[k * stride + p];
                if (spec.noise > 0.0) v += spec.noise * rng.normal();
                v = std::clamp(v, 0.0, 1.0);
                pixels.push_back(static_cast<double>(static_cast<float>(v)));
            }
            d.labels.push_back(static_cast<int>(k));
        }
    }
    d.images = Tensor({total, spec.channels, spec.height, spec.width}, std::move(pixels));
    return d;
}

SeedPool random_seed_pool(const Shape& sample_shape, std::size_t count, std::uint64_t seed) {
    if (count == 0) throw InputError("seed pool size must be positive");
    Shape s{count};
    s.insert(s.end(), sample_shape.begin(), sample_shape.end());
    Tensor t(s);
    Rng rng(seed);
    for (double& v : t.data()) v = rng.uniform();
    return {std::move(t), PoolSource::random};
}

SeedPool file_seed_pool(const std::string& path, std::size_t count) {
    Dataset d = load_dataset(path);
    if (d.size() < count)
        throw InputError("seed pool file " + path + " holds " + std::to_string(d.size()) + " images, need " +
                         std::to_string(count));
    return {std::move(d.images), PoolSource::file};
}

SeedPool holdout_seed_pool(const Dataset& data, std::span<const std::size_t> indices) {
    if (indices.empty()) throw InputError("holdout seed pool is empty");
    return {gather_rows(data.images, indices), PoolSource::holdout};
}

} // namespace fedimpres
