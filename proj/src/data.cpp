#include "stcal/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "stcal/error.hpp"
#include "stcal/rng.hpp"
#include "stcal/serialize.hpp"

namespace stcal {

void Dataset::validate() const {
    if (!images || images->shape.size() != 4 || size() <= 0)
        throw domain_error("dataset: images must be a nonempty [n,c,h,w] tensor");
    if (static_cast<int64_t>(labels.size()) != size())
        throw domain_error("dataset: " + std::to_string(size()) + " images but " +
                           std::to_string(labels.size()) + " labels");
    if (classes < 2) throw domain_error("dataset: needs at least 2 classes");
    for (int64_t l : labels)
        if (l < 0 || l >= classes)
            throw domain_error("dataset: label " + std::to_string(l) + " outside [0," +
                               std::to_string(classes) + ")");
    for (double v : images->data)
        if (!std::isfinite(v) || v < 0.0 || v > 1.0)
            throw domain_error("dataset: image value " + std::to_string(v) + " outside [0,1]");
}

Dataset synth_generate(const SynthSpec& spec, uint64_t data_seed, uint64_t noise_seed,
                       const std::string& split) {
    if (spec.classes < 2) throw domain_error("synth_generate: classes must be >= 2");
    const int64_t n = spec.classes * spec.per_class;
    const int64_t c = spec.channels, s = spec.image_size;
    Rng rng(data_seed);
    Rng noise(noise_seed);

    std::vector<double> images(static_cast<size_t>(n * c * s * s));
    std::vector<int64_t> labels(static_cast<size_t>(n));

    int64_t idx = 0;
    for (int64_t cls = 0; cls < spec.classes; ++cls) {
        const int64_t family = cls % 3;
        const int64_t variant = cls / 3;
        const int64_t period = 4 + 2 * variant;
        const int64_t cell = 2 + variant;
        for (int64_t k = 0; k < spec.per_class; ++k, ++idx) {
            labels[idx] = cls;
            // fixed draw count per instance keeps the stream aligned
            const uint64_t r1 = rng.uniform_int(64);
            const double amp = 0.45 + 0.35 * rng.uniform();
            const double bg = 0.05 + 0.15 * rng.uniform();
            const uint64_t r2 = rng.uniform_int(64);

            for (int64_t ch = 0; ch < c; ++ch) {
                const double ch_scale = c > 1 ? 1.0 - 0.5 * static_cast<double>(ch) /
                                                          static_cast<double>(c - 1)
                                              : 1.0;
                double* img = images.data() + ((idx * c + ch) * s * s);
                for (int64_t r = 0; r < s; ++r) {
                    for (int64_t q = 0; q < s; ++q) {
                        bool on = false;
                        if (family == 0) {
                            on = ((r + static_cast<int64_t>(r1)) % period) * 2 < period;
                        } else if (family == 1) {
                            on = ((q + static_cast<int64_t>(r1)) % period) * 2 < period;
                        } else {
                            int64_t pr = (r + static_cast<int64_t>(r1 % (2 * cell))) / cell;
                            int64_t pc = (q + static_cast<int64_t>(r2 % (2 * cell))) / cell;
                            on = (pr + pc) % 2 == 0;
                        }
                        img[r * s + q] = ch_scale * (on ? bg + amp : bg);
                    }
                }
            }
        }
    }
    for (double& v : images) {
        v += noise.normal(0.0, spec.noise_sigma);
        v = std::clamp(v, 0.0, 1.0);
    }

    Dataset ds;
    ds.images = make_tensor({n, c, s, s}, std::move(images));
    ds.labels = std::move(labels);
    ds.classes = spec.classes;
    ds.split = split;
    ds.validate();
    return ds;
}

namespace {

uint32_t read_u32_be(std::ifstream& is, const char* what) {
    unsigned char b[4];
    auto at = is.tellg();
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is)
        throw io_error(std::string("truncated ") + what + " at byte " +
                       std::to_string(static_cast<long long>(at)));
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw io_error("cannot open " + images_path);
    if (uint32_t magic = read_u32_be(imgs, "idx image magic"); magic != 0x00000803)
        throw io_error("bad idx image magic in " + images_path + ": got " +
                       std::to_string(magic));
    const int64_t n = read_u32_be(imgs, "idx image count");
    const int64_t rows = read_u32_be(imgs, "idx rows");
    const int64_t cols = read_u32_be(imgs, "idx cols");
    std::vector<unsigned char> raw(static_cast<size_t>(n * rows * cols));
    auto at = imgs.tellg();
    imgs.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!imgs)
        throw io_error("truncated idx image payload at byte " +
                       std::to_string(static_cast<long long>(at)));

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw io_error("cannot open " + labels_path);
    if (uint32_t magic = read_u32_be(labs, "idx label magic"); magic != 0x00000801)
        throw io_error("bad idx label magic in " + labels_path + ": got " +
                       std::to_string(magic));
    const int64_t ln = read_u32_be(labs, "idx label count");
    if (ln != n)
        throw io_error("idx count mismatch: " + std::to_string(n) + " images vs " +
                       std::to_string(ln) + " labels");
    std::vector<unsigned char> lraw(static_cast<size_t>(ln));
    at = labs.tellg();
    labs.read(reinterpret_cast<char*>(lraw.data()), static_cast<std::streamsize>(lraw.size()));
    if (!labs)
        throw io_error("truncated idx label payload at byte " +
                       std::to_string(static_cast<long long>(at)));

    Dataset ds;
    std::vector<double> images(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) images[i] = raw[i] / 255.0;
    ds.images = make_tensor({n, 1, rows, cols}, std::move(images));
    ds.labels.assign(lraw.begin(), lraw.end());
    ds.classes = 0;
    for (int64_t l : ds.labels) ds.classes = std::max(ds.classes, l + 1);
    ds.classes = std::max<int64_t>(ds.classes, 2);
    ds.split = "idx";
    ds.validate();
    return ds;
}

Dataset load_raw(const std::string& images_path, const std::string& labels_path) {
    Dataset ds;
    ds.images = load_tensor(images_path);
    ds.labels = load_labels(labels_path);
    if (ds.images->shape.size() != 4)
        throw io_error("raw dataset tensor must be rank 4, got " + shape_str(ds.images->shape));
    if (static_cast<int64_t>(ds.labels.size()) != ds.images->shape[0])
        throw io_error("raw dataset count mismatch: " + std::to_string(ds.images->shape[0]) +
                       " images vs " + std::to_string(ds.labels.size()) + " labels");
    ds.classes = 0;
    for (int64_t l : ds.labels) ds.classes = std::max(ds.classes, l + 1);
    ds.classes = std::max<int64_t>(ds.classes, 2);
    ds.split = "raw";
    ds.validate();
    return ds;
}

void save_raw(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
    save_tensor(images_path, ds.images);
    save_labels(labels_path, ds.labels);
}

Dataset corrupt_labels(const Dataset& ds, double p, uint64_t seed) {
    if (p < 0.0 || p > 1.0) throw domain_error("corrupt_labels: p must be in [0,1]");
    Dataset out;
    out.images = ds.images;
    out.labels = ds.labels;
    out.classes = ds.classes;
    out.split = ds.split;
    const int64_t n = ds.size();
    const int64_t m = std::llround(p * static_cast<double>(n));
    Rng rng(seed);
    std::vector<int64_t> order(n);
    for (int64_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    for (int64_t k = 0; k < m; ++k) {
        int64_t i = order[k];
        int64_t shift = 1 + static_cast<int64_t>(rng.uniform_int(ds.classes - 1));
        out.labels[i] = (ds.labels[i] + shift) % ds.classes;
    }
    return out;
}

std::vector<std::vector<int64_t>> make_batches(int64_t n, const BatchPlan& plan, int64_t epoch) {
    if (plan.b < 1) throw domain_error("batch size must be >= 1");
    if (plan.b > n)
        throw domain_error("batch size " + std::to_string(plan.b) + " exceeds dataset size " +
                           std::to_string(n));
    std::vector<int64_t> order(n);
    for (int64_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = Rng(plan.seed).fork(static_cast<uint64_t>(epoch));
    rng.shuffle(order);
    std::vector<std::vector<int64_t>> batches;
    int64_t full = n / plan.b;
    for (int64_t k = 0; k < full; ++k)
        batches.emplace_back(order.begin() + k * plan.b, order.begin() + (k + 1) * plan.b);
    if (!plan.drop_last && full * plan.b < n)
        batches.emplace_back(order.begin() + full * plan.b, order.end());
    return batches;
}

Batch gather_batch(const Dataset& ds, const std::vector<int64_t>& idx) {
    const auto& shape = ds.images->shape;
    const int64_t stride = shape[1] * shape[2] * shape[3];
    std::vector<double> data(idx.size() * static_cast<size_t>(stride));
    Batch batch;
    batch.labels.reserve(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) {
        std::copy_n(ds.images->data.data() + idx[k] * stride, stride,
                    data.data() + static_cast<int64_t>(k) * stride);
        batch.labels.push_back(ds.labels[idx[k]]);
    }
    batch.images = make_tensor({static_cast<int64_t>(idx.size()), shape[1], shape[2], shape[3]},
                               std::move(data));
    return batch;
}

}  // namespace stcal
