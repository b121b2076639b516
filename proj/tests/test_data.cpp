#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "stcal/data.hpp"

using namespace stcal;

namespace {

SynthSpec tiny_spec() {
    SynthSpec s;
    s.classes = 3;
    s.per_class = 10;
    s.image_size = 8;
    s.channels = 2;
    return s;
}

}  // namespace

TEST_CASE("synth generation is deterministic in its seeds") {
    auto a = synth_generate(tiny_spec(), 5, 6, "train");
    auto b = synth_generate(tiny_spec(), 5, 6, "train");
    CHECK(a.images->data == b.images->data);
    CHECK(a.labels == b.labels);

    auto c = synth_generate(tiny_spec(), 5, 7, "train");
    CHECK(a.images->data != c.images->data);  // noise stream moved
    CHECK(a.labels == c.labels);              // class layout did not

    auto d = synth_generate(tiny_spec(), 9, 6, "train");
    CHECK(a.images->data != d.images->data);
}

TEST_CASE("synth output is well-formed") {
    auto ds = synth_generate(tiny_spec(), 1, 2, "train");
    CHECK(ds.size() == 30);
    CHECK(ds.images->shape == Shape{30, 2, 8, 8});
    CHECK(ds.classes == 3);
    ds.validate();
    for (double v : ds.images->data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    std::vector<int64_t> counts(3, 0);
    for (int64_t l : ds.labels) counts[l]++;
    CHECK(counts == std::vector<int64_t>{10, 10, 10});
}

TEST_CASE("classes are separable by their mean images") {
    // Per-class pixel means must differ far more across classes than the
    // noise floor, otherwise no model can learn the task.
    auto spec = tiny_spec();
    spec.per_class = 40;
    auto ds = synth_generate(spec, 1, 2, "train");
    const int64_t px = spec.channels * spec.image_size * spec.image_size;
    std::vector<std::vector<double>> mean(3, std::vector<double>(px, 0.0));
    for (int64_t i = 0; i < ds.size(); ++i)
        for (int64_t j = 0; j < px; ++j)
            mean[ds.labels[i]][j] += ds.images->data[i * px + j] / spec.per_class;
    for (int a = 0; a < 3; ++a)
        for (int b = a + 1; b < 3; ++b) {
            double d2 = 0.0;
            for (int64_t j = 0; j < px; ++j) {
                double d = mean[a][j] - mean[b][j];
                d2 += d * d;
            }
            CHECK(std::sqrt(d2 / px) > 0.05);
        }
}

TEST_CASE("corrupt_labels flips exactly round(p*n) labels to wrong classes") {
    auto ds = synth_generate(tiny_spec(), 1, 2, "train");
    auto noisy = corrupt_labels(ds, 0.3, 77);
    CHECK(noisy.images == ds.images);  // pixels untouched
    int64_t flipped = 0;
    for (int64_t i = 0; i < ds.size(); ++i)
        if (noisy.labels[i] != ds.labels[i]) {
            ++flipped;
            CHECK(noisy.labels[i] >= 0);
            CHECK(noisy.labels[i] < ds.classes);
        }
    CHECK(flipped == 9);  // round(0.3 * 30)

    auto again = corrupt_labels(ds, 0.3, 77);
    CHECK(again.labels == noisy.labels);
    auto other = corrupt_labels(ds, 0.3, 78);
    CHECK(other.labels != noisy.labels);

    auto zero = corrupt_labels(ds, 0.0, 77);
    CHECK(zero.labels == ds.labels);
}

TEST_CASE("make_batches covers every index once per epoch") {
    BatchPlan plan;
    plan.b = 7;
    plan.seed = 40;
    plan.drop_last = false;
    auto batches = make_batches(23, plan, 0);
    REQUIRE(batches.size() == 4);
    CHECK(batches.back().size() == 2);
    std::set<int64_t> seen;
    for (auto& bt : batches)
        for (int64_t i : bt) CHECK(seen.insert(i).second);
    CHECK(seen.size() == 23);

    plan.drop_last = true;
    auto dropped = make_batches(23, plan, 0);
    CHECK(dropped.size() == 3);
    for (auto& bt : dropped) CHECK(bt.size() == 7);
}

TEST_CASE("batch order is seeded and varies by epoch") {
    BatchPlan plan;
    plan.b = 8;
    plan.seed = 5;
    auto e0 = make_batches(64, plan, 0);
    auto e0_again = make_batches(64, plan, 0);
    CHECK(e0 == e0_again);
    auto e1 = make_batches(64, plan, 1);
    CHECK(e0 != e1);
    plan.seed = 6;
    CHECK(make_batches(64, plan, 0) != e0);
}

TEST_CASE("gather_batch slices rows in index order") {
    auto ds = synth_generate(tiny_spec(), 1, 2, "train");
    Batch bt = gather_batch(ds, {4, 0, 17});
    CHECK(bt.images->shape == Shape{3, 2, 8, 8});
    CHECK(bt.labels == std::vector<int64_t>{ds.labels[4], ds.labels[0], ds.labels[17]});
    const int64_t px = 2 * 8 * 8;
    for (int64_t j = 0; j < px; ++j) {
        CHECK(bt.images->data[j] == ds.images->data[4 * px + j]);
        CHECK(bt.images->data[2 * px + j] == ds.images->data[17 * px + j]);
    }
}

TEST_CASE("raw save/load round-trips a dataset") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / ("stcal_data_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    auto ds = synth_generate(tiny_spec(), 3, 4, "test");
    std::string ip = (dir / "i.stns").string(), lp = (dir / "l.stlb").string();
    save_raw(ds, ip, lp);
    auto back = load_raw(ip, lp);
    CHECK(back.images->data == ds.images->data);
    CHECK(back.labels == ds.labels);
    CHECK(back.classes == ds.classes);
    fs::remove_all(dir);
}

TEST_CASE("idx loader reads the big-endian fixture") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / ("stcal_idx_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    // two 2x2 single-channel images, pixels 0..255 row-major
    const unsigned char images[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
                                    0, 51, 102, 153, 204, 255, 0, 10};
    const unsigned char labels[] = {0, 0, 8, 1, 0, 0, 0, 2, 1, 0};
    auto write = [&](const fs::path& p, const unsigned char* d, size_t n) {
        std::FILE* f = std::fopen(p.string().c_str(), "wb");
        REQUIRE(f != nullptr);
        std::fwrite(d, 1, n, f);
        std::fclose(f);
    };
    write(dir / "im.idx", images, sizeof(images));
    write(dir / "lb.idx", labels, sizeof(labels));
    auto ds = load_idx((dir / "im.idx").string(), (dir / "lb.idx").string());
    CHECK(ds.images->shape == Shape{2, 1, 2, 2});
    CHECK(ds.images->data[0] == 0.0);
    CHECK(ds.images->data[1] == doctest::Approx(51.0 / 255.0));
    CHECK(ds.images->data[5] == 1.0);
    CHECK(ds.labels == std::vector<int64_t>{1, 0});
    CHECK(ds.classes == 2);
    fs::remove_all(dir);
}
