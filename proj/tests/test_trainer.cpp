#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "stcal/trainer.hpp"

using namespace stcal;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("stcal_tr_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

// A run small enough that every trainer test stays under a few seconds.
RunConfig tiny_config(const std::string& out_root) {
    RunConfig cfg;
    cfg.set("dataset.classes", "2");
    cfg.set("dataset.per_class_train", "16");
    cfg.set("dataset.per_class_test", "8");
    cfg.set("dataset.image_size", "8");
    cfg.set("T", "2");
    cfg.set("b", "8");
    cfg.set("epochs", "2");
    cfg.set("teacher.epochs", "2");
    cfg.set("out.dir", out_root);
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("seed derivation separates streams") {
    CHECK(derive_seed(1, 0) == derive_seed(1, 0));
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}

TEST_CASE("load_split draws train and test from different streams") {
    TempDir dir;
    auto cfg = tiny_config(dir.file("runs"));
    auto train = load_split(cfg, "train");
    auto test = load_split(cfg, "test");
    CHECK(train.size() == 32);
    CHECK(test.size() == 16);
    CHECK(train.images->data != test.images->data);

    auto again = load_split(cfg, "train");
    CHECK(again.images->data == train.images->data);
}

TEST_CASE("teacher training is reproducible and reloadable") {
    TempDir dir;
    auto cfg = tiny_config(dir.file("runs"));
    auto train = load_split(cfg, "train");
    auto test = load_split(cfg, "test");

    auto r1 = train_teacher(cfg, train, test, dir.file("t1.stck"));
    auto r2 = train_teacher(cfg, train, test, dir.file("t2.stck"));
    CHECK(r1.final_test_acc == r2.final_test_acc);
    CHECK(slurp(dir.file("t1.stck")) == slurp(dir.file("t2.stck")));
    CHECK(slurp(dir.file("t1.stck.log")) == slurp(dir.file("t2.stck.log")));

    auto net = load_network(dir.file("t1.stck"), teacher_arch(cfg));
    for (size_t i = 0; i < net.params().size(); ++i)
        CHECK(net.params()[i]->data == r1.net.params()[i]->data);

    // wrong arch is rejected and names the offending field
    auto other = cfg;
    other.set("teacher.channels", "4,4,4");
    other.set("teacher.taps", "1,1,1");
    CHECK_THROWS_WITH_AS(load_network(dir.file("t1.stck"), teacher_arch(other)),
                         doctest::Contains("arch.channels"), Error);
}

TEST_CASE("obtain_teacher trains once then reuses the checkpoint") {
    TempDir dir;
    auto cfg = tiny_config(dir.file("runs"));
    cfg.set("teacher.checkpoint", dir.file("teach.stck"));
    auto train = load_split(cfg, "train");
    auto test = load_split(cfg, "test");
    CHECK_FALSE(fs::exists(dir.file("teach.stck")));
    auto first = obtain_teacher(cfg, train, test, true);
    REQUIRE(fs::exists(dir.file("teach.stck")));
    auto stamp = slurp(dir.file("teach.stck"));
    auto second = obtain_teacher(cfg, train, test, true);
    CHECK(slurp(dir.file("teach.stck")) == stamp);  // not retrained
    for (size_t i = 0; i < first.params().size(); ++i)
        CHECK(first.params()[i]->data == second.params()[i]->data);

    cfg.set("teacher.checkpoint", dir.file("never_trained.stck"));
    CHECK_THROWS_AS(obtain_teacher(cfg, train, test, false), Error);  // only loads when present
}

TEST_CASE("distill runs every mode and writes the run directory") {
    TempDir dir;
    for (const std::string mode : {"baseline", "kd", "feature_kd", "sastc"}) {
        auto cfg = tiny_config(dir.file("runs"));
        cfg.set("mode", mode);
        cfg.set("out.name", "m_" + mode);
        if (mode == "feature_kd") cfg.set("pairs.feature_kd", "0:1,1:2");
        cfg.set("teacher.checkpoint", dir.file("teach.stck"));
        cfg.validate();
        auto train = load_split(cfg, "train");
        auto test = load_split(cfg, "test");
        auto teacher = obtain_teacher(cfg, train, test, true);
        auto res = distill(cfg, teacher, train, test);

        CAPTURE(mode);
        CHECK(fs::exists(res.run_dir + "/config.cfg"));
        CHECK(fs::exists(res.run_dir + "/metrics.log"));
        CHECK(fs::exists(res.run_dir + "/student.stck"));
        CHECK(fs::exists(res.run_dir + "/summary.txt"));
        CHECK(res.test_acc.size() == 2);
        CHECK(res.stm_raw.size() == 2);
        // the feature-matching modes carry trainable calibration state
        CHECK((res.bank.has_value() == (mode == "sastc" || mode == "feature_kd")));

        // the echoed config reproduces the run's configuration
        RunConfig echoed;
        echoed.load_file(res.run_dir + "/config.cfg");
        CHECK(echoed == cfg);

        // every metrics line parses; step records carry the loss breakdown
        std::ifstream log(res.run_dir + "/metrics.log");
        std::string line;
        int steps = 0, epochs = 0;
        while (std::getline(log, line)) {
            auto rec = parse_record(line);
            REQUIRE(rec.count("kind"));
            if (rec.at("kind") == "step") {
                ++steps;
                double l_total = std::stod(rec.at("l_total"));
                double l_kd = std::stod(rec.at("l_kd"));
                double l_sastc = std::stod(rec.at("l_sastc"));
                double beta = std::stod(rec.at("beta"));
                CHECK(l_total == doctest::Approx(l_kd + beta * l_sastc).epsilon(1e-12));
                if (mode == "baseline") {
                    CHECK(std::stod(rec.at("l_kl")) == 0.0);
                    CHECK(l_sastc == 0.0);
                }
                if (mode == "kd") CHECK(l_sastc == 0.0);
                if (mode == "feature_kd" || mode == "sastc") CHECK(l_sastc > 0.0);
            } else if (rec.at("kind") == "epoch") {
                ++epochs;
                CHECK(rec.count("test_acc"));
                CHECK(rec.count("stm_ln"));
                CHECK(rec.count("spike_rate_0"));
            }
        }
        CHECK(steps == 2 * 4);  // 32 instances / b=8, 2 epochs
        CHECK(epochs == 2);
    }
}

TEST_CASE("distilling twice is byte-identical") {
    TempDir dir;
    auto run = [&](const std::string& name) {
        auto cfg = tiny_config(dir.file("runs"));
        cfg.set("mode", "sastc");
        cfg.set("out.name", name);
        cfg.set("teacher.checkpoint", dir.file("teach.stck"));
        auto train = load_split(cfg, "train");
        auto test = load_split(cfg, "test");
        auto teacher = obtain_teacher(cfg, train, test, true);
        return distill(cfg, teacher, train, test).run_dir;
    };
    auto d1 = run("rep1");
    auto d2 = run("rep2");
    CHECK(slurp(d1 + "/metrics.log") == slurp(d2 + "/metrics.log"));
    CHECK(slurp(d1 + "/student.stck") == slurp(d2 + "/student.stck"));
    CHECK(slurp(d1 + "/summary.txt") == slurp(d2 + "/summary.txt"));
}

TEST_CASE("an exploding run aborts with a loss diagnosis") {
    TempDir dir;
    auto cfg = tiny_config(dir.file("runs"));
    cfg.set("mode", "kd");
    cfg.set("teacher.checkpoint", dir.file("teach.stck"));
    auto train = load_split(cfg, "train");
    auto test = load_split(cfg, "test");
    auto teacher = obtain_teacher(cfg, train, test, true);  // trained at the sane lr
    cfg.set("optimizer.lr", "1e18");
    cfg.set("optimizer.cosine", "false");
    cfg.set("epochs", "8");
    CHECK_THROWS_WITH_AS(distill(cfg, teacher, train, test), doctest::Contains("l_"), Error);
}

TEST_CASE("evaluate reports accuracy and per-stage spike rates") {
    TempDir dir;
    auto cfg = tiny_config(dir.file("runs"));
    cfg.set("mode", "baseline");
    cfg.set("teacher.checkpoint", dir.file("teach.stck"));
    auto train = load_split(cfg, "train");
    auto test = load_split(cfg, "test");
    auto teacher = obtain_teacher(cfg, train, test, true);
    auto res = distill(cfg, teacher, train, test);

    auto ev = evaluate(res.student, test, 2, cfg.lif_params(), 8);
    CHECK(ev.accuracy == res.final_test_acc);
    REQUIRE(ev.spike_rates.size() == 2);
    for (double r : ev.spike_rates) {
        CHECK(r >= 0.0);
        CHECK(r <= 1.0);
    }
    // different T changes the readout
    auto ev4 = evaluate(res.student, test, 4, cfg.lif_params(), 8);
    CHECK(ev4.accuracy >= 0.0);
    // batch size must not matter
    auto ev_b3 = evaluate(res.student, test, 2, cfg.lif_params(), 3);
    CHECK(ev_b3.accuracy == ev.accuracy);
}

TEST_CASE("render_table lines up columns") {
    auto table = render_table({"run", "acc"}, {{"kd", "0.5"}, {"sastc_long_name", "0.875"}});
    std::istringstream is(table);
    std::string h, r1, r2;
    std::getline(is, h);
    std::getline(is, r1);
    std::getline(is, r2);
    CHECK(h.find("run") == 0);
    CHECK(h.find("acc") != std::string::npos);
    CHECK(r1.find("0.5") == h.find("acc"));  // aligned under the header
    CHECK(r2.find("sastc_long_name") == 0);
}
