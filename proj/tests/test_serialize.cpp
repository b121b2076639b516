#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "stcal/serialize.hpp"

using namespace stcal;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("stcal_ser_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("tensor stream round-trip preserves shape and payload") {
    auto t = make_tensor({2, 3}, {1.5, -2.25, 0.0, 1e-300, 3.14159, -7.0});
    std::stringstream ss;
    write_tensor(ss, t->shape, t->data, Dtype::f64);
    Dtype dt;
    auto back = read_tensor(ss, &dt);
    CHECK(dt == Dtype::f64);
    CHECK(back->shape == t->shape);
    CHECK(back->data == t->data);
}

TEST_CASE("f32 payload rounds through float precision") {
    auto t = make_tensor({3}, {1.0 / 3.0, 2.0, -1e-45});
    std::stringstream ss;
    write_tensor(ss, t->shape, t->data, Dtype::f32);
    auto back = read_tensor(ss);
    for (size_t i = 0; i < 3; ++i)
        CHECK(back->data[i] == static_cast<double>(static_cast<float>(t->data[i])));
}

TEST_CASE("label file round-trip") {
    TempDir dir;
    std::vector<int64_t> labels{0, 3, 1, 1, 2, 0};
    save_labels(dir.file("l.stlb"), labels);
    CHECK(load_labels(dir.file("l.stlb")) == labels);
}

TEST_CASE("checkpoint keeps meta, order, and tensor identity") {
    TempDir dir;
    Checkpoint ck;
    ck.meta = {{"kind", "student"}, {"T", "3"}};
    ck.tensors.emplace_back("b", make_tensor({2}, {5, 6}));
    ck.tensors.emplace_back("a", make_tensor({1, 2}, {-1, 2}));
    save_checkpoint(dir.file("c.stck"), ck);

    Checkpoint back = load_checkpoint(dir.file("c.stck"));
    CHECK(back.meta_value("kind") == "student");
    CHECK(back.meta_value("T") == "3");
    CHECK(back.meta_value("missing") == "");
    REQUIRE(back.tensors.size() == 2);
    CHECK(back.tensors[0].first == "b");  // insertion order survives
    CHECK(back.tensors[1].first == "a");
    REQUIRE(back.find("a") != nullptr);
    CHECK((*back.find("a"))->shape == Shape{1, 2});
    CHECK((*back.find("a"))->data == std::vector<double>{-1, 2});
    CHECK(back.find("zz") == nullptr);
}

TEST_CASE("corrupt magic is an io error") {
    TempDir dir;
    {
        std::ofstream os(dir.file("bad.stns"), std::ios::binary);
        os << "NOPE garbage";
    }
    CHECK_THROWS_AS(load_tensor(dir.file("bad.stns")), Error);
    CHECK_THROWS_AS(load_checkpoint(dir.file("bad.stns")), Error);
    try {
        load_tensor(dir.file("bad.stns"));
    } catch (const Error& e) {
        CHECK(e.kind() == Error::Kind::io);
    }
}

TEST_CASE("truncated tensor payload is rejected") {
    TempDir dir;
    auto t = make_tensor({4, 4}, std::vector<double>(16, 1.0));
    save_tensor(dir.file("t.stns"), t);
    auto full = std::filesystem::file_size(dir.file("t.stns"));
    std::filesystem::resize_file(dir.file("t.stns"), full - 8);
    CHECK_THROWS_AS(load_tensor(dir.file("t.stns")), Error);
}

TEST_CASE("save_tensor honors the active precision mode") {
    TempDir dir;
    auto t = make_tensor({1}, {1.0 / 3.0});
    set_precision(Precision::f32);
    save_tensor(dir.file("p.stns"), t);
    set_precision(Precision::f64);
    auto back = load_tensor(dir.file("p.stns"));
    CHECK(back->data[0] == static_cast<double>(static_cast<float>(1.0 / 3.0)));
}
