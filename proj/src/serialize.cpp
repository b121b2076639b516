#include "stcal/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "stcal/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace stcal {

namespace {

void write_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw io_error("write failed");
}

template <typename T>
void write_pod(std::ostream& os, T v) {
    write_bytes(os, &v, sizeof(T));
}

void read_bytes(std::istream& is, void* p, size_t n, const char* what) {
    auto at = is.tellg();
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is)
        throw io_error(std::string("truncated ") + what + " at byte " +
                       std::to_string(static_cast<long long>(at)));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
    T v;
    read_bytes(is, &v, sizeof(T), what);
    return v;
}

void write_magic(std::ostream& os, const char m[4]) { write_bytes(os, m, 4); }

void expect_magic(std::istream& is, const char m[4], const char* what) {
    char got[4];
    auto at = is.tellg();
    read_bytes(is, got, 4, what);
    if (std::memcmp(got, m, 4) != 0)
        throw io_error(std::string("bad magic for ") + what + " at byte " +
                       std::to_string(static_cast<long long>(at)));
}

void write_string(std::ostream& os, const std::string& s) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
    write_bytes(os, s.data(), s.size());
}

std::string read_string(std::istream& is, const char* what) {
    auto n = read_pod<uint32_t>(is, what);
    std::string s(n, '\0');
    if (n) read_bytes(is, s.data(), n, what);
    return s;
}

constexpr uint32_t kVersion = 1;

}  // namespace

Dtype dtype_for_current_precision() {
    return precision() == Precision::f32 ? Dtype::f32 : Dtype::f64;
}

void write_tensor(std::ostream& os, const Shape& shape, const std::vector<double>& data,
                  Dtype dtype) {
    write_magic(os, "STNS");
    write_pod<uint32_t>(os, kVersion);
    write_pod<uint32_t>(os, static_cast<uint32_t>(shape.size()));
    for (int64_t d : shape) write_pod<uint64_t>(os, static_cast<uint64_t>(d));
    write_pod<uint32_t>(os, static_cast<uint32_t>(dtype));
    if (dtype == Dtype::f64) {
        write_bytes(os, data.data(), data.size() * sizeof(double));
    } else {
        std::vector<float> f(data.size());
        for (size_t i = 0; i < data.size(); ++i) f[i] = static_cast<float>(data[i]);
        write_bytes(os, f.data(), f.size() * sizeof(float));
    }
}

TensorPtr read_tensor(std::istream& is, Dtype* dtype_out) {
    expect_magic(is, "STNS", "tensor");
    auto version = read_pod<uint32_t>(is, "tensor version");
    if (version != kVersion)
        throw io_error("unsupported tensor version " + std::to_string(version));
    auto rank = read_pod<uint32_t>(is, "tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int64_t>(read_pod<uint64_t>(is, "tensor dims"));
    auto tag = read_pod<uint32_t>(is, "tensor dtype");
    if (tag > 1) throw io_error("unknown dtype tag " + std::to_string(tag));
    auto dtype = static_cast<Dtype>(tag);
    if (dtype_out) *dtype_out = dtype;
    size_t n = static_cast<size_t>(shape_numel(shape));
    std::vector<double> data(n);
    if (dtype == Dtype::f64) {
        if (n) read_bytes(is, data.data(), n * sizeof(double), "tensor payload");
    } else {
        std::vector<float> f(n);
        if (n) read_bytes(is, f.data(), n * sizeof(float), "tensor payload");
        for (size_t i = 0; i < n; ++i) data[i] = static_cast<double>(f[i]);
    }
    return make_tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const TensorPtr& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open " + path + " for writing");
    write_tensor(os, t->shape, t->data, dtype_for_current_precision());
}

TensorPtr load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open " + path);
    return read_tensor(is);
}

void save_labels(const std::string& path, const std::vector<int64_t>& labels) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open " + path + " for writing");
    write_magic(os, "STLB");
    write_pod<uint64_t>(os, labels.size());
    for (int64_t l : labels) {
        if (l < 0 || l > UINT32_MAX) throw domain_error("label out of u32 range");
        write_pod<uint32_t>(os, static_cast<uint32_t>(l));
    }
}

std::vector<int64_t> load_labels(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open " + path);
    expect_magic(is, "STLB", "labels");
    auto n = read_pod<uint64_t>(is, "label count");
    std::vector<int64_t> labels(n);
    for (auto& l : labels) l = read_pod<uint32_t>(is, "label payload");
    return labels;
}

const TensorPtr* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

std::string Checkpoint::meta_value(const std::string& key) const {
    for (const auto& [k, v] : meta)
        if (k == key) return v;
    return "";
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open " + path + " for writing");
    write_magic(os, "STCK");
    write_pod<uint32_t>(os, kVersion);
    write_pod<uint32_t>(os, static_cast<uint32_t>(ckpt.meta.size()));
    for (const auto& [k, v] : ckpt.meta) {
        write_string(os, k);
        write_string(os, v);
    }
    Dtype dtype = dtype_for_current_precision();
    size_t value_size = dtype == Dtype::f64 ? sizeof(double) : sizeof(float);

    write_pod<uint32_t>(os, static_cast<uint32_t>(ckpt.tensors.size()));
    uint64_t offset = 0;  // relative to the payload section
    for (const auto& [name, t] : ckpt.tensors) {
        write_string(os, name);
        write_pod<uint32_t>(os, static_cast<uint32_t>(dtype));
        write_pod<uint32_t>(os, static_cast<uint32_t>(t->shape.size()));
        for (int64_t d : t->shape) write_pod<uint64_t>(os, static_cast<uint64_t>(d));
        write_pod<uint64_t>(os, offset);
        // each payload is a self-contained tensor blob
        uint64_t blob = 4 + 4 + 4 + 8 * t->shape.size() + 4 +
                        static_cast<uint64_t>(t->data.size()) * value_size;
        offset += blob;
    }
    for (const auto& [name, t] : ckpt.tensors) write_tensor(os, t->shape, t->data, dtype);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open " + path);
    expect_magic(is, "STCK", "checkpoint");
    auto version = read_pod<uint32_t>(is, "checkpoint version");
    if (version != kVersion)
        throw io_error("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    auto meta_n = read_pod<uint32_t>(is, "checkpoint meta");
    for (uint32_t i = 0; i < meta_n; ++i) {
        auto k = read_string(is, "checkpoint meta");
        auto v = read_string(is, "checkpoint meta");
        ckpt.meta.emplace_back(std::move(k), std::move(v));
    }
    auto tensor_n = read_pod<uint32_t>(is, "checkpoint manifest");
    struct Entry {
        std::string name;
        uint64_t offset;
    };
    std::vector<Entry> entries;
    for (uint32_t i = 0; i < tensor_n; ++i) {
        Entry e;
        e.name = read_string(is, "checkpoint manifest");
        read_pod<uint32_t>(is, "checkpoint manifest");  // dtype, repeated in the blob
        auto rank = read_pod<uint32_t>(is, "checkpoint manifest");
        for (uint32_t r = 0; r < rank; ++r) read_pod<uint64_t>(is, "checkpoint manifest");
        e.offset = read_pod<uint64_t>(is, "checkpoint manifest");
        entries.push_back(std::move(e));
    }
    auto payload_base = is.tellg();
    for (const auto& e : entries) {
        is.seekg(payload_base + static_cast<std::streamoff>(e.offset));
        ckpt.tensors.emplace_back(e.name, read_tensor(is));
    }
    return ckpt;
}

}  // namespace stcal
