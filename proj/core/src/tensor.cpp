#include <jof/tensor.hpp>

#include <cstring>
#include <fstream>

namespace jof {

namespace {

void append_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
}

template <typename T>
void append_pod(std::vector<std::uint8_t>& out, T v) {
    append_bytes(out, &v, sizeof(T));
}

template <typename T>
T read_pod(const std::vector<std::uint8_t>& in, std::size_t& off) {
    if (off + sizeof(T) > in.size()) throw IoError("tensor store: truncated payload");
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

constexpr char kMagic[4] = {'J', 'O', 'F', '1'};
constexpr std::uint32_t kVersion = 1;

} // namespace

Tensor Tensor::scalar(std::string name, double v) {
    return Tensor{std::move(name), {1}, {v}};
}

Tensor Tensor::from_vector(std::string name, const Vector& v) {
    Tensor t;
    t.name = std::move(name);
    t.dims = {static_cast<std::uint64_t>(v.size())};
    t.data.assign(v.data(), v.data() + v.size());
    return t;
}

Tensor Tensor::from_matrix(std::string name, const Matrix& m) {
    Tensor t;
    t.name = std::move(name);
    t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    t.data.assign(m.data(), m.data() + m.size()); // row-major
    return t;
}

double Tensor::as_scalar() const {
    if (element_count() != 1) throw UsageError("tensor '" + name + "' is not a scalar");
    return data[0];
}

Vector Tensor::as_vector() const {
    Vector v(static_cast<Eigen::Index>(data.size()));
    std::memcpy(v.data(), data.data(), data.size() * sizeof(double));
    return v;
}

Matrix Tensor::as_matrix() const {
    if (dims.size() != 2) throw UsageError("tensor '" + name + "' is not rank-2");
    Matrix m(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
    std::memcpy(m.data(), data.data(), data.size() * sizeof(double));
    return m;
}

std::uint64_t Tensor::element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

void TensorStore::put(Tensor t) {
    if (t.element_count() != t.data.size())
        throw UsageError("tensor '" + t.name + "' dims do not match payload size");
    for (auto& existing : tensors_) {
        if (existing.name == t.name) {
            existing = std::move(t);
            return;
        }
    }
    tensors_.push_back(std::move(t));
}

bool TensorStore::contains(const std::string& name) const {
    for (const auto& t : tensors_)
        if (t.name == name) return true;
    return false;
}

const Tensor& TensorStore::get(const std::string& name) const {
    for (const auto& t : tensors_)
        if (t.name == name) return t;
    throw IoError("tensor store: missing tensor '" + name + "'");
}

Tensor* TensorStore::find(const std::string& name) {
    for (auto& t : tensors_)
        if (t.name == name) return &t;
    return nullptr;
}

std::vector<std::uint8_t> TensorStore::serialize() const {
    std::vector<std::uint8_t> out;
    append_bytes(out, kMagic, 4);
    append_pod<std::uint32_t>(out, kVersion);
    for (const auto& t : tensors_) {
        append_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        append_bytes(out, t.name.data(), t.name.size());
        append_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) append_pod<std::uint64_t>(out, d);
        if (t.data.size() != t.element_count())
            throw UsageError("tensor '" + t.name + "': dims/payload mismatch");
        append_bytes(out, t.data.data(), t.data.size() * sizeof(double));
    }
    return out;
}

TensorStore TensorStore::deserialize(const std::vector<std::uint8_t>& bytes) {
    std::size_t off = 0;
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw IoError("tensor store: bad magic (not a JOF1 checkpoint)");
    off = 4;
    const auto version = read_pod<std::uint32_t>(bytes, off);
    if (version != kVersion)
        throw IoError("tensor store: unsupported format version " + std::to_string(version));
    TensorStore store;
    while (off < bytes.size()) {
        Tensor t;
        const auto name_len = read_pod<std::uint32_t>(bytes, off);
        if (off + name_len > bytes.size()) throw IoError("tensor store: truncated name");
        t.name.assign(reinterpret_cast<const char*>(bytes.data() + off), name_len);
        off += name_len;
        const auto rank = read_pod<std::uint32_t>(bytes, off);
        t.dims.resize(rank);
        for (auto& d : t.dims) d = read_pod<std::uint64_t>(bytes, off);
        const std::uint64_t count = t.element_count();
        if (off + count * sizeof(double) > bytes.size())
            throw IoError("tensor store: truncated payload for '" + t.name + "'");
        t.data.resize(count);
        std::memcpy(t.data.data(), bytes.data() + off, count * sizeof(double));
        off += count * sizeof(double);
        store.tensors_.push_back(std::move(t));
    }
    return store;
}

void TensorStore::save(const std::string& path) const {
    const auto bytes = serialize();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

TensorStore TensorStore::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a64(bytes.data(), bytes.size());
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

} // namespace jof
