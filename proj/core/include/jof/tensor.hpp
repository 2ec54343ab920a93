#pragma once

#include <jof/common.hpp>

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace jof {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// One named dense array. Rank 1 tensors are stored as n x 1.
struct Tensor {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<double> data;

    static Tensor scalar(std::string name, double v);
    static Tensor from_vector(std::string name, const Vector& v);
    static Tensor from_matrix(std::string name, const Matrix& m);

    double as_scalar() const;
    Vector as_vector() const;
    Matrix as_matrix() const; // rank-2, row-major payload
    std::uint64_t element_count() const;
};

// Ordered collection of tensors; the unit of checkpoint serialization.
//
// On-disk layout (little-endian):
//   magic "JOF1", format version u32
//   then per tensor: name length u32, name bytes, rank u32,
//   dims u64[rank], payload f64[prod(dims)] until end of file.
class TensorStore {
public:
    void put(Tensor t); // replaces an existing tensor of the same name
    bool contains(const std::string& name) const;
    const Tensor& get(const std::string& name) const;
    Tensor* find(const std::string& name);
    const std::vector<Tensor>& tensors() const { return tensors_; }
    std::size_t size() const { return tensors_.size(); }

    std::vector<std::uint8_t> serialize() const;
    static TensorStore deserialize(const std::vector<std::uint8_t>& bytes);

    void save(const std::string& path) const;
    static TensorStore load(const std::string& path);

private:
    std::vector<Tensor> tensors_;
};

// FNV-1a 64-bit over raw bytes; used for content hashes in manifests and for
// the shape-decoder freeze assertion.
std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n);
inline std::uint64_t fnv1a64(const char* data, std::size_t n) {
    return fnv1a64(reinterpret_cast<const std::uint8_t*>(data), n);
}
std::uint64_t fnv1a64_file(const std::string& path);
std::string hex64(std::uint64_t v);

} // namespace jof
