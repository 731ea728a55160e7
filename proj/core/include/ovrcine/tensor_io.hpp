#pragma once

#include "ovrcine/encoding.hpp"
#include "ovrcine/image.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ovrcine {

// "OVRT" tensor files: magic, u32 version (1), u32 dtype, u32 ndim, ndim x u64
// dims, then the row-major payload. Everything little-endian.
enum class DType : std::uint32_t
{
  Complex128 = 1,
  Complex64 = 2,
  Float64 = 3,
  UInt8 = 4,
};

std::size_t dtype_size(DType t);

struct Tensor
{
  DType dtype = DType::Float64;
  std::vector<std::uint64_t> dims;
  std::vector<std::byte> payload;

  std::uint64_t elements() const;
  std::vector<cplx> as_complex() const; // accepts complex128 and complex64
  std::vector<double> as_real() const;  // float64 and uint8
  std::vector<std::uint8_t> as_u8() const;
};

Tensor make_tensor(std::vector<std::uint64_t> dims, std::span<cplx const> values);
Tensor make_tensor(std::vector<std::uint64_t> dims, std::span<double const> values);
Tensor make_tensor(std::vector<std::uint64_t> dims, std::span<std::uint8_t const> values);

std::vector<std::byte> encode_ovrt(Tensor const &t);
Tensor decode_ovrt(std::span<std::byte const> bytes);

void write_ovrt(std::filesystem::path const &path, Tensor const &t);
Tensor read_ovrt(std::filesystem::path const &path);

// Convenience layouts used across the workspace.
Tensor pack_image(ComplexImage const &x);                  // [n_pe, n_fe]
Tensor pack_stack(std::vector<ComplexImage> const &xs);    // [N, n_pe, n_fe]
Tensor pack_mask(RealImage const &m);                      // uint8 [n_pe, n_fe]
ComplexImage unpack_image(Tensor const &t);
std::vector<ComplexImage> unpack_stack(Tensor const &t);
RealImage unpack_real(Tensor const &t);

// K-space series as a dense complex tensor [T, C, n_pe, n_fe] with zeros on
// unsampled rows, plus a uint8 line mask [T, n_pe].
struct PackedKSpace
{
  Tensor data;
  Tensor line_mask;
};
PackedKSpace pack_kspace(KSpaceSeries const &ksp);
// Rebuilds per-frame sampled k-space from the dense layout and line mask.
std::vector<SampledKSpace> unpack_kspace(Tensor const &data, Tensor const &line_mask);

} // namespace ovrcine
