#include "ovrcine/tensor_io.hpp"

#include "ovrcine/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

static_assert(std::endian::native == std::endian::little, "OVRT I/O assumes a little-endian host");

namespace ovrcine {

namespace {

constexpr char kMagic[4] = {'O', 'V', 'R', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::vector<std::byte> &out, T v)
{
  auto const *p = reinterpret_cast<std::byte const *>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<std::byte const> in, size_t &pos)
{
  if (pos + sizeof(T) > in.size()) { throw ConfigError("OVRT: truncated header"); }
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

template <typename T>
Tensor make_from(DType dt, std::vector<std::uint64_t> dims, std::span<T const> values)
{
  Tensor t;
  t.dtype = dt;
  t.dims = std::move(dims);
  if (t.elements() != values.size()) { throw ConfigError("OVRT: dims do not match value count"); }
  t.payload.resize(values.size() * sizeof(T));
  std::memcpy(t.payload.data(), values.data(), t.payload.size());
  return t;
}

} // namespace

std::size_t dtype_size(DType t)
{
  switch (t) {
  case DType::Complex128: return 16;
  case DType::Complex64: return 8;
  case DType::Float64: return 8;
  case DType::UInt8: return 1;
  }
  throw ConfigError("OVRT: unknown dtype code " + std::to_string(static_cast<std::uint32_t>(t)));
}

std::uint64_t Tensor::elements() const
{
  std::uint64_t n = 1;
  for (auto d : dims) { n *= d; }
  return n;
}

std::vector<cplx> Tensor::as_complex() const
{
  std::vector<cplx> out(elements());
  if (dtype == DType::Complex128) {
    std::memcpy(out.data(), payload.data(), payload.size());
  } else if (dtype == DType::Complex64) {
    std::vector<std::complex<float>> tmp(elements());
    std::memcpy(tmp.data(), payload.data(), payload.size());
    for (size_t i = 0; i < tmp.size(); ++i) { out[i] = cplx(tmp[i].real(), tmp[i].imag()); }
  } else {
    throw ConfigError("OVRT: tensor is not complex");
  }
  return out;
}

std::vector<double> Tensor::as_real() const
{
  std::vector<double> out(elements());
  if (dtype == DType::Float64) {
    std::memcpy(out.data(), payload.data(), payload.size());
  } else if (dtype == DType::UInt8) {
    for (size_t i = 0; i < out.size(); ++i) { out[i] = static_cast<double>(std::to_integer<std::uint8_t>(payload[i])); }
  } else {
    throw ConfigError("OVRT: tensor is not real");
  }
  return out;
}

std::vector<std::uint8_t> Tensor::as_u8() const
{
  if (dtype != DType::UInt8) { throw ConfigError("OVRT: tensor is not uint8"); }
  std::vector<std::uint8_t> out(elements());
  std::memcpy(out.data(), payload.data(), payload.size());
  return out;
}

Tensor make_tensor(std::vector<std::uint64_t> dims, std::span<cplx const> values)
{
  return make_from(DType::Complex128, std::move(dims), values);
}
Tensor make_tensor(std::vector<std::uint64_t> dims, std::span<double const> values)
{
  return make_from(DType::Float64, std::move(dims), values);
}
Tensor make_tensor(std::vector<std::uint64_t> dims, std::span<std::uint8_t const> values)
{
  return make_from(DType::UInt8, std::move(dims), values);
}

std::vector<std::byte> encode_ovrt(Tensor const &t)
{
  if (t.payload.size() != t.elements() * dtype_size(t.dtype)) { throw ConfigError("OVRT: payload size mismatch"); }
  std::vector<std::byte> out;
  out.reserve(16 + 8 * t.dims.size() + t.payload.size());
  for (char c : kMagic) { out.push_back(static_cast<std::byte>(c)); }
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dtype));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) { put<std::uint64_t>(out, d); }
  out.insert(out.end(), t.payload.begin(), t.payload.end());
  return out;
}

Tensor decode_ovrt(std::span<std::byte const> bytes)
{
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) { throw ConfigError("OVRT: bad magic"); }
  size_t pos = 4;
  auto const version = get<std::uint32_t>(bytes, pos);
  if (version != kVersion) { throw ConfigError("OVRT: unsupported version " + std::to_string(version)); }
  Tensor t;
  t.dtype = static_cast<DType>(get<std::uint32_t>(bytes, pos));
  (void)dtype_size(t.dtype);
  auto const ndim = get<std::uint32_t>(bytes, pos);
  for (std::uint32_t i = 0; i < ndim; ++i) { t.dims.push_back(get<std::uint64_t>(bytes, pos)); }
  size_t const n = t.elements() * dtype_size(t.dtype);
  if (bytes.size() - pos != n) { throw ConfigError("OVRT: payload length does not match header"); }
  t.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return t;
}

void write_ovrt(std::filesystem::path const &path, Tensor const &t)
{
  auto const bytes = encode_ovrt(t);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) { throw std::runtime_error("cannot open " + path.string() + " for writing"); }
  f.write(reinterpret_cast<char const *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) { throw std::runtime_error("write failed for " + path.string()); }
}

Tensor read_ovrt(std::filesystem::path const &path)
{
  std::ifstream f(path, std::ios::binary);
  if (!f) { throw std::runtime_error("cannot open " + path.string()); }
  std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_ovrt(std::as_bytes(std::span(raw)));
}

Tensor pack_image(ComplexImage const &x)
{
  return make_tensor({static_cast<std::uint64_t>(x.rows()), static_cast<std::uint64_t>(x.cols())},
                     std::span<cplx const>(x.data(), static_cast<size_t>(x.size())));
}

Tensor pack_stack(std::vector<ComplexImage> const &xs)
{
  if (xs.empty()) { throw ConfigError("pack_stack: empty stack"); }
  auto const rows = xs[0].rows();
  auto const cols = xs[0].cols();
  std::vector<cplx> flat;
  flat.reserve(xs.size() * static_cast<size_t>(rows * cols));
  for (auto const &x : xs) {
    if (x.rows() != rows || x.cols() != cols) { throw ConfigError("pack_stack: inconsistent dims"); }
    flat.insert(flat.end(), x.data(), x.data() + x.size());
  }
  return make_tensor({xs.size(), static_cast<std::uint64_t>(rows), static_cast<std::uint64_t>(cols)},
                     std::span<cplx const>(flat));
}

Tensor pack_mask(RealImage const &m)
{
  std::vector<std::uint8_t> v(static_cast<size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) { v[static_cast<size_t>(i)] = m.data()[i] != 0.0 ? 1 : 0; }
  return make_tensor({static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
                     std::span<std::uint8_t const>(v));
}

ComplexImage unpack_image(Tensor const &t)
{
  if (t.dims.size() != 2) { throw ConfigError("unpack_image: expected a 2D tensor"); }
  auto const v = t.as_complex();
  ComplexImage x(static_cast<Eigen::Index>(t.dims[0]), static_cast<Eigen::Index>(t.dims[1]));
  std::memcpy(x.data(), v.data(), v.size() * sizeof(cplx));
  return x;
}

std::vector<ComplexImage> unpack_stack(Tensor const &t)
{
  if (t.dims.size() != 3) { throw ConfigError("unpack_stack: expected a 3D tensor"); }
  auto const v = t.as_complex();
  auto const rows = static_cast<Eigen::Index>(t.dims[1]);
  auto const cols = static_cast<Eigen::Index>(t.dims[2]);
  std::vector<ComplexImage> out;
  for (std::uint64_t i = 0; i < t.dims[0]; ++i) {
    ComplexImage x(rows, cols);
    std::memcpy(x.data(), v.data() + i * static_cast<size_t>(rows * cols), static_cast<size_t>(rows * cols) * sizeof(cplx));
    out.push_back(std::move(x));
  }
  return out;
}

RealImage unpack_real(Tensor const &t)
{
  if (t.dims.size() != 2) { throw ConfigError("unpack_real: expected a 2D tensor"); }
  auto const v = t.as_real();
  RealImage x(static_cast<Eigen::Index>(t.dims[0]), static_cast<Eigen::Index>(t.dims[1]));
  std::memcpy(x.data(), v.data(), v.size() * sizeof(double));
  return x;
}

PackedKSpace pack_kspace(KSpaceSeries const &ksp)
{
  if (ksp.frames.empty()) { throw ConfigError("pack_kspace: empty series"); }
  auto const &f0 = ksp.frames[0];
  size_t const T = ksp.frames.size();
  size_t const C = static_cast<size_t>(f0.coil_count());
  size_t const np = static_cast<size_t>(f0.n_pe);
  size_t const nf = static_cast<size_t>(f0.n_fe);
  std::vector<cplx> dense(T * C * np * nf, cplx(0.0, 0.0));
  std::vector<std::uint8_t> mask(T * np, 0);
  for (size_t t = 0; t < T; ++t) {
    auto const &fr = ksp.frames[t];
    for (size_t j = 0; j < fr.lines.size(); ++j) {
      size_t const k = static_cast<size_t>(fr.lines[j]);
      mask[t * np + k] = 1;
      for (size_t c = 0; c < C; ++c) {
        for (size_t x = 0; x < nf; ++x) {
          dense[((t * C + c) * np + k) * nf + x] = fr.coils[c](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(x));
        }
      }
    }
  }
  PackedKSpace p;
  p.data = make_tensor({T, C, np, nf}, std::span<cplx const>(dense));
  p.line_mask = make_tensor({T, np}, std::span<std::uint8_t const>(mask));
  return p;
}

std::vector<SampledKSpace> unpack_kspace(Tensor const &data, Tensor const &line_mask)
{
  if (data.dims.size() != 4 || line_mask.dims.size() != 2 || data.dims[0] != line_mask.dims[0] ||
      data.dims[2] != line_mask.dims[1]) {
    throw ConfigError("unpack_kspace: inconsistent tensor shapes");
  }
  auto const v = data.as_complex();
  auto const m = line_mask.as_u8();
  size_t const T = data.dims[0], C = data.dims[1], np = data.dims[2], nf = data.dims[3];
  std::vector<SampledKSpace> frames;
  for (size_t t = 0; t < T; ++t) {
    SampledKSpace fr;
    fr.n_pe = static_cast<int>(np);
    fr.n_fe = static_cast<int>(nf);
    for (size_t k = 0; k < np; ++k) {
      if (m[t * np + k]) { fr.lines.push_back(static_cast<int>(k)); }
    }
    for (size_t c = 0; c < C; ++c) {
      ComplexImage rows(static_cast<Eigen::Index>(fr.lines.size()), static_cast<Eigen::Index>(nf));
      for (size_t j = 0; j < fr.lines.size(); ++j) {
        for (size_t x = 0; x < nf; ++x) {
          rows(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(x)) =
            v[((t * C + c) * np + static_cast<size_t>(fr.lines[j])) * nf + x];
        }
      }
      fr.coils.push_back(std::move(rows));
    }
    frames.push_back(std::move(fr));
  }
  return frames;
}

} // namespace ovrcine
