#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "spiketrain/ops.hpp"
#include "spiketrain/rng.hpp"
#include "spiketrain/tensor.hpp"

// Event rasterization, temporal bit-packing, epoch shuffling, shift
// augmentation, and the on-disk container for packed datasets.

namespace spiketrain {

// ---------------------------------------------------------------------------
// Events.

struct Event {
  std::int64_t t_us = 0;
  std::vector<std::int64_t> coords;  // one per geometry axis
  int polarity = 1;                  // 0 or 1
};

struct EventStream {
  std::vector<Event> events;
  std::vector<std::size_t> geometry;  // sensor extent per coordinate axis
  std::int64_t duration_us = 0;
};

// Bin events into a binary grid [T, 2, bins...]; the leading 2 separates
// polarities. Multiple events landing in one cell saturate to 1, so the
// result is independent of event order.
inline Tensor<std::uint8_t> rasterize(const EventStream& stream,
                                      std::size_t t_bins,
                                      const std::vector<std::size_t>& bins) {
  if (t_bins == 0) throw ArgumentError("rasterize: T must be >= 1");
  if (stream.duration_us <= 0)
    throw ArgumentError("rasterize: non-positive duration");
  if (bins.size() != stream.geometry.size())
    throw ArgumentError("rasterize: " + std::to_string(bins.size()) +
                        " bin extents for " +
                        std::to_string(stream.geometry.size()) +
                        " geometry axes");
  Shape shape;
  shape.push_back(t_bins);
  shape.push_back(2);
  for (auto b : bins) {
    if (b == 0) throw ArgumentError("rasterize: zero spatial bins");
    shape.push_back(b);
  }
  Tensor<std::uint8_t> grid = Tensor<std::uint8_t>::zeros(shape);
  const std::size_t spatial = shape_numel(Shape(bins.begin(), bins.end()));
  for (const Event& e : stream.events) {
    if (e.t_us < 0 || e.t_us > stream.duration_us)
      throw ArgumentError("rasterize: event time " + std::to_string(e.t_us) +
                          " outside [0," +
                          std::to_string(stream.duration_us) + "]");
    if (e.polarity != 0 && e.polarity != 1)
      throw ArgumentError("rasterize: polarity must be 0 or 1");
    if (e.coords.size() != stream.geometry.size())
      throw ArgumentError("rasterize: event coordinate rank mismatch");
    std::size_t tb =
        std::size_t((__int128(e.t_us) * t_bins) / stream.duration_us);
    if (tb >= t_bins) tb = t_bins - 1;  // t == duration lands in last bin
    std::size_t cell = 0;
    for (std::size_t a = 0; a < bins.size(); ++a) {
      const std::int64_t c = e.coords[a];
      if (c < 0 || std::size_t(c) >= stream.geometry[a])
        throw ArgumentError("rasterize: coordinate " + std::to_string(c) +
                            " outside sensor axis " + std::to_string(a));
      const std::size_t cb = std::size_t(c) * bins[a] / stream.geometry[a];
      cell = cell * bins[a] + cb;
    }
    grid[(tb * 2 + std::size_t(e.polarity)) * spatial + cell] = 1;
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Bit packing along a time axis, MSB first: timestep 8k+j maps to bit 7-j of
// byte k. The packed extent is ceil(T/8); trailing pad bits are zero.

namespace detail {

struct AxisSplit {
  std::size_t outer, axis, inner;
};

template <typename T>
AxisSplit split_at_axis(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.ndim())
    throw ArgumentError("time axis " + std::to_string(axis) +
                        " out of range for " + shape_str(x.shape()));
  AxisSplit s{1, x.dim(axis), 1};
  for (std::size_t d = 0; d < axis; ++d) s.outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.ndim(); ++d) s.inner *= x.dim(d);
  return s;
}

}  // namespace detail

template <typename T>
Tensor<std::uint8_t> pack_time(const Tensor<T>& x, std::size_t time_axis) {
  const auto s = detail::split_at_axis(x, time_axis);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] != T(0) && x[i] != T(1))
      throw ContractError("pack_time: non-binary value at flat index " +
                          std::to_string(i));
  const std::size_t packed_t = (s.axis + 7) / 8;
  Shape out_shape = x.shape();
  out_shape[time_axis] = packed_t;
  Tensor<std::uint8_t> out = Tensor<std::uint8_t>::zeros(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t t = 0; t < s.axis; ++t) {
      const std::size_t byte = t / 8;
      const unsigned bit = 7u - unsigned(t % 8);
      const T* src = x.data() + (o * s.axis + t) * s.inner;
      std::uint8_t* dst = out.data() + (o * packed_t + byte) * s.inner;
      for (std::size_t k = 0; k < s.inner; ++k)
        if (src[k] != T(0)) dst[k] |= std::uint8_t(1u << bit);
    }
  return out;
}

template <typename T>
Tensor<T> unpack_time(const Tensor<std::uint8_t>& packed,
                      std::size_t original_t, std::size_t time_axis) {
  const auto s = detail::split_at_axis(packed, time_axis);
  if (s.axis != (original_t + 7) / 8)
    throw FormatError("unpack_time: packed extent " + std::to_string(s.axis) +
                      " inconsistent with T=" + std::to_string(original_t));
  Shape out_shape = packed.shape();
  out_shape[time_axis] = original_t;
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t t = 0; t < original_t; ++t) {
      const std::size_t byte = t / 8;
      const unsigned bit = 7u - unsigned(t % 8);
      const std::uint8_t* src =
          packed.data() + (o * s.axis + byte) * s.inner;
      T* dst = out.data() + (o * original_t + t) * s.inner;
      for (std::size_t k = 0; k < s.inner; ++k)
        dst[k] = (src[k] >> bit) & 1u ? T(1) : T(0);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets.

struct RasterDataset {
  Tensor<std::uint8_t> x;  // [N, T, ...] binary
  std::vector<std::int64_t> y;
};

struct PackedDataset {
  Tensor<std::uint8_t> x;  // [N, ceil(T/8), ...]
  std::size_t original_t = 0;
  std::vector<std::int64_t> y;
};

inline PackedDataset pack_dataset(const RasterDataset& d) {
  return PackedDataset{pack_time(d.x, 1), d.x.dim(1), d.y};
}

// One epoch of shuffled batches: a fresh permutation truncated to the
// largest multiple of batch_size. The dropped remainder re-enters the pool
// next epoch through the next permutation.
template <typename X>
struct EpochView {
  Tensor<X> x;                 // [#batches, batch_size, ...]
  std::vector<std::int64_t> y;  // length #batches * batch_size
  std::size_t batches = 0;
  std::size_t batch_size = 0;
};

template <typename X>
EpochView<X> shuffle(const Tensor<X>& x, const std::vector<std::int64_t>& y,
                     std::size_t batch_size, RngKey rng) {
  if (x.ndim() < 1 || x.dim(0) != y.size())
    throw ArgumentError("shuffle: " + std::to_string(y.size()) +
                        " labels for x " + shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  if (batch_size == 0 || batch_size > n)
    throw ArgumentError("shuffle: batch size " + std::to_string(batch_size) +
                        " for " + std::to_string(n) + " examples");
  const std::size_t cutoff = (n / batch_size) * batch_size;
  const std::vector<std::size_t> perm = permutation(rng, n);
  const std::size_t ex = x.size() / std::max<std::size_t>(n, 1);
  EpochView<X> v;
  v.batches = cutoff / batch_size;
  v.batch_size = batch_size;
  Shape shape;
  shape.push_back(v.batches);
  shape.push_back(batch_size);
  for (std::size_t d = 1; d < x.ndim(); ++d) shape.push_back(x.dim(d));
  v.x = Tensor<X>(shape);
  v.y.resize(cutoff);
  for (std::size_t i = 0; i < cutoff; ++i) {
    std::memcpy(v.x.data() + i * ex, x.data() + perm[i] * ex,
                ex * sizeof(X));
    v.y[i] = y[perm[i]];
  }
  return v;
}

template <typename X>
EpochView<X> shuffle(const RasterDataset& d, std::size_t batch_size,
                     RngKey rng) {
  return shuffle(d.x, d.y, batch_size, rng);
}

// One circular shift per named axis, each sampled from
// [-max_shift, max_shift). max_shift = 0 is the identity.
template <typename T>
Tensor<T> shift_augment(const Tensor<T>& x, std::int64_t max_shift,
                        const std::vector<long>& axes, RngKey rng) {
  if (max_shift < 0) throw ArgumentError("shift_augment: negative max_shift");
  if (max_shift == 0 || axes.empty()) return x;
  std::vector<long> shifts(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i)
    shifts[i] = long(randint(rng, i, -max_shift, max_shift));
  return roll(x, shifts, axes);
}

// ---------------------------------------------------------------------------
// Container file: little-endian header + raw packed payload.
//
//   offset  size  field
//        0     4  magic "SPKD"
//        4     4  u32 version (1)
//        8     1  u8 dtype (0 = u8)
//        9     1  u8 bit order (0 = MSB-first)
//       10     2  u16 reserved (0)
//       12     4  u32 original T
//       16     4  u32 ndim
//       20    8d  u64 shape[ndim] of the packed tensor [N, ceil(T/8), ...]
//        .     8  u64 label count (= N)
//        .    4N  i32 labels
//        .     *  payload bytes, row-major

namespace detail {

inline void io_write(std::ofstream& f, const void* p, std::size_t n) {
  f.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}

template <typename V>
void io_write_scalar(std::ofstream& f, V v) {
  io_write(f, &v, sizeof(V));
}

// Reads exactly n bytes or throws with the offset where data ran out.
inline void io_read(std::ifstream& f, void* p, std::size_t n,
                    std::size_t& offset) {
  f.read(reinterpret_cast<char*>(p), std::streamsize(n));
  if (std::size_t(f.gcount()) != n)
    throw FormatError("container truncated at byte offset " +
                      std::to_string(offset + std::size_t(f.gcount())));
  offset += n;
}

template <typename V>
V io_read_scalar(std::ifstream& f, std::size_t& offset) {
  V v;
  io_read(f, &v, sizeof(V), offset);
  return v;
}

}  // namespace detail

inline void write_container(const std::string& path, const PackedDataset& d) {
  if (d.x.ndim() < 2)
    throw ArgumentError("write_container: packed x must be [N, T', ...]");
  if (d.x.dim(0) != d.y.size())
    throw ArgumentError("write_container: label count mismatch");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  detail::io_write(f, "SPKD", 4);
  detail::io_write_scalar<std::uint32_t>(f, 1);
  detail::io_write_scalar<std::uint8_t>(f, 0);   // dtype u8
  detail::io_write_scalar<std::uint8_t>(f, 0);   // MSB-first
  detail::io_write_scalar<std::uint16_t>(f, 0);  // reserved
  detail::io_write_scalar<std::uint32_t>(f, std::uint32_t(d.original_t));
  detail::io_write_scalar<std::uint32_t>(f, std::uint32_t(d.x.ndim()));
  for (std::size_t i = 0; i < d.x.ndim(); ++i)
    detail::io_write_scalar<std::uint64_t>(f, d.x.dim(i));
  detail::io_write_scalar<std::uint64_t>(f, d.y.size());
  for (auto label : d.y)
    detail::io_write_scalar<std::int32_t>(f, std::int32_t(label));
  detail::io_write(f, d.x.data(), d.x.size());
  if (!f) throw IoError("short write: " + path);
}

inline PackedDataset read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  std::size_t off = 0;
  char magic[4];
  detail::io_read(f, magic, 4, off);
  if (std::memcmp(magic, "SPKD", 4) != 0)
    throw FormatError("bad magic at byte offset 0");
  const auto version = detail::io_read_scalar<std::uint32_t>(f, off);
  if (version != 1)
    throw FormatError("unsupported container version " +
                      std::to_string(version) + " at byte offset 4");
  const auto dtype = detail::io_read_scalar<std::uint8_t>(f, off);
  if (dtype != 0)
    throw FormatError("unknown dtype " + std::to_string(dtype) +
                      " at byte offset 8");
  const auto bit_order = detail::io_read_scalar<std::uint8_t>(f, off);
  if (bit_order != 0)
    throw FormatError("unknown bit order " + std::to_string(bit_order) +
                      " at byte offset 9");
  (void)detail::io_read_scalar<std::uint16_t>(f, off);
  PackedDataset d;
  d.original_t = detail::io_read_scalar<std::uint32_t>(f, off);
  const auto ndim = detail::io_read_scalar<std::uint32_t>(f, off);
  if (ndim < 2 || ndim > 16)
    throw FormatError("implausible ndim " + std::to_string(ndim) +
                      " at byte offset 16");
  Shape shape(ndim);
  for (auto& dim : shape)
    dim = std::size_t(detail::io_read_scalar<std::uint64_t>(f, off));
  if (shape[1] != (d.original_t + 7) / 8)
    throw FormatError("packed time extent " + std::to_string(shape[1]) +
                      " inconsistent with T=" + std::to_string(d.original_t));
  const auto n_labels = detail::io_read_scalar<std::uint64_t>(f, off);
  if (n_labels != shape[0])
    throw FormatError("label count " + std::to_string(n_labels) +
                      " does not match N=" + std::to_string(shape[0]));
  d.y.resize(n_labels);
  for (auto& label : d.y)
    label = detail::io_read_scalar<std::int32_t>(f, off);
  d.x = Tensor<std::uint8_t>(shape);
  detail::io_read(f, d.x.data(), d.x.size(), off);
  return d;
}

}  // namespace spiketrain
