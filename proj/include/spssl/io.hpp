#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "spssl/errors.hpp"
#include "spssl/params.hpp"
#include "spssl/tensor.hpp"

namespace spssl::io {

inline constexpr std::string_view kRasterMagic = "SPRAS1";
inline constexpr std::string_view kCheckpointMagic = "SPCKPT1";

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  Reader(std::string bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IOError(source_ + ": truncated file");
  }
  std::string bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

template <typename T>
void put_tensor(std::string& out, const Tensor<T>& t) {
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (T v : t.data()) put_f32(out, static_cast<float>(v));
}

template <typename T>
Tensor<T> get_tensor(Reader& r) {
  const auto rank = r.u32();
  if (rank == 0 || rank > 8) throw IOError("invalid tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = r.u32();
  std::vector<T> values(numel_of(shape));
  for (auto& v : values) v = static_cast<T>(r.f32());
  return Tensor<T>::from(std::move(shape), std::move(values));
}

}  // namespace detail

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

/// Writes via a temporary file and rename so readers never see partial files.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IOError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IOError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IOError("rename to " + path.string() + " failed: " + ec.message());
}

template <typename T>
std::string encode_raster(const Tensor<T>& t) {
  std::string out(kRasterMagic);
  detail::put_tensor(out, t);
  return out;
}

template <typename T = float>
Tensor<T> decode_raster(std::string bytes, const std::string& source = "raster") {
  detail::Reader r(std::move(bytes), source);
  if (r.str(kRasterMagic.size()) != kRasterMagic) throw IOError(source + ": bad raster magic");
  auto t = detail::get_tensor<T>(r);
  if (!r.done()) throw IOError(source + ": trailing bytes");
  return t;
}

template <typename T>
void write_raster(const std::filesystem::path& path, const Tensor<T>& t) {
  write_file_atomic(path, encode_raster(t));
}

template <typename T = float>
Tensor<T> read_raster(const std::filesystem::path& path) {
  return decode_raster<T>(read_file(path), path.string());
}

template <typename T>
std::string encode_checkpoint(const ModelParams<T>& params) {
  std::string out(kCheckpointMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_tensor(out, t);
  }
  return out;
}

template <typename T = float>
ModelParams<T> decode_checkpoint(std::string bytes, const std::string& source = "checkpoint") {
  detail::Reader r(std::move(bytes), source);
  if (r.str(kCheckpointMagic.size()) != kCheckpointMagic) throw IOError(source + ": bad checkpoint magic");
  ModelParams<T> params;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str(r.u32());
    params.add(std::move(name), detail::get_tensor<T>(r));
  }
  if (!r.done()) throw IOError(source + ": trailing bytes");
  return params;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<T>& params) {
  write_file_atomic(path, encode_checkpoint(params));
}

template <typename T = float>
ModelParams<T> load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IOError("missing checkpoint " + path.string());
  return decode_checkpoint<T>(read_file(path), path.string());
}

/// Loads values into an existing parameter set, checking names and shapes.
template <typename T>
void load_into(const std::filesystem::path& path, ModelParams<T>& params) {
  auto loaded = load_checkpoint<T>(path);
  params.require_same_layout(loaded, ("checkpoint " + path.string()).c_str());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].second.data();
    auto src = loaded[i].second.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace spssl::io
