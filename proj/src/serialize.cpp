#include "aoept/serialize.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace aoept {

namespace {

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f64_le(std::vector<std::uint8_t>& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64_le(out, bits);
}

double get_f64_le(const std::uint8_t* p) {
  const std::uint64_t bits = get_u64_le(p);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kDtypeF64 = 1;

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("encode_tensor: undefined tensor");
  if (t.rank() > 255) throw std::invalid_argument("encode_tensor: rank too large");
  std::vector<std::uint8_t> out;
  out.reserve(7 + 8 * t.rank() + 8 * t.numel());
  out.insert(out.end(), {'A', 'O', 'T', 'N'});
  out.push_back(kVersion);
  out.push_back(kDtypeF64);
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) put_u64_le(out, e);
  for (double d : t.data()) put_f64_le(out, d);
  return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 7 || std::memcmp(bytes.data(), "AOTN", 4) != 0) {
    throw std::runtime_error("decode_tensor: bad magic");
  }
  if (bytes[4] != kVersion) throw std::runtime_error("decode_tensor: unsupported version");
  if (bytes[5] != kDtypeF64) throw std::runtime_error("decode_tensor: unsupported dtype");
  const std::size_t rank = bytes[6];
  std::size_t off = 7;
  if (bytes.size() < off + 8 * rank) throw std::runtime_error("decode_tensor: truncated header");
  Shape shape(rank);
  std::size_t numel = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<std::size_t>(get_u64_le(bytes.data() + off));
    numel *= shape[i];
    off += 8;
  }
  if (bytes.size() != off + 8 * numel) throw std::runtime_error("decode_tensor: payload size mismatch");
  std::vector<double> data(numel);
  for (std::size_t i = 0; i < numel; ++i) {
    data[i] = get_f64_le(bytes.data() + off);
    off += 8;
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  const std::vector<std::uint8_t> bytes = encode_tensor(t);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_tensor: cannot open " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("save_tensor: write failed for " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_tensor: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256_hex: digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string params_checksum(const ParamSet& params) {
  std::vector<std::uint8_t> all;
  for (const auto& [name, t] : params.entries()) {
    all.insert(all.end(), name.begin(), name.end());
    all.push_back(0);
    const std::vector<std::uint8_t> enc = encode_tensor(*t);
    all.insert(all.end(), enc.begin(), enc.end());
  }
  return sha256_hex(all);
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_text_file: cannot open " + path.string());
  f << content;
  if (!f) throw std::runtime_error("write_text_file: write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_text_file: cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace aoept
