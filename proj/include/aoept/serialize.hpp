#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aoept/optim.hpp"
#include "aoept/tensor.hpp"

namespace aoept {

// Binary tensor file format used repo-wide: magic "AOTN", u8 version=1,
// u8 dtype code (1 = f64), u8 rank, little-endian u64 extents, then the
// row-major little-endian payload. Round-trips are bit-exact.
std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

std::string sha256_hex(const std::vector<std::uint8_t>& bytes);

// Digest over the AOTN encoding of every parameter, in registry order.
std::string params_checksum(const ParamSet& params);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace aoept
