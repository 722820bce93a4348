#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

// Little-endian primitives shared by every binary format in the project.
namespace hmc::io {

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
void write_bytes(std::ostream& os, std::string_view bytes);

std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
double read_f64(std::istream& is);
std::string read_bytes(std::istream& is, std::size_t n);

void write_f32_array(std::ostream& os, std::span<const double> values);
void write_f32_array(std::ostream& os, std::span<const float> values);
std::vector<float> read_f32_array(std::istream& is, std::size_t n);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// 64-bit FNV-1a as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);

// "dir/name.f32" -> "dir/name"; also strips ".json", ".i16", ".lm".
std::filesystem::path strip_known_extension(const std::filesystem::path& p);

}  // namespace hmc::io
