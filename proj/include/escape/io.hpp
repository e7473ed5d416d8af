#pragma once

#include "escape/common.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace escape {

// Little-endian binary primitives for checkpoint files. All multi-byte
// values are written LSB first regardless of host order.

void write_u32(std::ostream& os, uint32_t v);
void write_i64(std::ostream& os, int64_t v);
void write_f32(std::ostream& os, float v);
void write_string(std::ostream& os, const std::string& s);

uint32_t read_u32(std::istream& is);
int64_t read_i64(std::istream& is);
float read_f32(std::istream& is);
std::string read_string(std::istream& is);

/// Row-major float32 matrix payload, independent of Eigen's storage order.
void write_matrix_f32(std::ostream& os, const Matrixf& m);
Matrixf read_matrix_f32(std::istream& is, Eigen::Index rows, Eigen::Index cols);

void write_vector_f32(std::ostream& os, const Vectorf& v);
Vectorf read_vector_f32(std::istream& is, Eigen::Index n);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);
std::vector<std::string> read_lines(const std::filesystem::path& path);

std::ofstream open_binary_out(const std::filesystem::path& path);
std::ifstream open_binary_in(const std::filesystem::path& path);

}  // namespace escape
