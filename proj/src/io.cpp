#include "escape/io.hpp"

#include <cstring>
#include <sstream>

namespace escape {

namespace {

template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
#endif
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw Error("unexpected end of stream");
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
#endif
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void write_u32(std::ostream& os, uint32_t v) { write_le(os, v); }
void write_i64(std::ostream& os, int64_t v) { write_le(os, v); }
void write_f32(std::ostream& os, float v) { write_le(os, v); }

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t read_u32(std::istream& is) { return read_le<uint32_t>(is); }
int64_t read_i64(std::istream& is) { return read_le<int64_t>(is); }
float read_f32(std::istream& is) { return read_le<float>(is); }

std::string read_string(std::istream& is) {
  const uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw Error("unexpected end of stream reading string");
  return s;
}

void write_matrix_f32(std::ostream& os, const Matrixf& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) write_f32(os, m(r, c));
}

Matrixf read_matrix_f32(std::istream& is, Eigen::Index rows, Eigen::Index cols) {
  Matrixf m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = read_f32(is);
  return m;
}

void write_vector_f32(std::ostream& os, const Vectorf& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) write_f32(os, v(i));
}

Vectorf read_vector_f32(std::istream& is, Eigen::Index n) {
  Vectorf v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = read_f32(is);
  return v;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write file: " + path.string());
  out << content;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::ofstream open_binary_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write file: " + path.string());
  return out;
}

std::ifstream open_binary_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path.string());
  return in;
}

}  // namespace escape
