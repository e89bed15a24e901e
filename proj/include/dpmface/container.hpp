#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace dpmface {

/// Every persisted artifact starts with an 8-byte magic tag followed by a
/// little-endian u32 format version. Reals are stored as raw IEEE-754
/// binary64 bit patterns so a write/read cycle is bit-exact. The exact field
/// order of each artifact is documented in docs/FORMATS.md.
using Magic = std::array<char, 8>;

inline constexpr Magic kPcaMagic{'D', 'P', 'M', 'F', 'P', 'C', 'A', '\0'};
inline constexpr Magic kDpmMagic{'D', 'P', 'M', 'F', 'N', 'E', 'T', '\0'};
inline constexpr Magic kPlsMagic{'D', 'P', 'M', 'F', 'P', 'L', 'S', '\0'};
inline constexpr Magic kGalleryMagic{'D', 'P', 'M', 'F', 'G', 'A', 'L', '\0'};
inline constexpr Magic kDescriptorMagic{'D', 'P', 'M', 'F', 'D', 'S', 'C', '\0'};

class BinaryWriter {
 public:
  BinaryWriter(const Magic& magic, std::uint32_t version);

  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v);
  void f64(double v);
  void str(std::string_view s);
  void vec(const Eigen::VectorXd& v);
  void mat(const Eigen::MatrixXd& m);
  void dims(const std::vector<int>& d);

  const std::vector<unsigned char>& bytes() const { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  void raw(const void* p, std::size_t n);
  std::vector<unsigned char> buf_;
};

class BinaryReader {
 public:
  /// Reads the whole file and validates magic and version.
  BinaryReader(const std::filesystem::path& path, const Magic& magic, std::uint32_t version);
  BinaryReader(std::vector<unsigned char> bytes, const Magic& magic, std::uint32_t version);

  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64();
  double f64();
  std::string str();
  Eigen::VectorXd vec();
  Eigen::MatrixXd mat();
  std::vector<int> dims();

  /// Throws IoError if unread bytes remain.
  void expect_end() const;

 private:
  void check_header(const Magic& magic, std::uint32_t version);
  void raw(void* p, std::size_t n);
  std::string source_;
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);

/// 64-bit FNV-1a over the serialized bytes, rendered as 16 hex digits. Used
/// to tie models to the PCA bases they were trained against.
std::string content_id(const std::vector<unsigned char>& bytes);

}  // namespace dpmface
