#pragma once

// Binary matrix files and block-wise column access.
//
// Matrix file layout (all integers little-endian):
//
//   offset  size  field
//        0     8  magic "GWASMAT1"
//        8     1  dtype  (0 = IEEE-754 binary64, little-endian)
//        9     1  layout (0 = column-major)
//       10     8  rows
//       18     8  cols
//       26    38  reserved, zero
//       64        rows * cols doubles
//
// Column-major storage makes a block of consecutive SNP columns a single
// contiguous byte range.

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "glsweep/error.hpp"
#include "glsweep/matrix.hpp"

namespace glsweep {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

inline constexpr std::size_t kHeaderBytes = 64;
inline constexpr std::array<char, 8> kMatrixMagic = {'G', 'W', 'A', 'S', 'M', 'A', 'T', '1'};

namespace detail {

inline void put_u64(unsigned char* p, std::uint64_t v) noexcept {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}
inline void put_u32(unsigned char* p, std::uint32_t v) noexcept {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}
inline std::uint64_t get_u64(const unsigned char* p) noexcept {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}
inline std::uint32_t get_u32(const unsigned char* p) noexcept {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::string errno_text() { return std::strerror(errno); }

}  // namespace detail

/// Owning POSIX file descriptor with full-length positional I/O.
class File {
 public:
  File() = default;
  File(const std::filesystem::path& path, int flags, mode_t mode = 0644) : path_(path) {
    fd_ = ::open(path.c_str(), flags | O_CLOEXEC, mode);
    if (fd_ < 0) throw IoError("cannot open '" + path.string() + "': " + detail::errno_text());
  }
  File(File&& o) noexcept : fd_(std::exchange(o.fd_, -1)), path_(std::move(o.path_)) {}
  File& operator=(File&& o) noexcept {
    if (this != &o) {
      close_quietly();
      fd_ = std::exchange(o.fd_, -1);
      path_ = std::move(o.path_);
    }
    return *this;
  }
  File(const File&) = delete;
  File& operator=(const File&) = delete;
  ~File() { close_quietly(); }

  static File open_read(const std::filesystem::path& path) { return File(path, O_RDONLY); }
  static File create(const std::filesystem::path& path) { return File(path, O_RDWR | O_CREAT | O_TRUNC); }

  bool is_open() const noexcept { return fd_ >= 0; }
  const std::filesystem::path& path() const noexcept { return path_; }

  std::uint64_t size() const {
    struct stat st {};
    if (::fstat(fd_, &st) != 0) throw IoError("cannot stat '" + path_.string() + "': " + detail::errno_text());
    return static_cast<std::uint64_t>(st.st_size);
  }

  void read_at(void* dst, std::size_t bytes, std::uint64_t offset) const {
    auto* p = static_cast<char*>(dst);
    while (bytes > 0) {
      const ssize_t got = ::pread(fd_, p, bytes, static_cast<off_t>(offset));
      if (got < 0) {
        if (errno == EINTR) continue;
        throw IoError("read failed on '" + path_.string() + "' at offset " + std::to_string(offset) + ": " + detail::errno_text());
      }
      if (got == 0) throw IoError("unexpected end of file '" + path_.string() + "' at offset " + std::to_string(offset));
      p += got;
      bytes -= static_cast<std::size_t>(got);
      offset += static_cast<std::uint64_t>(got);
    }
  }

  void write_at(const void* src, std::size_t bytes, std::uint64_t offset) {
    const auto* p = static_cast<const char*>(src);
    while (bytes > 0) {
      const ssize_t put = ::pwrite(fd_, p, bytes, static_cast<off_t>(offset));
      if (put < 0) {
        if (errno == EINTR) continue;
        throw IoError("write failed on '" + path_.string() + "' at offset " + std::to_string(offset) + ": " + detail::errno_text());
      }
      p += put;
      bytes -= static_cast<std::size_t>(put);
      offset += static_cast<std::uint64_t>(put);
    }
  }

  void resize(std::uint64_t bytes) {
    if (::ftruncate(fd_, static_cast<off_t>(bytes)) != 0) {
      throw IoError("cannot size '" + path_.string() + "' to " + std::to_string(bytes) + " bytes: " + detail::errno_text());
    }
  }

  void sync() {
    if (::fsync(fd_) != 0) throw IoError("fsync failed on '" + path_.string() + "': " + detail::errno_text());
  }

  void close() {
    if (fd_ >= 0) {
      const int rc = ::close(std::exchange(fd_, -1));
      if (rc != 0) throw IoError("close failed on '" + path_.string() + "': " + detail::errno_text());
    }
  }

 private:
  void close_quietly() noexcept {
    if (fd_ >= 0) ::close(std::exchange(fd_, -1));
  }

  int fd_ = -1;
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Matrix files

struct MatrixFileHeader {
  std::uint8_t dtype = 0;
  std::uint8_t layout = 0;
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;

  std::uint64_t payload_bytes() const noexcept { return rows * cols * sizeof(double); }
  std::uint64_t file_bytes() const noexcept { return kHeaderBytes + payload_bytes(); }
  std::uint64_t column_offset(std::uint64_t col) const noexcept { return kHeaderBytes + col * rows * sizeof(double); }
};

inline std::array<unsigned char, kHeaderBytes> encode_header(const MatrixFileHeader& h) {
  std::array<unsigned char, kHeaderBytes> b{};
  std::memcpy(b.data(), kMatrixMagic.data(), kMatrixMagic.size());
  b[8] = h.dtype;
  b[9] = h.layout;
  detail::put_u64(b.data() + 10, h.rows);
  detail::put_u64(b.data() + 18, h.cols);
  return b;
}

/// Parses and validates a header against the actual file size.
inline MatrixFileHeader decode_header(const unsigned char* b, std::uint64_t file_size) {
  if (file_size < kHeaderBytes) throw FormatError("file shorter than the 64-byte header: " + std::to_string(file_size) + " bytes", file_size);
  if (std::memcmp(b, kMatrixMagic.data(), kMatrixMagic.size()) != 0) throw FormatError("bad magic, expected GWASMAT1", 0);
  MatrixFileHeader h;
  h.dtype = b[8];
  h.layout = b[9];
  if (h.dtype != 0) throw FormatError("unsupported dtype code " + std::to_string(h.dtype), 8);
  if (h.layout != 0) throw FormatError("unsupported layout code " + std::to_string(h.layout), 9);
  h.rows = detail::get_u64(b + 10);
  h.cols = detail::get_u64(b + 18);
  if (h.rows != 0 && h.cols > (UINT64_MAX - kHeaderBytes) / sizeof(double) / h.rows) {
    throw FormatError("header dimensions overflow", 10);
  }
  if (h.file_bytes() != file_size) {
    throw FormatError("size mismatch: header declares " + shape_string(h.rows, h.cols) + " (" + std::to_string(h.file_bytes()) +
                          " bytes) but file has " + std::to_string(file_size) + " bytes",
                      std::min<std::uint64_t>(file_size, h.file_bytes()));
  }
  return h;
}

inline MatrixFileHeader read_header(const File& f) {
  const std::uint64_t size = f.size();
  std::array<unsigned char, kHeaderBytes> b{};
  if (size < kHeaderBytes) throw FormatError("file '" + f.path().string() + "' shorter than the 64-byte header", size);
  f.read_at(b.data(), b.size(), 0);
  return decode_header(b.data(), size);
}

inline MatrixFileHeader read_header(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("missing file: " + path.string());
  return read_header(File::open_read(path));
}

inline void write_matrix(const std::filesystem::path& path, ConstMatrixView m) {
  File f = File::create(path);
  const auto h = encode_header({0, 0, m.rows, m.cols});
  f.write_at(h.data(), h.size(), 0);
  std::uint64_t off = kHeaderBytes;
  for (std::size_t j = 0; j < m.cols; ++j) {
    f.write_at(m.data + j * m.ld, m.rows * sizeof(double), off);
    off += m.rows * sizeof(double);
  }
  f.sync();
  f.close();
}

inline Matrix read_matrix(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("missing file: " + path.string());
  File f = File::open_read(path);
  const auto h = read_header(f);
  Matrix m(h.rows, h.cols);
  if (m.size() > 0) f.read_at(m.data(), m.size() * sizeof(double), kHeaderBytes);
  return m;
}

/// Appends columns to a matrix file of known row count; the header is
/// finalized on close().
class MatrixFileWriter {
 public:
  MatrixFileWriter(const std::filesystem::path& path, std::size_t rows) : file_(File::create(path)), rows_(rows) {
    const auto h = encode_header({0, 0, rows_, 0});
    file_.write_at(h.data(), h.size(), 0);
  }

  void append(ConstMatrixView cols) {
    if (cols.rows != rows_) throw StructuralError("MatrixFileWriter: row count mismatch");
    if (cols.ld == cols.rows) {
      file_.write_at(cols.data, cols.rows * cols.cols * sizeof(double), kHeaderBytes + cols_ * rows_ * sizeof(double));
    } else {
      for (std::size_t j = 0; j < cols.cols; ++j)
        file_.write_at(cols.data + j * cols.ld, rows_ * sizeof(double), kHeaderBytes + (cols_ + j) * rows_ * sizeof(double));
    }
    cols_ += cols.cols;
  }

  std::size_t cols() const noexcept { return cols_; }

  void close() {
    const auto h = encode_header({0, 0, rows_, cols_});
    file_.write_at(h.data(), h.size(), 0);
    file_.sync();
    file_.close();
  }

 private:
  File file_;
  std::size_t rows_;
  std::size_t cols_ = 0;
};

// ---------------------------------------------------------------------------
// Block planning

struct BlockPlan {
  std::size_t rows = 0;        // n
  std::size_t total_cols = 0;  // m
  std::size_t block_size = 0;  // k
  std::size_t buffer_count = 2;
  std::vector<std::uint64_t> offsets;  // byte offset of each block in a matrix file

  std::size_t num_blocks() const noexcept { return offsets.size(); }
  std::size_t first_col(std::size_t b) const noexcept { return b * block_size; }
  std::size_t width(std::size_t b) const noexcept { return std::min(block_size, total_cols - b * block_size); }
};

inline BlockPlan make_block_plan(std::size_t rows, std::size_t total_cols, std::size_t block_size) {
  if (block_size < 1) throw ConfigError("block size must be at least 1");
  BlockPlan p;
  p.rows = rows;
  p.total_cols = total_cols;
  p.block_size = block_size;
  const std::size_t nb = (total_cols + block_size - 1) / block_size;
  p.offsets.reserve(nb);
  for (std::size_t b = 0; b < nb; ++b) p.offsets.push_back(kHeaderBytes + std::uint64_t(b) * block_size * rows * sizeof(double));
  return p;
}

// ---------------------------------------------------------------------------
// Column sources

/// Random access to the columns of an n x m matrix.
class BlockSource {
 public:
  virtual ~BlockSource() = default;
  virtual std::size_t rows() const = 0;
  virtual std::size_t cols() const = 0;
  /// Fills dst (rows x w) with columns [first, first + w).
  virtual void read(std::size_t first, MatrixView dst) = 0;
};

class FileBlockSource final : public BlockSource {
 public:
  explicit FileBlockSource(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("missing file: " + path.string());
    file_ = File::open_read(path);
    header_ = read_header(file_);
  }

  std::size_t rows() const override { return header_.rows; }
  std::size_t cols() const override { return header_.cols; }
  const MatrixFileHeader& header() const noexcept { return header_; }

  void read(std::size_t first, MatrixView dst) override {
    if (dst.rows != header_.rows || first + dst.cols > header_.cols) {
      throw StructuralError("FileBlockSource: request " + shape_string(dst.rows, dst.cols) + " at column " +
                            std::to_string(first) + " exceeds " + shape_string(header_.rows, header_.cols));
    }
    if (dst.cols == 0 || dst.rows == 0) return;
    if (dst.ld == dst.rows) {
      file_.read_at(dst.data, dst.rows * dst.cols * sizeof(double), header_.column_offset(first));
    } else {
      for (std::size_t j = 0; j < dst.cols; ++j)
        file_.read_at(dst.data + j * dst.ld, dst.rows * sizeof(double), header_.column_offset(first + j));
    }
  }

 private:
  File file_;
  MatrixFileHeader header_;
};

class MemoryBlockSource final : public BlockSource {
 public:
  explicit MemoryBlockSource(ConstMatrixView m) : m_(m) {}
  std::size_t rows() const override { return m_.rows; }
  std::size_t cols() const override { return m_.cols; }
  void read(std::size_t first, MatrixView dst) override {
    if (dst.rows != m_.rows || first + dst.cols > m_.cols) throw StructuralError("MemoryBlockSource: request out of range");
    copy_into(m_.columns(first, dst.cols), dst);
  }

 private:
  ConstMatrixView m_;
};

}  // namespace glsweep
