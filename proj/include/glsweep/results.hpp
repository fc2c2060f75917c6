#pragma once

// Result files and sinks.
//
// Result file layout (little-endian):
//
//   offset  size  field
//        0     8  magic "GWASRES1"
//        8     1  complete flag (0 while writing / after an abort, 1 once closed cleanly)
//        9     3  reserved, zero
//       12     4  w (coefficients per record)
//       16     8  m (SNPs)
//       24     4  t (traits in this file)
//       28     4  first trait index
//       32    32  reserved, zero
//       64        m * t records, trait-major then SNP
//
// Record: u64 snp_index, u32 trait_index, u32 status, w x f64 beta, w x f64 se.
// Failed problems keep their slot with a non-zero status and zero payload.

#include <algorithm>
#include <array>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <exception>
#include <filesystem>
#include <mutex>
#include <thread>
#include <vector>

#include "glsweep/model.hpp"
#include "glsweep/pipeline.hpp"
#include "glsweep/stream_io.hpp"

namespace glsweep {

inline constexpr std::array<char, 8> kResultMagic = {'G', 'W', 'A', 'S', 'R', 'E', 'S', '1'};

inline constexpr std::size_t record_bytes(std::size_t w) noexcept { return 16 + 16 * w; }

struct ResultFileHeader {
  bool complete = false;
  std::uint32_t w = 0;
  std::uint64_t m = 0;
  std::uint32_t t = 0;
  std::uint32_t first_trait = 0;

  std::uint64_t record_count() const noexcept { return m * t; }
  std::uint64_t file_bytes() const noexcept { return kHeaderBytes + record_count() * record_bytes(w); }
  std::uint64_t slot(std::uint64_t snp, std::uint32_t trait) const noexcept { return (trait - first_trait) * m + snp; }
};

inline std::array<unsigned char, kHeaderBytes> encode_result_header(const ResultFileHeader& h) {
  std::array<unsigned char, kHeaderBytes> b{};
  std::memcpy(b.data(), kResultMagic.data(), kResultMagic.size());
  b[8] = h.complete ? 1 : 0;
  detail::put_u32(b.data() + 12, h.w);
  detail::put_u64(b.data() + 16, h.m);
  detail::put_u32(b.data() + 24, h.t);
  detail::put_u32(b.data() + 28, h.first_trait);
  return b;
}

inline ResultFileHeader decode_result_header(const unsigned char* b, std::uint64_t file_size) {
  if (file_size < kHeaderBytes) throw FormatError("result file shorter than its 64-byte header", file_size);
  if (std::memcmp(b, kResultMagic.data(), kResultMagic.size()) != 0) throw FormatError("bad magic, expected GWASRES1", 0);
  ResultFileHeader h;
  if (b[8] > 1) throw FormatError("invalid completion flag", 8);
  h.complete = b[8] == 1;
  h.w = detail::get_u32(b + 12);
  h.m = detail::get_u64(b + 16);
  h.t = detail::get_u32(b + 24);
  h.first_trait = detail::get_u32(b + 28);
  if (h.w < 1 || h.w > 64) throw FormatError("implausible coefficient width " + std::to_string(h.w), 12);
  if (h.file_bytes() != file_size) {
    throw FormatError("size mismatch: header declares " + std::to_string(h.record_count()) + " records (" +
                          std::to_string(h.file_bytes()) + " bytes) but file has " + std::to_string(file_size) + " bytes",
                      std::min(file_size, h.file_bytes()));
  }
  return h;
}

inline void encode_record(const GlsResult& r, std::size_t w, unsigned char* out) {
  detail::put_u64(out, r.snp_index);
  detail::put_u32(out + 8, r.trait_index);
  detail::put_u32(out + 12, static_cast<std::uint32_t>(r.status));
  if (r.ok()) {
    std::memcpy(out + 16, r.beta.data(), w * sizeof(double));
    std::memcpy(out + 16 + 8 * w, r.se.data(), w * sizeof(double));
  } else {
    std::memset(out + 16, 0, 16 * w);
  }
}

inline GlsResult decode_record(const unsigned char* in, std::size_t w) {
  GlsResult r;
  r.snp_index = detail::get_u64(in);
  r.trait_index = detail::get_u32(in + 8);
  r.status = static_cast<ResultStatus>(detail::get_u32(in + 12));
  r.beta.resize(w);
  r.se.resize(w);
  std::memcpy(r.beta.data(), in + 16, w * sizeof(double));
  std::memcpy(r.se.data(), in + 16 + 8 * w, w * sizeof(double));
  return r;
}

struct ResultFile {
  ResultFileHeader header;
  std::vector<GlsResult> records;  // canonical order
};

inline ResultFile read_results(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("missing file: " + path.string());
  File f = File::open_read(path);
  const std::uint64_t size = f.size();
  std::array<unsigned char, kHeaderBytes> hb{};
  if (size < kHeaderBytes) throw FormatError("result file '" + path.string() + "' shorter than its header", size);
  f.read_at(hb.data(), hb.size(), 0);
  ResultFile out;
  out.header = decode_result_header(hb.data(), size);
  const std::size_t rb = record_bytes(out.header.w);
  std::vector<unsigned char> bytes(out.header.record_count() * rb);
  if (!bytes.empty()) f.read_at(bytes.data(), bytes.size(), kHeaderBytes);
  out.records.reserve(out.header.record_count());
  for (std::uint64_t i = 0; i < out.header.record_count(); ++i) out.records.push_back(decode_record(bytes.data() + i * rb, out.header.w));
  return out;
}

// ---------------------------------------------------------------------------
// Sinks

class ResultSink {
 public:
  virtual ~ResultSink() = default;
  /// Accepts results in any order; concurrent calls are allowed.
  virtual void consume(std::vector<GlsResult>&& batch) = 0;
};

/// Keeps everything in memory; sorted() returns canonical order.
class MemoryResultSink final : public ResultSink {
 public:
  void consume(std::vector<GlsResult>&& batch) override {
    std::lock_guard lock(mu_);
    for (auto& r : batch) results_.push_back(std::move(r));
  }
  std::vector<GlsResult> sorted() const {
    std::lock_guard lock(mu_);
    auto out = results_;
    std::sort(out.begin(), out.end(), [](const GlsResult& a, const GlsResult& b) {
      return a.trait_index != b.trait_index ? a.trait_index < b.trait_index : a.snp_index < b.snp_index;
    });
    return out;
  }
  std::size_t size() const {
    std::lock_guard lock(mu_);
    return results_.size();
  }

 private:
  mutable std::mutex mu_;
  std::vector<GlsResult> results_;
};

/// Drops results, counting them (benchmarks).
class CountingResultSink final : public ResultSink {
 public:
  void consume(std::vector<GlsResult>&& batch) override {
    std::lock_guard lock(mu_);
    count_ += batch.size();
    for (const auto& r : batch) failures_ += r.ok() ? 0 : 1;
  }
  std::size_t count() const {
    std::lock_guard lock(mu_);
    return count_;
  }
  std::size_t failures() const {
    std::lock_guard lock(mu_);
    return failures_;
  }

 private:
  mutable std::mutex mu_;
  std::size_t count_ = 0;
  std::size_t failures_ = 0;
};

/// Writes records at their canonical slot from a background thread, so
/// producers may deliver batches in any order. The header's completion flag
/// is set only by finish(), after every slot has been written and synced.
class ResultFileWriter final : public ResultSink {
 public:
  ResultFileWriter(const std::filesystem::path& path, std::uint64_t m, std::uint32_t t, std::uint32_t w,
                   std::uint32_t first_trait = 0, std::size_t max_pending = 64)
      : header_{false, w, m, t, first_trait}, max_pending_(max_pending), written_(m * t, false) {
    file_ = File::create(path);
    // Full size up front: unwritten slots read back as zero and the file is
    // parseable, with the completion flag clear, if the run dies.
    file_.resize(header_.file_bytes());
    const auto h = encode_result_header(header_);
    file_.write_at(h.data(), h.size(), 0);
    worker_ = std::thread([this] { run(); });
  }

  ~ResultFileWriter() override { shutdown(); }

  ResultFileWriter(const ResultFileWriter&) = delete;
  ResultFileWriter& operator=(const ResultFileWriter&) = delete;

  void consume(std::vector<GlsResult>&& batch) override {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return queue_.size() < max_pending_ || error_ || stop_; });
    if (error_) std::rethrow_exception(error_);
    if (stop_) throw IoError("result writer already closed");
    queue_.push_back(std::move(batch));
    cv_.notify_all();
  }

  /// Drains the queue, verifies coverage, marks the file complete and syncs it.
  void finish() {
    shutdown();
    if (error_) std::rethrow_exception(error_);
    if (records_written_ != header_.record_count()) {
      throw IoError("result file incomplete: " + std::to_string(records_written_) + " of " +
                    std::to_string(header_.record_count()) + " records written");
    }
    header_.complete = true;
    const auto h = encode_result_header(header_);
    file_.write_at(h.data(), h.size(), 0);
    file_.sync();
    file_.close();
  }

  double write_seconds() const {
    std::lock_guard lock(mu_);
    return write_seconds_;
  }
  std::uint64_t bytes_written() const {
    std::lock_guard lock(mu_);
    return bytes_written_;
  }

 private:
  void shutdown() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  void run() {
    const std::size_t w = header_.w;
    const std::size_t rb = record_bytes(w);
    std::vector<unsigned char> bytes;
    for (;;) {
      std::vector<GlsResult> batch;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !queue_.empty() || stop_; });
        if (queue_.empty()) return;
        batch = std::move(queue_.front());
        queue_.pop_front();
      }
      cv_.notify_all();
      double elapsed = 0.0;
      std::uint64_t written = 0;
      try {
        ScopedTimer timer(elapsed);
        std::sort(batch.begin(), batch.end(), [&](const GlsResult& a, const GlsResult& b) {
          return header_.slot(a.snp_index, a.trait_index) < header_.slot(b.snp_index, b.trait_index);
        });
        // Coalesce runs of consecutive slots into single writes.
        std::size_t i = 0;
        while (i < batch.size()) {
          std::size_t j = i;
          const std::uint64_t first = checked_slot(batch[i]);
          while (j + 1 < batch.size() && checked_slot(batch[j + 1]) == first + (j + 1 - i)) ++j;
          const std::size_t run = j - i + 1;
          bytes.resize(run * rb);
          for (std::size_t r = 0; r < run; ++r) {
            encode_record(batch[i + r], w, bytes.data() + r * rb);
            const std::uint64_t s = first + r;
            if (!written_[s]) {
              written_[s] = true;
              ++written;
            }
          }
          file_.write_at(bytes.data(), bytes.size(), kHeaderBytes + first * rb);
          i = j + 1;
        }
      } catch (...) {
        std::lock_guard lock(mu_);
        error_ = std::current_exception();
        cv_.notify_all();
        return;
      }
      std::lock_guard lock(mu_);
      write_seconds_ += elapsed;
      records_written_ += written;
      bytes_written_ += batch.size() * rb;
    }
  }

  std::uint64_t checked_slot(const GlsResult& r) const {
    if (r.trait_index < header_.first_trait || r.trait_index >= header_.first_trait + header_.t || r.snp_index >= header_.m) {
      throw StructuralError("result (snp " + std::to_string(r.snp_index) + ", trait " + std::to_string(r.trait_index) +
                            ") outside the file's range");
    }
    if (r.ok() && (r.beta.size() != header_.w || r.se.size() != header_.w)) throw StructuralError("result width mismatch");
    return header_.slot(r.snp_index, r.trait_index);
  }

  ResultFileHeader header_;
  std::size_t max_pending_;
  File file_;
  std::vector<bool> written_;
  std::uint64_t records_written_ = 0;
  std::uint64_t bytes_written_ = 0;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::vector<GlsResult>> queue_;
  bool stop_ = false;
  std::exception_ptr error_;
  double write_seconds_ = 0.0;
  std::thread worker_;
};

/// Writes records in one call and closes the file; returns the byte count.
inline std::uint64_t write_results(const std::filesystem::path& path, std::uint64_t m, std::uint32_t t, std::uint32_t w,
                                   std::vector<GlsResult> records, std::uint32_t first_trait = 0) {
  ResultFileWriter writer(path, m, t, w, first_trait);
  writer.consume(std::move(records));
  writer.finish();
  return kHeaderBytes + m * t * record_bytes(w);
}

}  // namespace glsweep
