#pragma once

// Double-buffered block streaming. A reader thread fills one buffer while
// the consumer works on the other; buffers change hands only through the
// slot state machine below, so the consumer never sees a partial block and
// a block is never overwritten while it is being consumed.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "glsweep/matrix.hpp"
#include "glsweep/model.hpp"
#include "glsweep/stream_io.hpp"

namespace glsweep {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

/// Accumulates elapsed time into a double on destruction.
class ScopedTimer {
 public:
  explicit ScopedTimer(double& sink) : sink_(sink), start_(Clock::now()) {}
  ~ScopedTimer() { sink_ += seconds_since(start_); }
  ScopedTimer(const ScopedTimer&) = delete;
  ScopedTimer& operator=(const ScopedTimer&) = delete;

 private:
  double& sink_;
  Clock::time_point start_;
};

struct OverlapReport {
  double compute_seconds = 0.0;
  double read_seconds = 0.0;
  double write_seconds = 0.0;
  double wall_seconds = 0.0;

  /// (compute + read + write - wall) / min(compute, read + write), clamped
  /// to [0, 1]; 1 means I/O was completely hidden, 0 means none of it was.
  /// Untimed work inside the wall time counts against overlap.
  double efficiency() const noexcept {
    const double io = read_seconds + write_seconds;
    const double denom = std::min(compute_seconds, io);
    if (denom <= 0.0) return 0.0;
    return std::clamp((compute_seconds + io - wall_seconds) / denom, 0.0, 1.0);
  }
};

class BlockStream {
 public:
  BlockStream(BlockSource& source, BlockPlan plan, bool double_buffering = true)
      : source_(source), plan_(std::move(plan)) {
    if (plan_.rows != source_.rows()) throw StructuralError("BlockStream: plan rows do not match source");
    if (plan_.total_cols > source_.cols()) throw StructuralError("BlockStream: plan exceeds source columns");
    plan_.buffer_count = double_buffering ? 2 : 1;
    slots_.resize(plan_.buffer_count);
    for (auto& s : slots_) s.buffer = Matrix(plan_.rows, std::min(plan_.block_size, std::max<std::size_t>(plan_.total_cols, 1)));
    reader_ = std::thread([this] { reader_loop(); });
  }

  ~BlockStream() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    if (reader_.joinable()) reader_.join();
  }

  BlockStream(const BlockStream&) = delete;
  BlockStream& operator=(const BlockStream&) = delete;

  const BlockPlan& plan() const noexcept { return plan_; }

  /// Hands out the next block; the previous one is released back to the
  /// reader. The returned view is valid until the following call.
  std::optional<GenotypeBlock> next() {
    std::unique_lock lock(mu_);
    if (held_) {
      slots_[*held_].state = SlotState::free;
      held_.reset();
      cv_.notify_all();
    }
    if (next_block_ >= plan_.num_blocks()) return std::nullopt;
    const std::size_t slot = next_block_ % slots_.size();
    const auto wait_start = Clock::now();
    // Blocks read before a failure are still handed out in order.
    auto failed_here = [&] { return error_ && next_block_ >= error_block_; };
    cv_.wait(lock, [&] { return slots_[slot].state == SlotState::ready || failed_here(); });
    wait_seconds_ += seconds_since(wait_start);
    if (failed_here()) std::rethrow_exception(error_);
    Slot& s = slots_[slot];
    s.state = SlotState::in_use;
    held_ = slot;
    const std::size_t b = next_block_++;
    return GenotypeBlock{s.buffer.columns(0, plan_.width(b)), plan_.first_col(b)};
  }

  /// Time the reader spent inside BlockSource::read.
  double read_seconds() const {
    std::lock_guard lock(mu_);
    return read_seconds_;
  }
  /// Time the consumer spent blocked in next().
  double wait_seconds() const {
    std::lock_guard lock(mu_);
    return wait_seconds_;
  }

 private:
  enum class SlotState { free, filling, ready, in_use };
  struct Slot {
    Matrix buffer;
    SlotState state = SlotState::free;
  };

  void reader_loop() {
    for (std::size_t b = 0; b < plan_.num_blocks(); ++b) {
      const std::size_t slot = b % slots_.size();
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return slots_[slot].state == SlotState::free || stop_; });
        if (stop_) return;
        slots_[slot].state = SlotState::filling;
      }
      double elapsed = 0.0;
      try {
        ScopedTimer timer(elapsed);
        source_.read(plan_.first_col(b), slots_[slot].buffer.columns(0, plan_.width(b)));
      } catch (...) {
        std::lock_guard lock(mu_);
        error_ = std::make_exception_ptr(IoError("failed reading block " + std::to_string(b) + ": " + describe(std::current_exception())));
        error_block_ = b;
        cv_.notify_all();
        return;
      }
      {
        std::lock_guard lock(mu_);
        read_seconds_ += elapsed;
        slots_[slot].state = SlotState::ready;
      }
      cv_.notify_all();
    }
  }

  static std::string describe(std::exception_ptr p) {
    try {
      std::rethrow_exception(p);
    } catch (const std::exception& e) {
      return e.what();
    } catch (...) {
      return "unknown error";
    }
  }

  BlockSource& source_;
  BlockPlan plan_;
  std::vector<Slot> slots_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::thread reader_;
  std::optional<std::size_t> held_;
  std::size_t next_block_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
  std::size_t error_block_ = 0;
  double read_seconds_ = 0.0;
  double wait_seconds_ = 0.0;
};

/// Wraps a source and sleeps for a fixed time before every read, emulating
/// slow storage.
class StallingBlockSource final : public BlockSource {
 public:
  StallingBlockSource(BlockSource& inner, std::chrono::duration<double> stall) : inner_(inner), stall_(stall) {}
  std::size_t rows() const override { return inner_.rows(); }
  std::size_t cols() const override { return inner_.cols(); }
  void read(std::size_t first, MatrixView dst) override {
    std::this_thread::sleep_for(stall_);
    inner_.read(first, dst);
  }

 private:
  BlockSource& inner_;
  std::chrono::duration<double> stall_;
};

/// Streams `blocks` single-column blocks through a reader that stalls for
/// `io` per block while the consumer stalls for `compute` per block.
inline OverlapReport run_stall_pipeline(std::size_t blocks, std::chrono::duration<double> compute,
                                        std::chrono::duration<double> io, bool double_buffering) {
  Matrix data(4, blocks);
  MemoryBlockSource memory(data.view());
  StallingBlockSource slow(memory, io);
  OverlapReport r;
  const auto start = Clock::now();
  {
    BlockStream stream(slow, make_block_plan(4, blocks, 1), double_buffering);
    while (stream.next()) {
      ScopedTimer timer(r.compute_seconds);
      std::this_thread::sleep_for(compute);
    }
    r.read_seconds = stream.read_seconds();
  }
  r.wall_seconds = seconds_since(start);
  return r;
}

}  // namespace glsweep
