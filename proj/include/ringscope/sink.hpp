// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

// Record sinks and the on-disk dataset format.
//
// File dataset: `index.ndjson` holds one JSON object per record with fields
// in this order:
//
//   request_id, hook, layer, step, tp_rank, pp_stage, token_range, shape,
//   dtype, payload_offset, payload_len, checksum
//
// `payload.bin` holds the raw little-endian payload bytes; payload_offset is
// the byte offset into it and checksum is the CRC-32 of the payload.
//
// Stream framing: for every record, a 4-byte little-endian length of the
// JSON line, the JSON line itself (no trailing newline), then payload_len raw
// payload bytes. payload_offset counts payload bytes sent on the stream.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ringscope/record.hpp"

namespace ringscope {

class SinkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint32_t crc32_of(std::span<const std::byte> bytes);

std::string record_to_ndjson(const CaptureRecord& r, std::uint64_t payload_offset);

struct IndexEntry {
  CaptureRecord meta;  // payload left empty
  std::uint64_t payload_offset = 0;
  std::uint64_t payload_len = 0;
  std::uint32_t checksum = 0;
};

IndexEntry parse_index_line(const std::string& line);  // throws std::runtime_error

class Sink {
 public:
  virtual ~Sink() = default;
  // Appends records in order. Throws SinkError on I/O failure.
  virtual void write(std::span<const CaptureRecord> records) = 0;
};

class NullSink : public Sink {
 public:
  void write(std::span<const CaptureRecord> records) override;
  std::uint64_t records() const { return records_; }
  std::uint64_t bytes() const { return bytes_; }

 private:
  std::uint64_t records_ = 0;
  std::uint64_t bytes_ = 0;
};

class MemorySink : public Sink {
 public:
  void write(std::span<const CaptureRecord> records) override;
  const std::vector<CaptureRecord>& records() const { return records_; }
  std::vector<CaptureRecord> take() { return std::move(records_); }

 private:
  std::vector<CaptureRecord> records_;
};

class FileSink : public Sink {
 public:
  // Creates (truncates) `<dir>/index.ndjson` and `<dir>/payload.bin`.
  explicit FileSink(const std::filesystem::path& dir);
  FileSink(const std::filesystem::path& index_path, const std::filesystem::path& payload_path);

  void write(std::span<const CaptureRecord> records) override;

 private:
  std::ofstream index_;
  std::ofstream payload_;
  std::uint64_t payload_offset_ = 0;
};

class StreamSink : public Sink {
 public:
  // Writes frames to a connected socket or pipe. Takes ownership of fd when
  // `owns_fd` is set.
  explicit StreamSink(int fd, bool owns_fd = false);
  ~StreamSink() override;
  StreamSink(const StreamSink&) = delete;
  StreamSink& operator=(const StreamSink&) = delete;

  static std::unique_ptr<StreamSink> connect_tcp(const std::string& host, std::uint16_t port);

  void write(std::span<const CaptureRecord> records) override;

 private:
  int fd_;
  bool owns_fd_;
  std::uint64_t payload_offset_ = 0;
};

// Decodes every complete frame in `bytes`.
std::vector<CaptureRecord> decode_stream_frames(std::span<const std::byte> bytes);

class TeeSink : public Sink {
 public:
  explicit TeeSink(std::vector<Sink*> sinks) : sinks_(std::move(sinks)) {}
  void write(std::span<const CaptureRecord> records) override;

 private:
  std::vector<Sink*> sinks_;
};

// Fails the write calls whose zero-based index is in `failing_calls`, and
// forwards the rest.
class FaultInjectingSink : public Sink {
 public:
  FaultInjectingSink(Sink& inner, std::set<std::uint64_t> failing_calls)
      : inner_(inner), failing_(std::move(failing_calls)) {}
  void write(std::span<const CaptureRecord> records) override;
  std::uint64_t injected() const { return injected_; }

 private:
  Sink& inner_;
  std::set<std::uint64_t> failing_;
  std::uint64_t calls_ = 0;
  std::uint64_t injected_ = 0;
};

struct DatasetReadResult {
  std::vector<CaptureRecord> records;
  std::uint64_t checksum_failures = 0;
};

// Reads a file dataset back. Records whose payload fails its checksum are
// still returned (and counted) so callers can report diffs.
DatasetReadResult read_dataset(const std::filesystem::path& dir);

}  // namespace ringscope
