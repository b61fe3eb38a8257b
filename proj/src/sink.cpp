// SPDX-FileCopyrightText: © 2026 The ringscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "ringscope/sink.hpp"

#include <netdb.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <unistd.h>
#include <zlib.h>

#include <cerrno>
#include <cstring>
#include <tuple>

#include "json.hpp"

namespace ringscope {

namespace {

using ordered_json = nlohmann::ordered_json;

void write_all(int fd, const void* data, std::size_t len) {
  const auto* p = static_cast<const char*>(data);
  while (len > 0) {
    ssize_t n = ::send(fd, p, len, MSG_NOSIGNAL);
    if (n < 0 && errno == ENOTSOCK) n = ::write(fd, p, len);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw SinkError(std::string("stream sink write failed: ") + std::strerror(errno));
    }
    p += n;
    len -= static_cast<std::size_t>(n);
  }
}

}  // namespace

bool record_key_less(const CaptureRecord& a, const CaptureRecord& b) {
  const auto layer_a = a.layer_index.value_or(-1);
  const auto layer_b = b.layer_index.value_or(-1);
  return std::tie(a.rank, a.step_seq, a.hook_name, layer_a, a.request_id) <
         std::tie(b.rank, b.step_seq, b.hook_name, layer_b, b.request_id);
}

std::uint32_t crc32_of(std::span<const std::byte> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string record_to_ndjson(const CaptureRecord& r, std::uint64_t payload_offset) {
  ordered_json j;
  j["request_id"] = r.request_id;
  j["hook"] = r.hook_name;
  j["layer"] = r.layer_index ? ordered_json(*r.layer_index) : ordered_json(nullptr);
  j["step"] = r.step_seq;
  j["tp_rank"] = r.rank.tp_rank;
  j["pp_stage"] = r.rank.pp_stage;
  j["token_range"] = {r.token_range.start, r.token_range.end};
  j["shape"] = r.shape;
  j["dtype"] = dtype_name(r.dtype);
  j["payload_offset"] = payload_offset;
  j["payload_len"] = r.payload.size();
  j["checksum"] = crc32_of(r.payload);
  return j.dump();
}

IndexEntry parse_index_line(const std::string& line) {
  IndexEntry e;
  try {
    const auto j = nlohmann::json::parse(line);
    e.meta.request_id = j.at("request_id").get<std::uint64_t>();
    e.meta.hook_name = j.at("hook").get<std::string>();
    if (!j.at("layer").is_null()) e.meta.layer_index = j.at("layer").get<std::int32_t>();
    e.meta.step_seq = j.at("step").get<std::uint32_t>();
    e.meta.rank.tp_rank = j.at("tp_rank").get<std::uint32_t>();
    e.meta.rank.pp_stage = j.at("pp_stage").get<std::uint32_t>();
    const auto& tr = j.at("token_range");
    e.meta.token_range = {tr.at(0).get<std::uint32_t>(), tr.at(1).get<std::uint32_t>()};
    e.meta.shape = j.at("shape").get<std::vector<std::int64_t>>();
    e.meta.dtype = parse_dtype(j.at("dtype").get<std::string>());
    e.payload_offset = j.at("payload_offset").get<std::uint64_t>();
    e.payload_len = j.at("payload_len").get<std::uint64_t>();
    e.checksum = j.at("checksum").get<std::uint32_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw std::runtime_error(std::string("malformed index line: ") + ex.what());
  }
  return e;
}

// ---------------------------------------------------------------------------

void NullSink::write(std::span<const CaptureRecord> records) {
  for (const auto& r : records) {
    ++records_;
    bytes_ += r.payload.size();
  }
}

void MemorySink::write(std::span<const CaptureRecord> records) {
  records_.insert(records_.end(), records.begin(), records.end());
}

FileSink::FileSink(const std::filesystem::path& dir)
    : FileSink((std::filesystem::create_directories(dir), dir / "index.ndjson"),
               dir / "payload.bin") {}

FileSink::FileSink(const std::filesystem::path& index_path,
                   const std::filesystem::path& payload_path)
    : index_(index_path, std::ios::out | std::ios::trunc),
      payload_(payload_path, std::ios::out | std::ios::binary | std::ios::trunc) {
  if (!index_ || !payload_) {
    throw SinkError("cannot open dataset files at " + index_path.string());
  }
}

void FileSink::write(std::span<const CaptureRecord> records) {
  for (const auto& r : records) {
    payload_.write(reinterpret_cast<const char*>(r.payload.data()),
                   static_cast<std::streamsize>(r.payload.size()));
    index_ << record_to_ndjson(r, payload_offset_) << '\n';
    payload_offset_ += r.payload.size();
  }
  payload_.flush();
  index_.flush();
  if (!payload_ || !index_) throw SinkError("dataset write failed");
}

StreamSink::StreamSink(int fd, bool owns_fd) : fd_(fd), owns_fd_(owns_fd) {}

StreamSink::~StreamSink() {
  if (owns_fd_ && fd_ >= 0) ::close(fd_);
}

std::unique_ptr<StreamSink> StreamSink::connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0) {
    throw SinkError("cannot resolve " + host);
  }
  int fd = -1;
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw SinkError("cannot connect to " + host + ":" + service);
  return std::make_unique<StreamSink>(fd, true);
}

void StreamSink::write(std::span<const CaptureRecord> records) {
  for (const auto& r : records) {
    const std::string line = record_to_ndjson(r, payload_offset_);
    const auto n = static_cast<std::uint32_t>(line.size());
    const unsigned char prefix[4] = {static_cast<unsigned char>(n & 0xFF),
                                     static_cast<unsigned char>((n >> 8) & 0xFF),
                                     static_cast<unsigned char>((n >> 16) & 0xFF),
                                     static_cast<unsigned char>((n >> 24) & 0xFF)};
    write_all(fd_, prefix, sizeof prefix);
    write_all(fd_, line.data(), line.size());
    write_all(fd_, r.payload.data(), r.payload.size());
    payload_offset_ += r.payload.size();
  }
}

std::vector<CaptureRecord> decode_stream_frames(std::span<const std::byte> bytes) {
  std::vector<CaptureRecord> out;
  std::size_t pos = 0;
  while (bytes.size() - pos >= 4) {
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) {
      n |= static_cast<std::uint32_t>(std::to_integer<std::uint8_t>(bytes[pos + i])) << (8 * i);
    }
    if (bytes.size() - pos - 4 < n) break;
    const std::string line(reinterpret_cast<const char*>(bytes.data() + pos + 4), n);
    IndexEntry e = parse_index_line(line);
    const std::size_t payload_at = pos + 4 + n;
    if (bytes.size() - payload_at < e.payload_len) break;
    e.meta.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(payload_at),
                          bytes.begin() + static_cast<std::ptrdiff_t>(payload_at + e.payload_len));
    out.push_back(std::move(e.meta));
    pos = payload_at + e.payload_len;
  }
  return out;
}

void TeeSink::write(std::span<const CaptureRecord> records) {
  for (Sink* s : sinks_) s->write(records);
}

void FaultInjectingSink::write(std::span<const CaptureRecord> records) {
  const std::uint64_t call = calls_++;
  if (failing_.count(call) != 0) {
    ++injected_;
    throw SinkError("injected sink failure on call " + std::to_string(call));
  }
  inner_.write(records);
}

DatasetReadResult read_dataset(const std::filesystem::path& dir) {
  std::ifstream index(dir / "index.ndjson");
  std::ifstream payload(dir / "payload.bin", std::ios::binary);
  if (!index || !payload) throw std::runtime_error("cannot open dataset at " + dir.string());

  DatasetReadResult result;
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    IndexEntry e = parse_index_line(line);
    e.meta.payload.resize(e.payload_len);
    payload.seekg(static_cast<std::streamoff>(e.payload_offset));
    payload.read(reinterpret_cast<char*>(e.meta.payload.data()),
                 static_cast<std::streamsize>(e.payload_len));
    if (!payload) throw std::runtime_error("payload sidecar truncated in " + dir.string());
    if (crc32_of(e.meta.payload) != e.checksum) ++result.checksum_failures;
    result.records.push_back(std::move(e.meta));
  }
  return result;
}

}  // namespace ringscope
