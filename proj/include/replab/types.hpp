#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace replab {

// Simulated actors. `kernel` is reserved for scheduler bookkeeping records
// and never executes protocol transitions.
enum class ProcKind : uint8_t { client, replica, certifier, oracle, kernel };

struct ProcessId {
  ProcKind kind{ProcKind::kernel};
  uint16_t index{0};

  friend auto operator<=>(const ProcessId&, const ProcessId&) = default;

  static ProcessId client(uint16_t i) { return {ProcKind::client, i}; }
  static ProcessId replica(uint16_t i) { return {ProcKind::replica, i}; }
  static ProcessId certifier(uint16_t i) { return {ProcKind::certifier, i}; }
  static ProcessId kernel_proc() { return {ProcKind::kernel, 0}; }
};

std::string to_string(ProcessId p);
bool parse_process(std::string_view s, ProcessId& out);

// Virtual time in abstract integer ticks. Never decreases during a run.
using Tick = uint64_t;

// Slots are numbered from 1.
using Slot = uint32_t;

// Totally ordered round identifier. Paxos rounds carry the proposing
// certifier in `owner`, VSR rounds carry the view manager, and plain epochs
// (Zab) keep owner at 0. Ordering is lexicographic in all flavors.
struct RoundId {
  uint32_t counter{0};
  uint32_t owner{0};

  friend auto operator<=>(const RoundId&, const RoundId&) = default;
};

std::string to_string(RoundId r);

// Lexicographic (round, certified-slot-count) pair identifying a
// certification prefix.
struct RoundStamp {
  RoundId round{};
  uint32_t count{0};

  friend auto operator<=>(const RoundStamp&, const RoundStamp&) = default;
};

std::string to_string(RoundStamp s);

// FNV-1a. Stable across platforms; used for state digests and value keys.
inline uint64_t hash64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(uint64_t v);

}  // namespace replab
