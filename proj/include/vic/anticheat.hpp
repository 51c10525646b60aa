#pragma once

// In-guest probes and game-side mitigations. Probes run as guest code inside
// the game tick, so whatever they cost comes out of the tick budget.

#include "vic/machine.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace vic {

class Game;
struct GameConfig;
struct GameLayout;

enum class Verdict { Clean, Suspicious, Detected };
const char* to_string(Verdict v) noexcept;

/// Ratios above this are a detection.
inline constexpr double kTimingDetectThreshold = 10.0;
/// Ratios above this (and not above the detection threshold) are suspicious.
inline constexpr double kTimingSuspiciousThreshold = 2.0;
inline constexpr std::uint32_t kMinTimingIterations = 100;

struct HypervisorProfile {
    bool tsc_offset_enabled = false;
    bool ud_on_vmread = true;
};

HypervisorProfile profile_of(const GuestMachine& guest);

struct ProbeReport {
    double timing_ratio = 1.0;
    bool vm_instruction_artifact = false;
    bool redundancy_mismatch = false;
    Verdict verdict = Verdict::Clean;
};

Verdict classify(double timing_ratio, bool vm_instruction_artifact, bool redundancy_mismatch) noexcept;
ProbeReport make_report(double timing_ratio, bool vm_instruction_artifact, bool redundancy_mismatch) noexcept;

/// Times `iterations` serialising instructions against as many plain loads
/// from `scratch` on the guest-visible clock. Throws PreconditionFailed
/// below kMinTimingIterations.
double timing_probe(GuestMachine& guest, const ProcessContext& proc, GuestVirtAddr scratch, std::uint32_t iterations);

/// True when the privileged-instruction probe does not fault the way it
/// would on bare metal. A missing profile is taken as faithful.
bool emulation_probe(const std::optional<HypervisorProfile>& profile) noexcept;

/// Guest-side comparison of the primary and shadow fire state.
bool redundancy_check(GuestMachine& guest, const ProcessContext& proc, const GameLayout& layout);

enum class Mitigation { HugePages, ColocateCodeData, MemoryEncryption };
const char* to_string(Mitigation m) noexcept;
std::optional<Mitigation> mitigation_from_string(const std::string& name);

/// Enables a mitigation in a config that has not been used to build a game.
void apply_mitigation(GameConfig& config, Mitigation which) noexcept;
/// Mitigations need a relayout; a running game always throws
/// IncompatibleAtRuntime.
[[noreturn]] void apply_mitigation(Game& game, Mitigation which);

} // namespace vic
