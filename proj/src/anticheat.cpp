#include "vic/anticheat.hpp"

#include "vic/error.hpp"
#include "vic/game.hpp"

#include <limits>

namespace vic {

const char* to_string(Verdict v) noexcept
{
    switch (v) {
    case Verdict::Clean: return "clean";
    case Verdict::Suspicious: return "suspicious";
    case Verdict::Detected: return "detected";
    }
    return "?";
}

HypervisorProfile profile_of(const GuestMachine& guest)
{
    return HypervisorProfile{guest.slat().costs().tsc_offset_enabled, guest.ud_on_vmread()};
}

Verdict classify(double timing_ratio, bool vm_instruction_artifact, bool redundancy_mismatch) noexcept
{
    if (vm_instruction_artifact || redundancy_mismatch || timing_ratio > kTimingDetectThreshold) {
        return Verdict::Detected;
    }
    if (timing_ratio > kTimingSuspiciousThreshold) {
        return Verdict::Suspicious;
    }
    return Verdict::Clean;
}

ProbeReport make_report(double timing_ratio, bool vm_instruction_artifact, bool redundancy_mismatch) noexcept
{
    return ProbeReport{timing_ratio, vm_instruction_artifact, redundancy_mismatch,
                       classify(timing_ratio, vm_instruction_artifact, redundancy_mismatch)};
}

double timing_probe(GuestMachine& guest, const ProcessContext& proc, GuestVirtAddr scratch, std::uint32_t iterations)
{
    if (iterations < kMinTimingIterations) {
        fail(ErrorCode::PreconditionFailed, "timing probe needs at least 100 iterations");
    }
    // rdtsc; cpuid; rdtsc against rdtsc; mov; rdtsc.
    const double t0 = guest.guest_clock_ns();
    for (std::uint32_t i = 0; i < iterations; ++i) {
        guest.cpuid();
    }
    const double t1 = guest.guest_clock_ns();
    for (std::uint32_t i = 0; i < iterations; ++i) {
        (void)guest.read<std::uint64_t>(proc, scratch);
    }
    const double t2 = guest.guest_clock_ns();
    const double probed = t1 - t0;
    const double baseline = t2 - t1;
    if (baseline <= 0) {
        return probed <= 0 ? 1.0 : std::numeric_limits<double>::infinity();
    }
    return probed / baseline;
}

bool emulation_probe(const std::optional<HypervisorProfile>& profile) noexcept
{
    return !profile.value_or(HypervisorProfile{}).ud_on_vmread;
}

bool redundancy_check(GuestMachine& guest, const ProcessContext& proc, const GameLayout& layout)
{
    const auto primary = guest.read<std::uint32_t>(proc, layout.at(layout.fire_state_primary));
    const auto shadow = guest.read<std::uint32_t>(proc, layout.at(layout.fire_state_shadow));
    return primary != shadow;
}

const char* to_string(Mitigation m) noexcept
{
    switch (m) {
    case Mitigation::HugePages: return "huge_pages";
    case Mitigation::ColocateCodeData: return "colocate";
    case Mitigation::MemoryEncryption: return "encrypt";
    }
    return "?";
}

std::optional<Mitigation> mitigation_from_string(const std::string& name)
{
    if (name == "huge_pages") {
        return Mitigation::HugePages;
    }
    if (name == "colocate" || name == "colocate_code_data") {
        return Mitigation::ColocateCodeData;
    }
    if (name == "encrypt" || name == "memory_encryption") {
        return Mitigation::MemoryEncryption;
    }
    return std::nullopt;
}

void apply_mitigation(GameConfig& config, Mitigation which) noexcept
{
    switch (which) {
    case Mitigation::HugePages: config.mitigations.huge_pages = true; break;
    case Mitigation::ColocateCodeData: config.mitigations.colocate_code_data = true; break;
    case Mitigation::MemoryEncryption: config.mitigations.memory_encryption = true; break;
    }
}

void apply_mitigation(Game& game, Mitigation which)
{
    (void)game;
    fail(ErrorCode::IncompatibleAtRuntime,
         std::string(to_string(which)) + " changes the memory layout; enable it before the game starts");
}

} // namespace vic
