#pragma once

#include "vic/paging.hpp"
#include "vic/slat.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace vic {

inline constexpr std::uint64_t kDefaultGuestRam = 256ULL * 1024 * 1024;

struct MachineConfig {
    std::uint64_t guest_ram_bytes = kDefaultGuestRam;
    std::uint64_t spare_host_frames = 16;
    CostModel costs;
    /// Whether a privileged VMX instruction executed in the guest faults
    /// with #UD the way it does on bare metal.
    bool ud_on_vmread = true;
    bool deliver_irrelevant = false;
};

/// The simulated guest: guest-physical RAM behind a SLAT, per-process page
/// tables, and the clock that every guest access is charged against.
///
/// All guest accesses go through the SLAT funnel. Host-side accesses
/// (`host_read_virtual` and friends) walk the same tables but bypass traps
/// and cost accounting.
class GuestMachine {
public:
    explicit GuestMachine(MachineConfig config = {});

    GuestMachine(const GuestMachine&) = delete;
    GuestMachine& operator=(const GuestMachine&) = delete;

    // -- paging ----------------------------------------------------------
    GuestPhysAddr alloc_frame(PageSize size_class);
    const ProcessContext& create_process(const std::string& name);
    [[nodiscard]] const ProcessContext& process(std::uint32_t pid) const;
    [[nodiscard]] const ProcessContext& process_by_name(const std::string& name) const;
    [[nodiscard]] std::vector<ProcessContext> processes() const;

    void map_page(const ProcessContext& proc, GuestVirtAddr gva, GuestPhysAddr gpa, PageSize size,
                  PagePerms perms);
    /// Removes the leaf mapping that contains `gva` and returns its size.
    PageSize unmap_page(const ProcessContext& proc, GuestVirtAddr gva);
    [[nodiscard]] TranslationResult translate(const ProcessContext& proc, GuestVirtAddr gva) const;

    // -- guest accesses (trap, cost) -------------------------------------
    void guest_read(const ProcessContext& proc, GuestVirtAddr gva, std::span<std::uint8_t> out);
    [[nodiscard]] std::vector<std::uint8_t> guest_read(const ProcessContext& proc, GuestVirtAddr gva,
                                                       std::size_t len);
    void guest_write(const ProcessContext& proc, GuestVirtAddr gva, std::span<const std::uint8_t> bytes);
    /// One instruction fetch at `gva`.
    void guest_execute(const ProcessContext& proc, GuestVirtAddr gva);

    template <typename T>
    T read(const ProcessContext& proc, GuestVirtAddr gva)
    {
        static_assert(std::is_trivially_copyable_v<T>);
        std::array<std::uint8_t, sizeof(T)> raw{};
        guest_read(proc, gva, raw);
        return std::bit_cast<T>(raw);
    }

    template <typename T>
    void write(const ProcessContext& proc, GuestVirtAddr gva, const T& value)
    {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto raw = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(value);
        guest_write(proc, gva, raw);
    }

    // -- host-side accesses (no trap, no cost) ---------------------------
    void host_read_virtual(const ProcessContext& proc, GuestVirtAddr gva, std::span<std::uint8_t> out) const;
    void host_write_virtual(const ProcessContext& proc, GuestVirtAddr gva, std::span<const std::uint8_t> in);
    /// Decrypted, untrapped, uncharged read for ground-truth bookkeeping.
    void inspect_virtual(const ProcessContext& proc, GuestVirtAddr gva, std::span<std::uint8_t> out) const;

    template <typename T>
    T inspect(const ProcessContext& proc, GuestVirtAddr gva) const
    {
        std::array<std::uint8_t, sizeof(T)> raw{};
        inspect_virtual(proc, gva, raw);
        return std::bit_cast<T>(raw);
    }

    // -- clock -----------------------------------------------------------
    /// A serialising instruction that always exits to the hypervisor.
    void cpuid();
    /// Guest-visible timestamp clock in nanoseconds. With TSC offsetting the
    /// hypervisor hides the part of each exit that exceeds a native access.
    [[nodiscard]] double guest_clock_ns() const noexcept { return sim_time_ns_ - static_cast<double>(hidden_ns_); }
    /// True simulated time in nanoseconds since boot.
    [[nodiscard]] double sim_time_ns() const noexcept { return sim_time_ns_; }
    void charge_work(std::int64_t ns);
    void begin_tick();
    /// Idles until `budget_ns` has elapsed since begin_tick (if it has not
    /// already) and returns the tick's duration.
    double end_tick(double budget_ns);
    [[nodiscard]] std::int64_t tick_charged_ns() const noexcept { return tick_charged_ns_; }

    void set_logical_time(std::uint64_t ticks) noexcept { slat_.set_time(ticks); }
    [[nodiscard]] std::uint64_t logical_time() const noexcept { return slat_.time(); }

    /// Trapped accesses bucketed by whole simulated seconds since the epoch
    /// (boot, or the last reset_event_epoch).
    [[nodiscard]] const std::vector<std::uint64_t>& trapped_per_second() const noexcept
    {
        return trapped_per_second_;
    }
    void reset_event_epoch() noexcept
    {
        trapped_per_second_.clear();
        epoch_ns_ = sim_time_ns_;
    }

    [[nodiscard]] Slat& slat() noexcept { return slat_; }
    [[nodiscard]] const Slat& slat() const noexcept { return slat_; }
    [[nodiscard]] const MachineConfig& config() const noexcept { return config_; }
    [[nodiscard]] bool ud_on_vmread() const noexcept { return config_.ud_on_vmread; }

    /// Set while a host introspection session is attached.
    bool try_attach_session() noexcept;
    void detach_session() noexcept { session_attached_ = false; }

private:
    struct Piece {
        GuestVirtAddr gva;
        GuestPhysAddr gpa;
        std::size_t offset;
        std::size_t len;
    };

    struct TlbEntry {
        std::uint64_t root = ~0ULL;
        std::uint64_t vpn = 0;
        std::uint64_t generation = 0;
        TranslationResult result;
    };
    static constexpr std::size_t kTlbEntries = 256;

    [[nodiscard]] TranslationResult cached_translate(const ProcessContext& proc, GuestVirtAddr gva) const;
    [[nodiscard]] std::uint64_t read_table(GuestPhysAddr gpa) const;
    void write_table(GuestPhysAddr gpa, std::uint64_t raw);
    void split(const ProcessContext& proc, GuestVirtAddr gva, std::size_t len, AccessKind kind,
               std::vector<Piece>& pieces) const;
    void access(const ProcessContext& proc, GuestVirtAddr gva, AccessKind kind, std::span<std::uint8_t> data);
    void charge(const AccessOutcome& outcome);

    MachineConfig config_;
    FrameAllocator frames_;
    Slat slat_;
    std::map<std::uint32_t, ProcessContext> processes_;
    std::uint32_t next_pid_ = 1;
    double sim_time_ns_ = 0.0;
    double tick_start_ns_ = 0.0;
    double epoch_ns_ = 0.0;
    std::int64_t tick_charged_ns_ = 0;
    std::int64_t hidden_ns_ = 0;
    std::vector<std::uint64_t> trapped_per_second_;
    std::vector<Piece> scratch_;
    mutable std::array<TlbEntry, kTlbEntries> tlb_{};
    std::vector<bool> table_frames_;
    bool session_attached_ = false;
};

} // namespace vic
