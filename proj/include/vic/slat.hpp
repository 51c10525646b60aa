#pragma once

// Second-level address translation (guest-physical -> host-physical), the
// hypervisor's trap point. Page guards clear permissions on a frame so every
// guest access of a guarded kind traps; the trap is emulated atomically and
// the guard re-armed before control returns. Every access is charged to the
// cost ledger: vmexit cost when trapped, baseline cost otherwise.

#include "vic/paging.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace vic {

enum class AccessKind : std::uint8_t { Read = 1, Write = 2, Execute = 4 };

const char* to_string(AccessKind kind) noexcept;

/// Bitmask over AccessKind.
class KindSet {
public:
    constexpr KindSet() = default;
    constexpr KindSet(std::initializer_list<AccessKind> kinds)
    {
        for (auto k : kinds) {
            bits_ |= static_cast<std::uint8_t>(k);
        }
    }
    static constexpr KindSet all() { return {AccessKind::Read, AccessKind::Write, AccessKind::Execute}; }

    [[nodiscard]] constexpr bool contains(AccessKind k) const noexcept
    {
        return (bits_ & static_cast<std::uint8_t>(k)) != 0;
    }
    [[nodiscard]] constexpr bool empty() const noexcept { return bits_ == 0; }
    [[nodiscard]] constexpr std::uint8_t bits() const noexcept { return bits_; }
    constexpr KindSet operator|(KindSet o) const noexcept { return from_bits(bits_ | o.bits_); }
    constexpr KindSet operator-(KindSet o) const noexcept
    {
        return from_bits(static_cast<std::uint8_t>(bits_ & ~o.bits_));
    }
    friend constexpr bool operator==(KindSet, KindSet) = default;

    static constexpr KindSet from_bits(unsigned bits)
    {
        KindSet s;
        s.bits_ = static_cast<std::uint8_t>(bits & 7U);
        return s;
    }

private:
    std::uint8_t bits_ = 0;
};

/// Simulated cost of guest memory accesses, in microseconds. Internally the
/// ledger counts whole nanoseconds so accumulated totals are exact.
struct CostModel {
    double vmexit_cost_us = 50.0;
    double baseline_access_cost_us = 0.1;
    bool tsc_offset_enabled = false;

    [[nodiscard]] std::int64_t vmexit_ns() const;
    [[nodiscard]] std::int64_t baseline_ns() const;
    void validate() const;
};

struct MemoryEvent {
    GuestPhysAddr gpa{};
    GuestVirtAddr gva{};
    std::uint32_t pid = 0;
    AccessKind kind = AccessKind::Read;
    std::uint32_t len = 0;
    std::vector<std::uint8_t> old_value; // writes only
    std::vector<std::uint8_t> new_value; // writes only
    bool relevant = false;
    std::uint64_t timestamp = 0;
    std::uint64_t sequence = 0;
};

using GuardCallback = std::function<void(const MemoryEvent&)>;

struct WatchRange {
    std::uint64_t offset = 0;
    std::uint64_t len = 0;
};

using GuardId = std::uint32_t;

struct PageGuard {
    GuardId id = 0;
    std::uint64_t gfn = 0;                 // first 4 KiB frame covered
    PageSize frame_size = PageSize::k4K;   // extent of the guarded frame
    std::vector<WatchRange> watch_ranges;  // offsets relative to the guarded frame
    KindSet kinds;
    GuardCallback callback;
    std::optional<std::uint32_t> spp_bitmap; // one bit per 128-byte sub-range
};

struct SlatEntry {
    std::uint64_t gfn = 0;
    std::uint64_t host_frame = 0;
    KindSet perms;
    std::vector<GuardId> guards;
    std::uint64_t trapped_accesses = 0;
};

struct AccessOutcome {
    bool trapped = false;
    bool relevant = false;
    std::int64_t cost_ns = 0;
};

/// A single guest access confined to one 4 KiB guest frame.
struct AccessRequest {
    std::uint32_t pid = 0;
    GuestVirtAddr gva{};
    GuestPhysAddr gpa{};
    AccessKind kind = AccessKind::Read;
};

struct CostLedger {
    std::uint64_t trapped = 0;
    std::uint64_t untrapped = 0;
    std::uint64_t relevant = 0;
    std::int64_t total_ns = 0;
};

/// Sparse host-physical frame store; untouched frames read as zero.
class HostMemory {
public:
    explicit HostMemory(std::uint64_t frames);

    [[nodiscard]] std::uint64_t frames() const noexcept { return frames_.size(); }
    void read(std::uint64_t host_frame, std::uint64_t offset, std::span<std::uint8_t> out) const;
    void write(std::uint64_t host_frame, std::uint64_t offset, std::span<const std::uint8_t> in);
    void zero(std::uint64_t host_frame);

private:
    using Frame = std::array<std::uint8_t, kPage4K>;
    std::vector<std::unique_ptr<Frame>> frames_;
};

struct SlatConfig {
    std::uint64_t guest_frames = 0;
    std::uint64_t spare_host_frames = 16;
    bool identity_map = true;
    bool deliver_irrelevant = false;
    CostModel costs;
};

class Slat {
public:
    explicit Slat(SlatConfig config);

    void slat_map(std::uint64_t gfn, std::uint64_t host_frame, KindSet perms);
    void slat_unmap(std::uint64_t gfn);
    [[nodiscard]] bool is_mapped(std::uint64_t gfn) const;
    [[nodiscard]] const SlatEntry& entry(std::uint64_t gfn) const;
    /// Base permissions minus every guarded kind.
    [[nodiscard]] KindSet effective_perms(std::uint64_t gfn) const;

    GuardId set_page_guard(std::uint64_t gfn, std::vector<WatchRange> ranges, KindSet kinds,
                           GuardCallback callback, PageSize frame_size = PageSize::k4K);
    void set_spp_bitmap(GuardId id, std::uint32_t bitmap);
    void remove_guard(GuardId id);
    [[nodiscard]] const PageGuard& guard(GuardId id) const;
    [[nodiscard]] std::size_t guard_count() const noexcept;

    /// The single funnel for guest accesses. `data` is the destination of a
    /// read or the source of a write; execute fetches read into `data`.
    AccessOutcome access(const AccessRequest& req, std::span<std::uint8_t> data);

    /// Host-side accesses: no traps, no cost, raw stored bytes.
    void host_read(GuestPhysAddr gpa, std::span<std::uint8_t> out) const;
    void host_write(GuestPhysAddr gpa, std::span<const std::uint8_t> in);
    /// Plaintext view of guest memory without trapping or charging. Used for
    /// ground truth; nothing on the guest or cheat path calls it.
    void inspect(GuestPhysAddr gpa, std::span<std::uint8_t> out) const;

    /// Stores `gfn` transformed under a keyed stream; guest accesses see
    /// plaintext, host accesses see the stored bytes.
    void set_encrypted(std::uint64_t gfn, std::uint64_t key);
    [[nodiscard]] bool is_encrypted(std::uint64_t gfn) const;
    /// Makes the frame read back as plaintext zeros to the guest.
    void zero_frame(std::uint64_t gfn);

    void set_time(std::uint64_t logical_ticks) noexcept { now_ = logical_ticks; }
    [[nodiscard]] std::uint64_t time() const noexcept { return now_; }
    [[nodiscard]] bool in_callback() const noexcept { return in_callback_; }

    /// Receives every trapped event, relevant or not.
    void set_event_observer(GuardCallback observer) { observer_ = std::move(observer); }
    void set_deliver_irrelevant(bool on) noexcept { config_.deliver_irrelevant = on; }

    [[nodiscard]] const CostModel& costs() const noexcept { return config_.costs; }
    void set_costs(const CostModel& costs);
    [[nodiscard]] const CostLedger& ledger() const noexcept { return ledger_; }
    [[nodiscard]] std::uint64_t guest_frames() const noexcept { return entries_.size(); }
    /// Bumped by every host write and every SLAT remap; translation caches
    /// compare against it.
    [[nodiscard]] std::uint64_t generation() const noexcept { return generation_; }

private:
    static constexpr std::uint64_t kUnmapped = ~0ULL;

    SlatEntry& mapped_entry(std::uint64_t gfn);
    void transform(std::uint64_t gfn, std::uint64_t offset, std::span<std::uint8_t> bytes) const;
    void load(std::uint64_t gfn, std::uint64_t offset, std::span<std::uint8_t> out) const;
    void store(std::uint64_t gfn, std::uint64_t offset, std::span<const std::uint8_t> in);

    SlatConfig config_;
    HostMemory host_;
    std::vector<SlatEntry> entries_;
    std::vector<std::uint64_t> encryption_keys_; // 0 = plaintext
    std::vector<std::unique_ptr<PageGuard>> guards_; // index = id - 1, null when removed
    std::size_t live_guards_ = 0;
    std::int64_t vmexit_ns_ = 0;
    std::int64_t baseline_ns_ = 0;
    std::uint64_t now_ = 0;
    std::uint64_t sequence_ = 0;
    std::uint64_t generation_ = 0;
    bool in_callback_ = false;
    GuardCallback observer_;
    CostLedger ledger_;
};

} // namespace vic
