#pragma once

// Guest paging: x86-64-like four-level tables with a 9/9/9/9/12 split,
// 48-bit canonical virtual addresses and 2 MiB / 1 GiB leaf entries.
// Table frames live in guest-physical memory; the walker reads them through
// a caller-supplied physical reader so it can run on either side of the
// hypervisor boundary.

#include "vic/error.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace vic {

inline constexpr std::uint64_t kPage4K = 0x1000;
inline constexpr std::uint64_t kPage2M = 0x200000;
inline constexpr std::uint64_t kPage1G = 0x40000000;

enum class PageSize : std::uint8_t { k4K, k2M, k1G };

constexpr std::uint64_t bytes_of(PageSize size) noexcept
{
    switch (size) {
    case PageSize::k4K: return kPage4K;
    case PageSize::k2M: return kPage2M;
    case PageSize::k1G: return kPage1G;
    }
    return kPage4K;
}

std::string to_string(PageSize size);

struct GuestVirtAddr {
    std::uint64_t value = 0;

    /// Bits 48..63 must replicate bit 47.
    [[nodiscard]] constexpr bool is_canonical() const noexcept
    {
        const std::uint64_t upper = value >> 47;
        return upper == 0 || upper == 0x1FFFF;
    }
    constexpr GuestVirtAddr operator+(std::uint64_t off) const noexcept { return {value + off}; }
    friend constexpr bool operator==(GuestVirtAddr, GuestVirtAddr) = default;
    friend constexpr auto operator<=>(GuestVirtAddr, GuestVirtAddr) = default;
};

struct GuestPhysAddr {
    std::uint64_t value = 0;

    [[nodiscard]] constexpr std::uint64_t gfn() const noexcept { return value >> 12; }
    constexpr GuestPhysAddr operator+(std::uint64_t off) const noexcept { return {value + off}; }
    friend constexpr bool operator==(GuestPhysAddr, GuestPhysAddr) = default;
    friend constexpr auto operator<=>(GuestPhysAddr, GuestPhysAddr) = default;
};

struct PagePerms {
    bool writable = true;
    bool executable = false;
};

/// Decoded view of one 64-bit table entry. Bit layout follows x86-64:
/// P=0, RW=1, PS=7, frame in 12..51, NX=63.
struct PageTableEntry {
    bool present = false;
    GuestPhysAddr frame{};
    bool leaf = false;
    bool writable = false;
    bool executable = false;

    [[nodiscard]] std::uint64_t encode() const noexcept;
    static PageTableEntry decode(std::uint64_t raw) noexcept;
};

struct ProcessContext {
    std::uint32_t pid = 0;
    GuestPhysAddr page_directory_base{};
    std::string name;
};

struct TranslationResult {
    GuestPhysAddr gpa{};
    PageSize page_size = PageSize::k4K;
    bool writable = false;
    bool executable = false;
};

/// Table indexes for levels 4, 3, 2, 1 (in that order) plus the 12-bit offset.
struct WalkIndexes {
    std::array<std::uint16_t, 4> index{};
    std::uint16_t offset = 0;
};

constexpr WalkIndexes walk_indexes(GuestVirtAddr gva) noexcept
{
    WalkIndexes w;
    w.index[0] = static_cast<std::uint16_t>((gva.value >> 39) & 0x1FF);
    w.index[1] = static_cast<std::uint16_t>((gva.value >> 30) & 0x1FF);
    w.index[2] = static_cast<std::uint16_t>((gva.value >> 21) & 0x1FF);
    w.index[3] = static_cast<std::uint16_t>((gva.value >> 12) & 0x1FF);
    w.offset = static_cast<std::uint16_t>(gva.value & 0xFFF);
    return w;
}

/// Guest-physical frame allocator. Frames are handed out first-fit at the
/// lowest address that satisfies the requested alignment.
class FrameAllocator {
public:
    explicit FrameAllocator(std::uint64_t guest_ram_bytes);

    GuestPhysAddr alloc(PageSize size_class);
    void free(GuestPhysAddr base, PageSize size_class);

    [[nodiscard]] std::uint64_t ram_bytes() const noexcept { return ram_bytes_; }
    [[nodiscard]] bool is_allocated(GuestPhysAddr gpa) const;
    [[nodiscard]] std::uint64_t allocated_frames() const noexcept { return allocated_; }

private:
    std::uint64_t ram_bytes_;
    std::vector<bool> used_;
    std::uint64_t low_water_ = 0;
    std::uint64_t allocated_ = 0;
};

/// Walks the four-level tables rooted at `root`. Throws PageNotPresent with
/// the failing level, or NonCanonicalAddress.
template <typename ReadU64>
TranslationResult walk(GuestPhysAddr root, GuestVirtAddr gva, ReadU64&& read_u64)
{
    if (!gva.is_canonical()) {
        fail(ErrorCode::NonCanonicalAddress, "gva is not canonical");
    }
    const WalkIndexes idx = walk_indexes(gva);
    GuestPhysAddr table = root;
    bool writable = true;
    bool executable = true;
    for (int i = 0; i < 4; ++i) {
        const int level = 4 - i;
        const PageTableEntry e = PageTableEntry::decode(read_u64(table + idx.index[i] * 8ULL));
        if (!e.present) {
            fail(ErrorCode::PageNotPresent, "no entry at level " + std::to_string(level), level);
        }
        writable = writable && e.writable;
        executable = executable && e.executable;
        if (e.leaf && (level == 3 || level == 2)) {
            const PageSize size = level == 3 ? PageSize::k1G : PageSize::k2M;
            const std::uint64_t mask = bytes_of(size) - 1;
            return {GuestPhysAddr{e.frame.value | (gva.value & mask)}, size, writable, executable};
        }
        if (level == 1) {
            return {GuestPhysAddr{e.frame.value | idx.offset}, PageSize::k4K, writable, executable};
        }
        table = e.frame;
    }
    fail(ErrorCode::PageNotPresent, "walk fell through", 1);
}

} // namespace vic
