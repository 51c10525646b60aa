#include "vic/paging.hpp"

namespace vic {

namespace {

constexpr std::uint64_t kPresent = 1ULL << 0;
constexpr std::uint64_t kWritable = 1ULL << 1;
constexpr std::uint64_t kLeaf = 1ULL << 7;
constexpr std::uint64_t kNoExecute = 1ULL << 63;
constexpr std::uint64_t kFrameMask = 0x000FFFFFFFFFF000ULL;

} // namespace

std::string to_string(PageSize size)
{
    switch (size) {
    case PageSize::k4K: return "4KiB";
    case PageSize::k2M: return "2MiB";
    case PageSize::k1G: return "1GiB";
    }
    return "?";
}

std::uint64_t PageTableEntry::encode() const noexcept
{
    if (!present) {
        return 0;
    }
    std::uint64_t raw = kPresent | (frame.value & kFrameMask);
    if (writable) {
        raw |= kWritable;
    }
    if (leaf) {
        raw |= kLeaf;
    }
    if (!executable) {
        raw |= kNoExecute;
    }
    return raw;
}

PageTableEntry PageTableEntry::decode(std::uint64_t raw) noexcept
{
    PageTableEntry e;
    e.present = (raw & kPresent) != 0;
    if (!e.present) {
        return e;
    }
    e.frame = GuestPhysAddr{raw & kFrameMask};
    e.writable = (raw & kWritable) != 0;
    e.leaf = (raw & kLeaf) != 0;
    e.executable = (raw & kNoExecute) == 0;
    return e;
}

FrameAllocator::FrameAllocator(std::uint64_t guest_ram_bytes)
    : ram_bytes_(guest_ram_bytes), used_(guest_ram_bytes / kPage4K, false)
{
    if (guest_ram_bytes == 0 || guest_ram_bytes % kPage4K != 0) {
        fail(ErrorCode::InvalidArgument, "guest RAM must be a non-zero multiple of 4 KiB");
    }
}

GuestPhysAddr FrameAllocator::alloc(PageSize size_class)
{
    const std::uint64_t frames = bytes_of(size_class) / kPage4K;
    const std::uint64_t total = used_.size();
    std::uint64_t start = (low_water_ + frames - 1) / frames * frames;
    while (start + frames <= total) {
        std::uint64_t busy = frames;
        for (std::uint64_t i = 0; i < frames; ++i) {
            if (used_[start + i]) {
                busy = i;
                break;
            }
        }
        if (busy == frames) {
            for (std::uint64_t i = 0; i < frames; ++i) {
                used_[start + i] = true;
            }
            allocated_ += frames;
            if (frames == 1 && start == low_water_) {
                while (low_water_ < total && used_[low_water_]) {
                    ++low_water_;
                }
            }
            return GuestPhysAddr{start * kPage4K};
        }
        start += frames;
    }
    fail(ErrorCode::OutOfGuestMemory, "no free " + to_string(size_class) + " frame");
}

void FrameAllocator::free(GuestPhysAddr base, PageSize size_class)
{
    const std::uint64_t frames = bytes_of(size_class) / kPage4K;
    const std::uint64_t first = base.value / kPage4K;
    if (base.value % bytes_of(size_class) != 0 || first + frames > used_.size()) {
        fail(ErrorCode::Misaligned, "free of an invalid frame");
    }
    for (std::uint64_t i = 0; i < frames; ++i) {
        if (used_[first + i]) {
            used_[first + i] = false;
            --allocated_;
        }
    }
    if (first < low_water_) {
        low_water_ = first;
    }
}

bool FrameAllocator::is_allocated(GuestPhysAddr gpa) const
{
    const std::uint64_t frame = gpa.value / kPage4K;
    return frame < used_.size() && used_[frame];
}

} // namespace vic
