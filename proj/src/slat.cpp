#include "vic/slat.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace vic {

namespace {

constexpr std::uint64_t kSubPage = 128;

std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

bool intersects(const std::vector<WatchRange>& ranges, std::uint64_t off, std::uint64_t len) noexcept
{
    return std::any_of(ranges.begin(), ranges.end(), [&](const WatchRange& r) {
        return off < r.offset + r.len && r.offset < off + len;
    });
}

class CallbackScope {
public:
    explicit CallbackScope(bool& flag) : flag_(flag) { flag_ = true; }
    ~CallbackScope() { flag_ = false; }
    CallbackScope(const CallbackScope&) = delete;
    CallbackScope& operator=(const CallbackScope&) = delete;

private:
    bool& flag_;
};

} // namespace

const char* to_string(AccessKind kind) noexcept
{
    switch (kind) {
    case AccessKind::Read: return "read";
    case AccessKind::Write: return "write";
    case AccessKind::Execute: return "execute";
    }
    return "?";
}

std::int64_t CostModel::vmexit_ns() const
{
    return std::llround(vmexit_cost_us * 1000.0);
}

std::int64_t CostModel::baseline_ns() const
{
    return std::llround(baseline_access_cost_us * 1000.0);
}

void CostModel::validate() const
{
    if (!(baseline_access_cost_us >= 0.0) || !(vmexit_cost_us >= baseline_access_cost_us)) {
        fail(ErrorCode::InvalidArgument, "cost model requires vmexit_cost_us >= baseline_access_cost_us >= 0");
    }
}

HostMemory::HostMemory(std::uint64_t frames) : frames_(frames) {}

void HostMemory::read(std::uint64_t host_frame, std::uint64_t offset, std::span<std::uint8_t> out) const
{
    const auto& f = frames_.at(host_frame);
    if (!f) {
        std::fill(out.begin(), out.end(), std::uint8_t{0});
        return;
    }
    std::memcpy(out.data(), f->data() + offset, out.size());
}

void HostMemory::write(std::uint64_t host_frame, std::uint64_t offset, std::span<const std::uint8_t> in)
{
    auto& f = frames_.at(host_frame);
    if (!f) {
        f = std::make_unique<Frame>();
        f->fill(0);
    }
    std::memcpy(f->data() + offset, in.data(), in.size());
}

void HostMemory::zero(std::uint64_t host_frame)
{
    frames_.at(host_frame).reset();
}

Slat::Slat(SlatConfig config)
    : config_(config),
      host_(config.guest_frames + config.spare_host_frames),
      entries_(config.guest_frames),
      encryption_keys_(config.guest_frames, 0)
{
    config_.costs.validate();
    vmexit_ns_ = config_.costs.vmexit_ns();
    baseline_ns_ = config_.costs.baseline_ns();
    for (std::uint64_t gfn = 0; gfn < entries_.size(); ++gfn) {
        entries_[gfn].gfn = gfn;
        entries_[gfn].host_frame = kUnmapped;
        if (config_.identity_map) {
            entries_[gfn].host_frame = gfn;
            entries_[gfn].perms = KindSet::all();
        }
    }
}

void Slat::set_costs(const CostModel& costs)
{
    costs.validate();
    config_.costs = costs;
    vmexit_ns_ = costs.vmexit_ns();
    baseline_ns_ = costs.baseline_ns();
}

void Slat::slat_map(std::uint64_t gfn, std::uint64_t host_frame, KindSet perms)
{
    ++generation_;
    if (gfn >= entries_.size() || host_frame >= host_.frames()) {
        fail(ErrorCode::InvalidArgument, "gfn or host frame out of range");
    }
    if (entries_[gfn].host_frame != kUnmapped) {
        fail(ErrorCode::DuplicateMapping, "gfn " + std::to_string(gfn) + " already mapped");
    }
    entries_[gfn].host_frame = host_frame;
    entries_[gfn].perms = perms;
}

void Slat::slat_unmap(std::uint64_t gfn)
{
    ++generation_;
    SlatEntry& e = mapped_entry(gfn);
    if (!e.guards.empty()) {
        fail(ErrorCode::InvalidArgument, "cannot unmap a guarded frame");
    }
    e.host_frame = kUnmapped;
    e.perms = KindSet{};
}

bool Slat::is_mapped(std::uint64_t gfn) const
{
    return gfn < entries_.size() && entries_[gfn].host_frame != kUnmapped;
}

const SlatEntry& Slat::entry(std::uint64_t gfn) const
{
    if (!is_mapped(gfn)) {
        fail(ErrorCode::UnmappedFrame, "gfn " + std::to_string(gfn) + " has no SLAT entry");
    }
    return entries_[gfn];
}

SlatEntry& Slat::mapped_entry(std::uint64_t gfn)
{
    if (!is_mapped(gfn)) {
        fail(ErrorCode::UnmappedFrame, "gfn " + std::to_string(gfn) + " has no SLAT entry");
    }
    return entries_[gfn];
}

KindSet Slat::effective_perms(std::uint64_t gfn) const
{
    const SlatEntry& e = entry(gfn);
    KindSet guarded;
    for (GuardId id : e.guards) {
        guarded = guarded | guards_[id - 1]->kinds;
    }
    return e.perms - guarded;
}

GuardId Slat::set_page_guard(std::uint64_t gfn, std::vector<WatchRange> ranges, KindSet kinds,
                             GuardCallback callback, PageSize frame_size)
{
    const std::uint64_t frames = bytes_of(frame_size) / kPage4K;
    if (gfn % frames != 0) {
        fail(ErrorCode::Misaligned, "guard frame not aligned to its size");
    }
    for (std::uint64_t i = 0; i < frames; ++i) {
        if (!is_mapped(gfn + i)) {
            fail(ErrorCode::UnmappedFrame, "gfn " + std::to_string(gfn + i) + " has no SLAT entry");
        }
    }
    for (const auto& r : ranges) {
        if (r.len == 0 || r.offset + r.len > bytes_of(frame_size)) {
            fail(ErrorCode::InvalidArgument, "watch range outside the guarded frame");
        }
    }
    auto g = std::make_unique<PageGuard>();
    g->id = static_cast<GuardId>(guards_.size() + 1);
    g->gfn = gfn;
    g->frame_size = frame_size;
    g->watch_ranges = std::move(ranges);
    g->kinds = kinds;
    g->callback = std::move(callback);
    const GuardId id = g->id;
    guards_.push_back(std::move(g));
    ++live_guards_;
    for (std::uint64_t i = 0; i < frames; ++i) {
        entries_[gfn + i].guards.push_back(id);
    }
    return id;
}

namespace {

PageGuard& guard_slot(std::vector<std::unique_ptr<PageGuard>>& guards, GuardId id)
{
    if (id == 0 || id > guards.size() || !guards[id - 1]) {
        fail(ErrorCode::NoSuchGuard, "guard " + std::to_string(id));
    }
    return *guards[id - 1];
}

} // namespace

void Slat::set_spp_bitmap(GuardId id, std::uint32_t bitmap)
{
    PageGuard& g = guard_slot(guards_, id);
    if (g.frame_size != PageSize::k4K) {
        fail(ErrorCode::HugePageUnsupported, "sub-page protection requires a 4 KiB frame");
    }
    g.spp_bitmap = bitmap;
}

void Slat::remove_guard(GuardId id)
{
    PageGuard& g = guard_slot(guards_, id);
    const std::uint64_t frames = bytes_of(g.frame_size) / kPage4K;
    for (std::uint64_t i = 0; i < frames; ++i) {
        auto& list = entries_[g.gfn + i].guards;
        list.erase(std::remove(list.begin(), list.end(), id), list.end());
    }
    guards_[id - 1].reset();
    --live_guards_;
}

const PageGuard& Slat::guard(GuardId id) const
{
    if (id == 0 || id > guards_.size() || !guards_[id - 1]) {
        fail(ErrorCode::NoSuchGuard, "guard " + std::to_string(id));
    }
    return *guards_[id - 1];
}

std::size_t Slat::guard_count() const noexcept
{
    return live_guards_;
}

void Slat::set_encrypted(std::uint64_t gfn, std::uint64_t key)
{
    SlatEntry& e = mapped_entry(gfn);
    // Re-store the current plaintext under the new key.
    std::array<std::uint8_t, kPage4K> plain{};
    load(gfn, 0, plain);
    encryption_keys_[e.gfn] = key == 0 ? 1 : key;
    store(gfn, 0, plain);
}

void Slat::zero_frame(std::uint64_t gfn)
{
    const SlatEntry& e = mapped_entry(gfn);
    if (encryption_keys_[gfn] == 0) {
        host_.zero(e.host_frame);
        return;
    }
    static const std::array<std::uint8_t, kPage4K> zeros{};
    store(gfn, 0, zeros);
}

bool Slat::is_encrypted(std::uint64_t gfn) const
{
    return gfn < encryption_keys_.size() && encryption_keys_[gfn] != 0;
}

void Slat::transform(std::uint64_t gfn, std::uint64_t offset, std::span<std::uint8_t> bytes) const
{
    const std::uint64_t key = encryption_keys_[gfn];
    std::uint64_t block = ~0ULL;
    std::uint64_t stream = 0;
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const std::uint64_t pos = offset + i;
        if ((pos >> 3) != block) {
            block = pos >> 3;
            stream = splitmix64(key ^ splitmix64((gfn << 9) | block));
        }
        bytes[i] ^= static_cast<std::uint8_t>(stream >> ((pos & 7) * 8));
    }
}

void Slat::load(std::uint64_t gfn, std::uint64_t offset, std::span<std::uint8_t> out) const
{
    host_.read(entries_[gfn].host_frame, offset, out);
    if (encryption_keys_[gfn] != 0) {
        transform(gfn, offset, out);
    }
}

void Slat::store(std::uint64_t gfn, std::uint64_t offset, std::span<const std::uint8_t> in)
{
    if (encryption_keys_[gfn] == 0) {
        host_.write(entries_[gfn].host_frame, offset, in);
        return;
    }
    std::vector<std::uint8_t> cipher(in.begin(), in.end());
    transform(gfn, offset, cipher);
    host_.write(entries_[gfn].host_frame, offset, cipher);
}

AccessOutcome Slat::access(const AccessRequest& req, std::span<std::uint8_t> data)
{
    const std::uint64_t gfn = req.gpa.gfn();
    const std::uint64_t off = req.gpa.value & (kPage4K - 1);
    const std::uint64_t len = data.size();
    if (len == 0 || off + len > kPage4K) {
        fail(ErrorCode::InvalidArgument, "access must lie within one 4 KiB frame");
    }
    if (!is_mapped(gfn)) {
        fail(ErrorCode::SlatViolationUnhandled, "gfn " + std::to_string(gfn) + " has no SLAT entry");
    }
    SlatEntry& e = entries_[gfn];

    bool trapped = false;
    bool relevant = false;
    std::array<GuardId, 8> notify{};
    std::size_t notify_count = 0;
    std::vector<GuardId> notify_overflow;
    for (GuardId id : e.guards) {
        const PageGuard& g = *guards_[id - 1];
        if (!g.kinds.contains(req.kind)) {
            continue;
        }
        if (g.spp_bitmap) {
            bool covered = false;
            for (std::uint64_t sub = off / kSubPage; sub <= (off + len - 1) / kSubPage; ++sub) {
                covered = covered || ((*g.spp_bitmap >> sub) & 1U) != 0;
            }
            if (!covered) {
                continue;
            }
        }
        trapped = true;
        const std::uint64_t guard_off = (gfn - g.gfn) * kPage4K + off;
        const bool hit = intersects(g.watch_ranges, guard_off, len);
        relevant = relevant || hit;
        if (hit || config_.deliver_irrelevant) {
            if (notify_count < notify.size()) {
                notify[notify_count++] = id;
            } else {
                notify_overflow.push_back(id);
            }
        }
    }
    if (!trapped && !e.perms.contains(req.kind)) {
        fail(ErrorCode::SlatViolationUnhandled,
             std::string(to_string(req.kind)) + " not permitted on gfn " + std::to_string(gfn));
    }

    const bool materialize = trapped && (notify_count > 0 || observer_);
    MemoryEvent event;
    if (materialize && req.kind == AccessKind::Write) {
        event.old_value.resize(len);
        load(gfn, off, event.old_value);
        event.new_value.assign(data.begin(), data.end());
    }

    // Emulate the access with the guard suspended; it is re-armed on return.
    if (req.kind == AccessKind::Write) {
        store(gfn, off, data);
    } else {
        load(gfn, off, data);
    }

    AccessOutcome outcome;
    outcome.trapped = trapped;
    outcome.relevant = relevant;
    if (!trapped) {
        outcome.cost_ns = baseline_ns_;
        ++ledger_.untrapped;
        ledger_.total_ns += baseline_ns_;
        return outcome;
    }

    outcome.cost_ns = vmexit_ns_;
    ++ledger_.trapped;
    ledger_.total_ns += vmexit_ns_;
    ++e.trapped_accesses;
    if (relevant) {
        ++ledger_.relevant;
    }
    if (!materialize) {
        ++sequence_;
        return outcome;
    }

    event.gpa = req.gpa;
    event.gva = req.gva;
    event.pid = req.pid;
    event.kind = req.kind;
    event.len = static_cast<std::uint32_t>(len);
    event.relevant = relevant;
    event.timestamp = now_;
    event.sequence = sequence_++;

    CallbackScope scope(in_callback_);
    if (observer_) {
        observer_(event);
    }
    for (std::size_t i = 0; i < notify_count; ++i) {
        const GuardId id = notify[i];
        if (id <= guards_.size() && guards_[id - 1] && guards_[id - 1]->callback) {
            guards_[id - 1]->callback(event);
        }
    }
    for (GuardId id : notify_overflow) {
        if (id <= guards_.size() && guards_[id - 1] && guards_[id - 1]->callback) {
            guards_[id - 1]->callback(event);
        }
    }
    return outcome;
}

void Slat::host_read(GuestPhysAddr gpa, std::span<std::uint8_t> out) const
{
    std::uint64_t done = 0;
    while (done < out.size()) {
        const GuestPhysAddr cur = gpa + done;
        const std::uint64_t off = cur.value & (kPage4K - 1);
        const std::uint64_t n = std::min<std::uint64_t>(kPage4K - off, out.size() - done);
        if (!is_mapped(cur.gfn())) {
            fail(ErrorCode::UnmappedFrame, "gfn " + std::to_string(cur.gfn()) + " has no SLAT entry");
        }
        host_.read(entries_[cur.gfn()].host_frame, off, out.subspan(done, n));
        done += n;
    }
}

void Slat::inspect(GuestPhysAddr gpa, std::span<std::uint8_t> out) const
{
    std::uint64_t done = 0;
    while (done < out.size()) {
        const GuestPhysAddr cur = gpa + done;
        const std::uint64_t off = cur.value & (kPage4K - 1);
        const std::uint64_t n = std::min<std::uint64_t>(kPage4K - off, out.size() - done);
        if (!is_mapped(cur.gfn())) {
            fail(ErrorCode::UnmappedFrame, "gfn " + std::to_string(cur.gfn()) + " has no SLAT entry");
        }
        load(cur.gfn(), off, out.subspan(done, n));
        done += n;
    }
}

void Slat::host_write(GuestPhysAddr gpa, std::span<const std::uint8_t> in)
{
    ++generation_;
    std::uint64_t done = 0;
    while (done < in.size()) {
        const GuestPhysAddr cur = gpa + done;
        const std::uint64_t off = cur.value & (kPage4K - 1);
        const std::uint64_t n = std::min<std::uint64_t>(kPage4K - off, in.size() - done);
        if (!is_mapped(cur.gfn())) {
            fail(ErrorCode::UnmappedFrame, "gfn " + std::to_string(cur.gfn()) + " has no SLAT entry");
        }
        host_.write(entries_[cur.gfn()].host_frame, off, in.subspan(done, n));
        done += n;
    }
}

} // namespace vic
