#include "vic/machine.hpp"

#include <algorithm>
#include <cmath>

namespace vic {

GuestMachine::GuestMachine(MachineConfig config)
    : config_(config),
      frames_(config.guest_ram_bytes),
      slat_(SlatConfig{config.guest_ram_bytes / kPage4K, config.spare_host_frames, true,
                       config.deliver_irrelevant, config.costs}),
      table_frames_(config.guest_ram_bytes / kPage4K, false)
{
}

GuestPhysAddr GuestMachine::alloc_frame(PageSize size_class)
{
    const GuestPhysAddr base = frames_.alloc(size_class);
    const std::uint64_t count = bytes_of(size_class) / kPage4K;
    for (std::uint64_t i = 0; i < count; ++i) {
        if (slat_.is_mapped(base.gfn() + i)) {
            slat_.zero_frame(base.gfn() + i);
        }
    }
    return base;
}

const ProcessContext& GuestMachine::create_process(const std::string& name)
{
    for (const auto& [pid, p] : processes_) {
        if (p.name == name) {
            fail(ErrorCode::DuplicateProcess, name);
        }
    }
    ProcessContext ctx;
    ctx.pid = next_pid_++;
    ctx.name = name;
    ctx.page_directory_base = alloc_frame(PageSize::k4K);
    table_frames_[ctx.page_directory_base.gfn()] = true;
    return processes_.emplace(ctx.pid, ctx).first->second;
}

const ProcessContext& GuestMachine::process(std::uint32_t pid) const
{
    auto it = processes_.find(pid);
    if (it == processes_.end()) {
        fail(ErrorCode::NoSuchProcess, "pid " + std::to_string(pid));
    }
    return it->second;
}

const ProcessContext& GuestMachine::process_by_name(const std::string& name) const
{
    for (const auto& [pid, p] : processes_) {
        if (p.name == name) {
            return p;
        }
    }
    fail(ErrorCode::NoSuchProcess, name);
}

std::vector<ProcessContext> GuestMachine::processes() const
{
    std::vector<ProcessContext> out;
    for (const auto& [pid, p] : processes_) {
        out.push_back(p);
    }
    return out;
}

std::uint64_t GuestMachine::read_table(GuestPhysAddr gpa) const
{
    std::array<std::uint8_t, 8> raw{};
    slat_.host_read(gpa, raw);
    return std::bit_cast<std::uint64_t>(raw);
}

void GuestMachine::write_table(GuestPhysAddr gpa, std::uint64_t raw)
{
    slat_.host_write(gpa, std::bit_cast<std::array<std::uint8_t, 8>>(raw));
}

void GuestMachine::map_page(const ProcessContext& proc, GuestVirtAddr gva, GuestPhysAddr gpa, PageSize size,
                            PagePerms perms)
{
    if (!gva.is_canonical()) {
        fail(ErrorCode::NonCanonicalAddress, "map_page on a non-canonical gva");
    }
    const std::uint64_t bytes = bytes_of(size);
    if (gva.value % bytes != 0 || gpa.value % bytes != 0) {
        fail(ErrorCode::Misaligned, "gva/gpa not aligned to " + to_string(size));
    }
    const int leaf_level = size == PageSize::k4K ? 1 : (size == PageSize::k2M ? 2 : 3);
    const WalkIndexes idx = walk_indexes(gva);
    GuestPhysAddr table = proc.page_directory_base;
    for (int level = 4; level > leaf_level; --level) {
        const GuestPhysAddr slot = table + idx.index[4 - level] * 8ULL;
        PageTableEntry e = PageTableEntry::decode(read_table(slot));
        if (e.present && e.leaf) {
            fail(ErrorCode::AlreadyMapped, "a larger page already covers this gva");
        }
        if (!e.present) {
            e = PageTableEntry{true, alloc_frame(PageSize::k4K), false, true, true};
            table_frames_[e.frame.gfn()] = true;
            write_table(slot, e.encode());
        }
        table = e.frame;
    }
    const GuestPhysAddr slot = table + idx.index[4 - leaf_level] * 8ULL;
    if (PageTableEntry::decode(read_table(slot)).present) {
        fail(ErrorCode::AlreadyMapped, "gva already mapped; unmap it first");
    }
    const PageTableEntry leaf{true, gpa, leaf_level != 1, perms.writable, perms.executable};
    write_table(slot, leaf.encode());
}

PageSize GuestMachine::unmap_page(const ProcessContext& proc, GuestVirtAddr gva)
{
    if (!gva.is_canonical()) {
        fail(ErrorCode::NonCanonicalAddress, "unmap_page on a non-canonical gva");
    }
    const WalkIndexes idx = walk_indexes(gva);
    GuestPhysAddr table = proc.page_directory_base;
    for (int level = 4; level >= 1; --level) {
        const GuestPhysAddr slot = table + idx.index[4 - level] * 8ULL;
        const PageTableEntry e = PageTableEntry::decode(read_table(slot));
        if (!e.present) {
            fail(ErrorCode::PageNotPresent, "no entry at level " + std::to_string(level), level);
        }
        if (level == 1 || (e.leaf && level <= 3)) {
            write_table(slot, 0);
            return level == 1 ? PageSize::k4K : (level == 2 ? PageSize::k2M : PageSize::k1G);
        }
        table = e.frame;
    }
    fail(ErrorCode::PageNotPresent, "walk fell through", 1);
}

TranslationResult GuestMachine::translate(const ProcessContext& proc, GuestVirtAddr gva) const
{
    return walk(proc.page_directory_base, gva, [this](GuestPhysAddr gpa) { return read_table(gpa); });
}

TranslationResult GuestMachine::cached_translate(const ProcessContext& proc, GuestVirtAddr gva) const
{
    const std::uint64_t vpn = gva.value >> 12;
    TlbEntry& e = tlb_[(vpn ^ (proc.page_directory_base.value >> 12)) % kTlbEntries];
    const std::uint64_t gen = slat_.generation();
    if (e.root == proc.page_directory_base.value && e.vpn == vpn && e.generation == gen) {
        TranslationResult r = e.result;
        r.gpa = GuestPhysAddr{(r.gpa.value & ~(kPage4K - 1)) | (gva.value & (kPage4K - 1))};
        return r;
    }
    const TranslationResult r = translate(proc, gva);
    e = TlbEntry{proc.page_directory_base.value, vpn, gen, r};
    return r;
}

void GuestMachine::split(const ProcessContext& proc, GuestVirtAddr gva, std::size_t len, AccessKind kind,
                         std::vector<Piece>& pieces) const
{
    pieces.clear();
    std::size_t done = 0;
    while (done < len) {
        const GuestVirtAddr cur = gva + done;
        const TranslationResult tr = cached_translate(proc, cur);
        if (kind == AccessKind::Write && !tr.writable) {
            fail(ErrorCode::WriteProtected, "write to a read-only mapping");
        }
        if (kind == AccessKind::Execute && !tr.executable) {
            fail(ErrorCode::ExecuteProtected, "fetch from a no-execute mapping");
        }
        const std::size_t in_frame = kPage4K - (tr.gpa.value & (kPage4K - 1));
        const std::size_t n = std::min(in_frame, len - done);
        pieces.push_back(Piece{cur, tr.gpa, done, n});
        done += n;
    }
}

void GuestMachine::access(const ProcessContext& proc, GuestVirtAddr gva, AccessKind kind,
                          std::span<std::uint8_t> data)
{
    if (slat_.in_callback()) {
        fail(ErrorCode::RecursiveGuestEntry, "guard callbacks must not run guest code");
    }
    if (data.empty()) {
        return;
    }
    split(proc, gva, data.size(), kind, scratch_);
    if (kind == AccessKind::Write) {
        for (const Piece& p : scratch_) {
            if (table_frames_[p.gpa.gfn()]) {
                // The guest is editing its own page tables.
                tlb_.fill(TlbEntry{});
            }
        }
    }
    for (const Piece& p : scratch_) {
        const AccessOutcome outcome =
            slat_.access(AccessRequest{proc.pid, p.gva, p.gpa, kind}, data.subspan(p.offset, p.len));
        charge(outcome);
    }
}

void GuestMachine::charge(const AccessOutcome& outcome)
{
    if (outcome.trapped) {
        const auto second = static_cast<std::size_t>((sim_time_ns_ - epoch_ns_) / 1e9);
        if (trapped_per_second_.size() <= second) {
            trapped_per_second_.resize(second + 1, 0);
        }
        ++trapped_per_second_[second];
        if (slat_.costs().tsc_offset_enabled) {
            hidden_ns_ += outcome.cost_ns - slat_.costs().baseline_ns();
        }
    }
    sim_time_ns_ += static_cast<double>(outcome.cost_ns);
    tick_charged_ns_ += outcome.cost_ns;
}

void GuestMachine::guest_read(const ProcessContext& proc, GuestVirtAddr gva, std::span<std::uint8_t> out)
{
    access(proc, gva, AccessKind::Read, out);
}

std::vector<std::uint8_t> GuestMachine::guest_read(const ProcessContext& proc, GuestVirtAddr gva, std::size_t len)
{
    std::vector<std::uint8_t> out(len);
    access(proc, gva, AccessKind::Read, out);
    return out;
}

void GuestMachine::guest_write(const ProcessContext& proc, GuestVirtAddr gva, std::span<const std::uint8_t> bytes)
{
    // The funnel takes a mutable span; writes only read from it.
    access(proc, gva, AccessKind::Write,
           std::span<std::uint8_t>(const_cast<std::uint8_t*>(bytes.data()), bytes.size()));
}

void GuestMachine::guest_execute(const ProcessContext& proc, GuestVirtAddr gva)
{
    std::array<std::uint8_t, 1> opcode{};
    access(proc, gva, AccessKind::Execute, opcode);
}

void GuestMachine::host_read_virtual(const ProcessContext& proc, GuestVirtAddr gva, std::span<std::uint8_t> out) const
{
    std::size_t done = 0;
    while (done < out.size()) {
        const GuestVirtAddr cur = gva + done;
        const TranslationResult tr = translate(proc, cur);
        const std::size_t n = std::min<std::size_t>(kPage4K - (tr.gpa.value & (kPage4K - 1)), out.size() - done);
        slat_.host_read(tr.gpa, out.subspan(done, n));
        done += n;
    }
}

void GuestMachine::host_write_virtual(const ProcessContext& proc, GuestVirtAddr gva, std::span<const std::uint8_t> in)
{
    // Translate every piece first so a failing page leaves memory untouched.
    std::vector<std::pair<GuestPhysAddr, std::pair<std::size_t, std::size_t>>> pieces;
    std::size_t done = 0;
    while (done < in.size()) {
        const GuestVirtAddr cur = gva + done;
        const TranslationResult tr = translate(proc, cur);
        const std::size_t n = std::min<std::size_t>(kPage4K - (tr.gpa.value & (kPage4K - 1)), in.size() - done);
        pieces.push_back({tr.gpa, {done, n}});
        done += n;
    }
    for (const auto& [gpa, range] : pieces) {
        slat_.host_write(gpa, in.subspan(range.first, range.second));
    }
}

void GuestMachine::inspect_virtual(const ProcessContext& proc, GuestVirtAddr gva, std::span<std::uint8_t> out) const
{
    std::size_t done = 0;
    while (done < out.size()) {
        const GuestVirtAddr cur = gva + done;
        const TranslationResult tr = translate(proc, cur);
        const std::size_t n = std::min<std::size_t>(kPage4K - (tr.gpa.value & (kPage4K - 1)), out.size() - done);
        slat_.inspect(tr.gpa, out.subspan(done, n));
        done += n;
    }
}

void GuestMachine::cpuid()
{
    if (slat_.in_callback()) {
        fail(ErrorCode::RecursiveGuestEntry, "guard callbacks must not run guest code");
    }
    const std::int64_t cost = slat_.costs().vmexit_ns();
    if (slat_.costs().tsc_offset_enabled) {
        hidden_ns_ += cost - slat_.costs().baseline_ns();
    }
    sim_time_ns_ += static_cast<double>(cost);
    tick_charged_ns_ += cost;
}

void GuestMachine::charge_work(std::int64_t ns)
{
    sim_time_ns_ += static_cast<double>(ns);
    tick_charged_ns_ += ns;
}

void GuestMachine::begin_tick()
{
    tick_start_ns_ = sim_time_ns_;
    tick_charged_ns_ = 0;
}

double GuestMachine::end_tick(double budget_ns)
{
    const double used = sim_time_ns_ - tick_start_ns_;
    if (used < budget_ns) {
        sim_time_ns_ = tick_start_ns_ + budget_ns;
    }
    return sim_time_ns_ - tick_start_ns_;
}

bool GuestMachine::try_attach_session() noexcept
{
    if (session_attached_) {
        return false;
    }
    session_attached_ = true;
    return true;
}

} // namespace vic
