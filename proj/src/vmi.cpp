#include "vic/vmi.hpp"

#include <algorithm>

namespace vic {

std::uint32_t spp_bitmap_for(std::uint64_t offset, std::uint64_t len)
{
    std::uint32_t bitmap = 0;
    if (len == 0) {
        return bitmap;
    }
    for (std::uint64_t sub = offset / 128; sub <= (offset + len - 1) / 128 && sub < 32; ++sub) {
        bitmap |= 1U << sub;
    }
    return bitmap;
}

VmiSession::VmiSession(GuestMachine& guest) : guest_(guest)
{
    if (!guest_.try_attach_session()) {
        fail(ErrorCode::SessionBusy, "guest already has an introspection session");
    }
}

VmiSession::~VmiSession()
{
    for (const auto& [id, w] : watches_) {
        for (GuardId g : w.handle.guards) {
            try {
                guest_.slat().remove_guard(g);
            } catch (const SimError&) {
            }
        }
    }
    guest_.detach_session();
}

const ProcessContext& VmiSession::resolve(const std::string& process_name)
{
    auto it = directory_.find(process_name);
    if (it != directory_.end()) {
        return it->second;
    }
    return directory_.emplace(process_name, guest_.process_by_name(process_name)).first->second;
}

void VmiSession::read_into(const std::string& process_name, GuestVirtAddr gva, std::span<std::uint8_t> out)
{
    const ProcessContext& proc = resolve(process_name);
    ++host_reads_;
    guest_.host_read_virtual(proc, gva, out);
}

std::vector<std::uint8_t> VmiSession::read(const std::string& process_name, GuestVirtAddr gva, std::size_t len)
{
    std::vector<std::uint8_t> out(len);
    read_into(process_name, gva, out);
    return out;
}

void VmiSession::write(const std::string& process_name, GuestVirtAddr gva, std::span<const std::uint8_t> bytes)
{
    const ProcessContext& proc = resolve(process_name);
    ++host_writes_;
    guest_.host_write_virtual(proc, gva, bytes);
}

WatchHandle VmiSession::register_watch(const std::string& process_name, GuestVirtAddr gva, std::uint64_t len,
                                       WatchCallback callback, WatchOptions options)
{
    if (len == 0 || len > kPage4K) {
        fail(ErrorCode::PreconditionFailed, "watch length must be in 1..=4096");
    }
    const ProcessContext& proc = resolve(process_name);

    // One guard per distinct guest page touched by the watched bytes.
    struct Span {
        std::uint64_t guard_gfn;
        PageSize size;
        std::uint64_t offset;
        std::uint64_t len;
    };
    std::vector<Span> spans;
    std::uint64_t done = 0;
    while (done < len) {
        const GuestVirtAddr cur = gva + done;
        const TranslationResult tr = guest_.translate(proc, cur);
        const std::uint64_t page = bytes_of(tr.page_size);
        const std::uint64_t page_base = tr.gpa.value & ~(page - 1);
        const std::uint64_t off = tr.gpa.value - page_base;
        const std::uint64_t n = std::min(page - off, len - done);
        if (options.use_spp && tr.page_size != PageSize::k4K) {
            fail(ErrorCode::HugePageUnsupported, "sub-page protection requires 4 KiB mappings");
        }
        spans.push_back(Span{page_base / kPage4K, tr.page_size, off, n});
        done += n;
    }

    const std::uint32_t id = next_watch_++;
    WatchHandle handle;
    handle.watch_id = id;
    handle.pid = proc.pid;
    handle.gva = gva;
    handle.len = len;
    handle.uses_spp = options.use_spp;

    Slat& slat = guest_.slat();
    auto enqueue = [this, id](const MemoryEvent& ev) {
        queue_.emplace(std::make_pair(ev.timestamp, ev.sequence), DeliveredEvent{id, ev});
    };
    try {
        for (const Span& s : spans) {
            const GuardId g =
                slat.set_page_guard(s.guard_gfn, {WatchRange{s.offset, s.len}}, options.kinds, enqueue, s.size);
            handle.guards.push_back(g);
            if (options.use_spp) {
                slat.set_spp_bitmap(g, spp_bitmap_for(s.offset, s.len));
            }
        }
    } catch (...) {
        for (GuardId g : handle.guards) {
            slat.remove_guard(g);
        }
        throw;
    }
    watches_.emplace(id, Watch{handle, std::move(callback)});
    return handle;
}

void VmiSession::unregister_watch(const WatchHandle& handle)
{
    auto it = watches_.find(handle.watch_id);
    if (it == watches_.end()) {
        fail(ErrorCode::NoSuchGuard, "watch " + std::to_string(handle.watch_id));
    }
    for (GuardId g : it->second.handle.guards) {
        guest_.slat().remove_guard(g);
    }
    watches_.erase(it);
}

void VmiSession::deliver_upto(std::uint64_t t, std::vector<DeliveredEvent>& out)
{
    while (!queue_.empty() && queue_.begin()->first.first <= t) {
        DeliveredEvent ev = std::move(queue_.begin()->second);
        queue_.erase(queue_.begin());
        auto it = watches_.find(ev.watch_id);
        if (it == watches_.end()) {
            continue;
        }
        if (it->second.callback) {
            it->second.callback(ev.event);
        }
        out.push_back(std::move(ev));
    }
}

std::vector<DeliveredEvent> VmiSession::pump_events(std::uint64_t max_logical_time)
{
    if (pumping_) {
        fail(ErrorCode::RecursiveGuestEntry, "pump_events re-entered from a callback");
    }
    pumping_ = true;
    std::vector<DeliveredEvent> delivered;
    try {
        while (driver_ && guest_.logical_time() < max_logical_time) {
            driver_();
            deliver_upto(std::min(guest_.logical_time(), max_logical_time), delivered);
        }
        deliver_upto(max_logical_time, delivered);
    } catch (...) {
        pumping_ = false;
        throw;
    }
    pumping_ = false;
    return delivered;
}

} // namespace vic
