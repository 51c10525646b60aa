#pragma once

// Host-side introspection surface. Reads and writes go straight to host
// physical memory: they fire no guards and charge the guest nothing. Watches
// are page guards on the frame(s) containing the watched bytes; relevant
// events queue on the session and are handed to watch callbacks by
// pump_events in (timestamp, sequence) order.

#include "vic/machine.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace vic {

struct WatchHandle {
    std::uint32_t watch_id = 0;
    std::uint32_t pid = 0;
    GuestVirtAddr gva{};
    std::uint64_t len = 0;
    bool uses_spp = false;
    std::vector<GuardId> guards;
};

struct WatchOptions {
    bool use_spp = false;
    /// A watch behaves like a no-access page guard by default.
    KindSet kinds = KindSet::all();
};

using WatchCallback = std::function<void(const MemoryEvent&)>;

struct DeliveredEvent {
    std::uint32_t watch_id = 0;
    MemoryEvent event;
};

/// 128-byte sub-ranges of one 4 KiB frame touched by [offset, offset + len).
std::uint32_t spp_bitmap_for(std::uint64_t offset, std::uint64_t len);

class VmiSession {
public:
    /// Throws SessionBusy if another session holds the guest.
    explicit VmiSession(GuestMachine& guest);
    ~VmiSession();

    VmiSession(const VmiSession&) = delete;
    VmiSession& operator=(const VmiSession&) = delete;

    [[nodiscard]] const ProcessContext& resolve(const std::string& process_name);

    void read_into(const std::string& process_name, GuestVirtAddr gva, std::span<std::uint8_t> out);
    [[nodiscard]] std::vector<std::uint8_t> read(const std::string& process_name, GuestVirtAddr gva, std::size_t len);
    void write(const std::string& process_name, GuestVirtAddr gva, std::span<const std::uint8_t> bytes);

    template <typename T>
    T read_value(const std::string& process_name, GuestVirtAddr gva)
    {
        std::array<std::uint8_t, sizeof(T)> raw{};
        read_into(process_name, gva, raw);
        return std::bit_cast<T>(raw);
    }

    template <typename T>
    void write_value(const std::string& process_name, GuestVirtAddr gva, const T& value)
    {
        write(process_name, gva, std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(value));
    }

    WatchHandle register_watch(const std::string& process_name, GuestVirtAddr gva, std::uint64_t len,
                               WatchCallback callback, WatchOptions options = {});
    void unregister_watch(const WatchHandle& handle);
    [[nodiscard]] std::size_t active_watches() const noexcept { return watches_.size(); }

    /// Advances the co-simulation one driver step at a time until the guest's
    /// logical clock reaches `max_logical_time`, delivering queued events up
    /// to the current time after every step. Without a driver it only
    /// delivers what is already queued.
    std::vector<DeliveredEvent> pump_events(std::uint64_t max_logical_time);
    void set_driver(std::function<void()> step_one_tick) { driver_ = std::move(step_one_tick); }

    [[nodiscard]] std::uint64_t host_reads() const noexcept { return host_reads_; }
    [[nodiscard]] std::uint64_t host_writes() const noexcept { return host_writes_; }
    [[nodiscard]] std::size_t pending_events() const noexcept { return queue_.size(); }
    [[nodiscard]] GuestMachine& guest() noexcept { return guest_; }

private:
    struct Watch {
        WatchHandle handle;
        WatchCallback callback;
    };

    void deliver_upto(std::uint64_t t, std::vector<DeliveredEvent>& out);

    GuestMachine& guest_;
    std::map<std::string, ProcessContext> directory_;
    std::map<std::uint32_t, Watch> watches_;
    std::map<std::pair<std::uint64_t, std::uint64_t>, DeliveredEvent> queue_;
    std::function<void()> driver_;
    std::uint32_t next_watch_ = 1;
    std::uint64_t host_reads_ = 0;
    std::uint64_t host_writes_ = 0;
    bool pumping_ = false;
};

} // namespace vic
