#pragma once

// Virtual input device shared by the host and the guest. The host enqueues
// events; the game drains everything due at its current tick. The channel is
// the only path by which host-originated events reach the guest, and the
// origin tag never crosses into guest memory.

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vic {

enum class InputDevice : std::uint8_t { Mouse = 1, Keyboard = 2 };
enum class InputAction : std::uint8_t { ButtonDown = 1, ButtonUp = 2, KeyDown = 3, KeyUp = 4, Move = 5 };
enum class InputOrigin : std::uint8_t { Synthetic = 0, Scripted = 1 };

namespace button {
inline constexpr std::uint16_t kLeft = 1;
inline constexpr std::uint16_t kRight = 2;
inline constexpr std::uint16_t kMiddle = 3;
} // namespace button

/// What the guest sees.
struct GuestInputEvent {
    InputDevice device = InputDevice::Mouse;
    InputAction action = InputAction::Move;
    std::uint16_t code = 0;
    std::int16_t dx = 0;
    std::int16_t dy = 0;

    friend bool operator==(const GuestInputEvent&, const GuestInputEvent&) = default;
};

struct InputEvent {
    GuestInputEvent data;
    InputOrigin origin = InputOrigin::Scripted;

    static InputEvent mouse_button(std::uint16_t which, bool down, InputOrigin origin);
    static InputEvent mouse_move(std::int16_t dx, std::int16_t dy, InputOrigin origin);
    static InputEvent key(std::uint16_t code, bool down, InputOrigin origin);
};

/// 8-byte wire image handed to the guest: device, action, code, dx, dy.
std::array<std::uint8_t, 8> guest_bytes(const GuestInputEvent& ev) noexcept;
GuestInputEvent from_guest_bytes(const std::array<std::uint8_t, 8>& raw) noexcept;

/// Key names accepted on the QMP "qcode" path.
std::optional<std::uint16_t> qcode_to_code(std::string_view name);
std::optional<std::uint16_t> button_from_name(std::string_view name);

struct InjectedRecord {
    std::uint64_t timestamp = 0;
    InputEvent event;
};

class InputChannel {
public:
    explicit InputChannel(std::uint64_t latency_ticks = 0) : latency_(latency_ticks) {}

    /// Stamps the event with now + latency. Throws ChannelClosed.
    std::uint64_t inject(const InputEvent& ev);
    void inject_at(const InputEvent& ev, std::uint64_t tick);

    /// Every queued event stamped at or before `current_tick`, ordered by
    /// timestamp then enqueue order, origin stripped.
    std::vector<GuestInputEvent> poll(std::uint64_t current_tick);

    void set_time(std::uint64_t tick);
    [[nodiscard]] std::uint64_t now() const;
    void close();
    [[nodiscard]] bool is_open() const;
    [[nodiscard]] std::size_t pending() const;

    /// Host-side record of every injected event, with origin.
    [[nodiscard]] std::vector<InjectedRecord> injected() const;
    [[nodiscard]] std::uint64_t injected_count(InputOrigin origin) const;

private:
    mutable std::mutex mu_;
    std::uint64_t latency_;
    std::uint64_t now_ = 0;
    std::uint64_t seq_ = 0;
    bool open_ = true;
    std::map<std::pair<std::uint64_t, std::uint64_t>, InputEvent> queue_;
    std::vector<InjectedRecord> log_;
};

} // namespace vic
