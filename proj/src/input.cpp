#include "vic/input.hpp"

#include "vic/error.hpp"

#include <bit>
#include <cstring>

namespace vic {

InputEvent InputEvent::mouse_button(std::uint16_t which, bool down, InputOrigin origin)
{
    return InputEvent{
        GuestInputEvent{InputDevice::Mouse, down ? InputAction::ButtonDown : InputAction::ButtonUp, which, 0, 0},
        origin};
}

InputEvent InputEvent::mouse_move(std::int16_t dx, std::int16_t dy, InputOrigin origin)
{
    return InputEvent{GuestInputEvent{InputDevice::Mouse, InputAction::Move, 0, dx, dy}, origin};
}

InputEvent InputEvent::key(std::uint16_t code, bool down, InputOrigin origin)
{
    return InputEvent{
        GuestInputEvent{InputDevice::Keyboard, down ? InputAction::KeyDown : InputAction::KeyUp, code, 0, 0}, origin};
}

std::array<std::uint8_t, 8> guest_bytes(const GuestInputEvent& ev) noexcept
{
    std::array<std::uint8_t, 8> out{};
    out[0] = static_cast<std::uint8_t>(ev.device);
    out[1] = static_cast<std::uint8_t>(ev.action);
    std::memcpy(out.data() + 2, &ev.code, 2);
    std::memcpy(out.data() + 4, &ev.dx, 2);
    std::memcpy(out.data() + 6, &ev.dy, 2);
    return out;
}

GuestInputEvent from_guest_bytes(const std::array<std::uint8_t, 8>& raw) noexcept
{
    GuestInputEvent ev;
    ev.device = static_cast<InputDevice>(raw[0]);
    ev.action = static_cast<InputAction>(raw[1]);
    std::memcpy(&ev.code, raw.data() + 2, 2);
    std::memcpy(&ev.dx, raw.data() + 4, 2);
    std::memcpy(&ev.dy, raw.data() + 6, 2);
    return ev;
}

std::optional<std::uint16_t> qcode_to_code(std::string_view name)
{
    // USB HID usage ids.
    if (name.size() == 1 && name[0] >= 'a' && name[0] <= 'z') {
        return static_cast<std::uint16_t>(0x04 + (name[0] - 'a'));
    }
    if (name.size() == 1 && name[0] >= '1' && name[0] <= '9') {
        return static_cast<std::uint16_t>(0x1E + (name[0] - '1'));
    }
    static constexpr std::pair<std::string_view, std::uint16_t> named[] = {
        {"0", 0x27},     {"ret", 0x28},  {"esc", 0x29},        {"backspace", 0x2A}, {"tab", 0x2B},
        {"spc", 0x2C},   {"right", 0x4F}, {"left", 0x50},      {"down", 0x51},      {"up", 0x52},
        {"ctrl", 0xE0},  {"shift", 0xE1}, {"alt", 0xE2},
    };
    for (const auto& [n, code] : named) {
        if (n == name) {
            return code;
        }
    }
    return std::nullopt;
}

std::optional<std::uint16_t> button_from_name(std::string_view name)
{
    if (name == "left") {
        return button::kLeft;
    }
    if (name == "right") {
        return button::kRight;
    }
    if (name == "middle") {
        return button::kMiddle;
    }
    return std::nullopt;
}

std::uint64_t InputChannel::inject(const InputEvent& ev)
{
    std::lock_guard lock(mu_);
    if (!open_) {
        fail(ErrorCode::ChannelClosed, "input channel is closed");
    }
    const std::uint64_t stamp = now_ + latency_;
    queue_.emplace(std::make_pair(stamp, seq_++), ev);
    log_.push_back(InjectedRecord{stamp, ev});
    return stamp;
}

void InputChannel::inject_at(const InputEvent& ev, std::uint64_t tick)
{
    std::lock_guard lock(mu_);
    if (!open_) {
        fail(ErrorCode::ChannelClosed, "input channel is closed");
    }
    queue_.emplace(std::make_pair(tick, seq_++), ev);
    log_.push_back(InjectedRecord{tick, ev});
}

std::vector<GuestInputEvent> InputChannel::poll(std::uint64_t current_tick)
{
    std::lock_guard lock(mu_);
    std::vector<GuestInputEvent> out;
    while (!queue_.empty() && queue_.begin()->first.first <= current_tick) {
        out.push_back(queue_.begin()->second.data);
        queue_.erase(queue_.begin());
    }
    return out;
}

void InputChannel::set_time(std::uint64_t tick)
{
    std::lock_guard lock(mu_);
    now_ = tick;
}

std::uint64_t InputChannel::now() const
{
    std::lock_guard lock(mu_);
    return now_;
}

void InputChannel::close()
{
    std::lock_guard lock(mu_);
    open_ = false;
}

bool InputChannel::is_open() const
{
    std::lock_guard lock(mu_);
    return open_;
}

std::size_t InputChannel::pending() const
{
    std::lock_guard lock(mu_);
    return queue_.size();
}

std::vector<InjectedRecord> InputChannel::injected() const
{
    std::lock_guard lock(mu_);
    return log_;
}

std::uint64_t InputChannel::injected_count(InputOrigin origin) const
{
    std::lock_guard lock(mu_);
    std::uint64_t n = 0;
    for (const auto& r : log_) {
        n += r.event.origin == origin ? 1 : 0;
    }
    return n;
}

} // namespace vic
