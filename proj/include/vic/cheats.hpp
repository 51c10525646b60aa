#pragma once

// External cheats built only on the introspection session and the input
// channel: radar, wall-hack and trigger-bot (polling and event driven),
// plus the reader/overlay runtime that schedules them on simulated time.

#include "vic/game.hpp"
#include "vic/input.hpp"
#include "vic/math.hpp"
#include "vic/vmi.hpp"

#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace vic {

// -- snapshots ----------------------------------------------------------------

struct EntitySnapshot {
    std::uint32_t index = 0;
    Vec3 pos;
    std::uint8_t team = 0;
    bool alive = false;
    std::int32_t health = 0;
};

/// Immutable once built; the overlay task only ever sees these.
struct GameSnapshot {
    std::uint64_t tick = 0;
    Vec3 local_pos;
    float yaw_deg = 0;
    float pitch_deg = 0;
    Mat4 view_proj;
    std::vector<EntitySnapshot> entities;
    std::optional<std::int32_t> crosshair;
};

struct SnapshotStats {
    std::uint64_t list_pointer_fallbacks = 0;
};

/// Reads one consistent view of game state. Entity count is clamped to
/// max_entities. If the list pointer does not resolve to mapped memory the
/// reader falls back to the list's usual spot right behind the header.
/// Reads that land on unmapped pages raise StaleOffsets.
GameSnapshot read_snapshot(VmiSession& session, const std::string& process, const GameLayout& layout,
                           SnapshotStats* stats = nullptr);

// -- radar --------------------------------------------------------------------

enum class RadarMode { Absolute, PlayerRelative };

struct RadarConfig {
    int width = 256;
    int height = 256;
    float map_half_extent = 4096.0F;
    RadarMode mode = RadarMode::PlayerRelative;
};

struct RadarPoint {
    double x = 0;
    double y = 0;
};

/// Affine map before clamping; world +y is radar up.
RadarPoint radar_project_unclamped(float world_x, float world_y, const RadarConfig& cfg, float player_x = 0,
                                   float player_y = 0);

struct RadarPixel {
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    friend bool operator==(const RadarPixel&, const RadarPixel&) = default;
};

/// Floors and clamps into [0, width) x [0, height); non-finite coordinates
/// clamp to 0. Throws PreconditionFailed unless map_half_extent > 0.
RadarPixel radar_project(float world_x, float world_y, const RadarConfig& cfg, float player_x = 0,
                         float player_y = 0);

struct RadarDot {
    std::uint32_t index = 0;
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::uint8_t team = 0;
    friend bool operator==(const RadarDot&, const RadarDot&) = default;
};

struct RadarFrame {
    std::uint64_t tick = 0;
    int width = 0;
    int height = 0;
    std::vector<RadarDot> dots;
};

RadarFrame radar_frame(const GameSnapshot& snap, const RadarConfig& cfg);

// -- wall-hack ----------------------------------------------------------------

struct OverlayRect {
    std::uint32_t index = 0;
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;
    std::uint8_t team = 0;
    friend bool operator==(const OverlayRect&, const OverlayRect&) = default;
};

/// "red" for enemies, "blue" for allies.
const char* team_color(std::uint8_t team) noexcept;

struct OverlayFrame {
    std::uint64_t tick = 0;
    std::vector<OverlayRect> shapes;
};

/// Integer rectangle of an entity box: outward-rounded, clipped to the
/// screen, nullopt when nothing is left on screen.
std::optional<OverlayRect> overlay_rect(const ScreenBox& box, const Screen& screen);

/// Throws InvalidMatrix if the snapshot's matrix is not finite.
OverlayFrame wallhack_frame(const GameSnapshot& snap, const Screen& screen, float entity_height = 72.0F);

// -- trigger-bot --------------------------------------------------------------

enum class FireAction { Start, Stop };
const char* to_string(FireAction a) noexcept;

struct FireCommand {
    FireAction action = FireAction::Start;
    std::uint64_t issued_at = 0;
    friend bool operator==(const FireCommand&, const FireCommand&) = default;
};

struct TriggerState {
    bool firing = false;
    std::vector<FireCommand> commands;
};

/// The shared start/stop rule.
std::optional<FireCommand> trigger_decide(bool on_enemy, TriggerState& state, std::uint64_t tick);

/// Screen-overlap alternative to the crosshair field: the nearest alive
/// entity whose box covers the screen centre, if it is an enemy.
std::optional<std::uint32_t> overlap_target(const GameSnapshot& snap, const Screen& screen, float entity_height);

struct TriggerContext {
    std::string process = "game";
    Screen screen;
    float entity_height = 72.0F;
    bool unsafe_memory_fire = false;
};

/// Applies a command: mouse button through the input channel, or with
/// unsafe_memory_fire a direct write of the primary fire state.
void issue_fire(const FireCommand& cmd, VmiSession& session, InputChannel& input, const GameLayout& layout,
                const TriggerContext& ctx);

/// One polling iteration. Throws StaleOffsets when reads hit unmapped pages.
std::optional<FireCommand> triggerbot_poll_step(VmiSession& session, const GameLayout& layout, TriggerState& state,
                                                InputChannel& input, const TriggerContext& ctx = {});

/// Watches crosshair_entity; each guest write runs the same rule. Throws
/// PreconditionFailed when the offsets do not publish crosshair_entity.
WatchHandle triggerbot_event_setup(VmiSession& session, const GameLayout& layout, TriggerState& state,
                                   InputChannel& input, const TriggerContext& ctx = {}, bool use_spp = false);

// -- overlay sinks --------------------------------------------------------------

std::string to_json_line(const RadarFrame& frame);
std::string to_json_line(const OverlayFrame& frame);

class OverlaySink {
public:
    virtual ~OverlaySink() = default;
    virtual void emit(const RadarFrame& frame) = 0;
    virtual void emit(const OverlayFrame& frame) = 0;
};

class NullSink final : public OverlaySink {
public:
    void emit(const RadarFrame&) override { ++frames_; }
    void emit(const OverlayFrame&) override { ++frames_; }
    [[nodiscard]] std::uint64_t frames() const noexcept { return frames_; }

private:
    std::uint64_t frames_ = 0;
};

class MemorySink final : public OverlaySink {
public:
    void emit(const RadarFrame& frame) override { radar.push_back(frame); }
    void emit(const OverlayFrame& frame) override { overlay.push_back(frame); }
    std::vector<RadarFrame> radar;
    std::vector<OverlayFrame> overlay;
};

/// Newline-delimited frame log.
class FileSink final : public OverlaySink {
public:
    explicit FileSink(const std::string& path);
    void emit(const RadarFrame& frame) override;
    void emit(const OverlayFrame& frame) override;

private:
    std::ofstream out_;
};

// -- runtime ----------------------------------------------------------------------

enum class CheatKind { Radar, Wallhack, TriggerbotPoll, TriggerbotEvent };
const char* to_string(CheatKind k) noexcept;

struct CheatOptions {
    CheatKind kind = CheatKind::Radar;
    double poll_interval_ms = 16.0;
    bool use_spp = false;
    RadarConfig radar;
    TriggerContext trigger;
};

struct CheatTelemetry {
    std::uint64_t snapshots_built = 0;
    std::uint64_t frames_emitted = 0;
    std::uint64_t overlay_guest_reads = 0;
    std::uint64_t list_pointer_fallbacks = 0;
    std::uint64_t invalid_frames = 0;
    std::uint64_t stale_reads = 0;
    std::uint64_t events_handled = 0;
    std::vector<FireCommand> commands;
};

/// Reader and overlay tasks scheduled on the simulated clock. on_tick()
/// runs every task instance whose due time has passed.
class CheatRuntime {
public:
    CheatRuntime(VmiSession& session, InputChannel& input, GameLayout layout, CheatOptions options,
                 OverlaySink* sink);
    ~CheatRuntime();

    CheatRuntime(const CheatRuntime&) = delete;
    CheatRuntime& operator=(const CheatRuntime&) = delete;

    void start();
    void on_tick();
    void stop();

    [[nodiscard]] CheatTelemetry telemetry() const;
    /// Adds watch events the caller pumped on the runtime's behalf.
    void count_events(std::uint64_t n) noexcept;
    [[nodiscard]] const TriggerState& trigger_state() const noexcept { return trigger_; }
    [[nodiscard]] std::shared_ptr<const GameSnapshot> latest() const noexcept { return latest_; }

private:
    void reader_task();
    void overlay_task();

    VmiSession& session_;
    InputChannel& input_;
    GameLayout layout_;
    CheatOptions options_;
    OverlaySink* sink_;
    CheatTelemetry telemetry_;
    TriggerState trigger_;
    std::shared_ptr<const GameSnapshot> latest_;
    std::optional<WatchHandle> watch_;
    double next_due_ns_ = 0;
    bool started_ = false;
};

/// Drives the session's driver for `duration_ticks` ticks with one cheat
/// attached and returns its telemetry.
CheatTelemetry cheat_run(VmiSession& session, InputChannel& input, const GameLayout& layout,
                         const CheatOptions& options, OverlaySink& sink, std::uint64_t duration_ticks);

} // namespace vic
