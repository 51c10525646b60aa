#pragma once

// Deterministic FPS-like toy game whose entire state lives in guest memory.
// All state accesses in tick() are guest accesses and therefore subject to
// page guards and the cost model.

#include "vic/anticheat.hpp"
#include "vic/input.hpp"
#include "vic/machine.hpp"
#include "vic/math.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vic {

inline constexpr std::uint64_t kGameBase = 0x0000'0001'4000'0000ULL;

// Offsets inside the hot frame. The entity list shares the frame with the
// header so a watch on any header field also sees every entity access.
namespace game_offsets {
inline constexpr std::uint64_t kEntityListPtr = 0x000;
inline constexpr std::uint64_t kEntityCount = 0x008;
inline constexpr std::uint64_t kFrameCounter = 0x010;
inline constexpr std::uint64_t kLocalPlayer = 0x020;
inline constexpr std::uint64_t kViewProj = 0x040;
inline constexpr std::uint64_t kCrosshair = 0x080;
inline constexpr std::uint64_t kFirePrimary = 0x100;
inline constexpr std::uint64_t kFireShadow = 0x180;
inline constexpr std::uint64_t kViewMatrix = 0x200;
inline constexpr std::uint64_t kEntityList = 0x400;
inline constexpr std::uint64_t kCodeWord = 0xF00;
inline constexpr std::uint64_t kEntityStride = 32;
inline constexpr std::uint64_t kMaxEntities = 64;
// Pages outside the hot frame.
inline constexpr std::uint64_t kAiScratch = 0x1000;
inline constexpr std::uint64_t kCodePage = 0x200000;
inline constexpr std::uint64_t kProbePage = 0x201000;
} // namespace game_offsets

#pragma pack(push, 1)
struct EntityRecord {
    Vec3 pos;
    std::uint8_t team = 0; // 0 ally, 1 enemy
    std::uint8_t alive = 0;
    std::uint16_t waypoint = 0;
    std::int32_t health = 0;
    std::uint8_t reserved[12] = {};
};
struct LocalPlayerRecord {
    Vec3 pos;
    float yaw_deg = 0;
    float pitch_deg = 0;
};
#pragma pack(pop)
static_assert(sizeof(EntityRecord) == game_offsets::kEntityStride);
static_assert(sizeof(LocalPlayerRecord) == 20);

inline constexpr std::uint8_t kTeamAlly = 0;
inline constexpr std::uint8_t kTeamEnemy = 1;

/// Offsets published for external readers.
struct GameLayout {
    GuestVirtAddr base{kGameBase};
    std::uint64_t entity_list_addr = game_offsets::kEntityListPtr;
    std::uint64_t entity_count = game_offsets::kEntityCount;
    std::uint64_t local_player = game_offsets::kLocalPlayer;
    std::uint64_t view_proj_matrix = game_offsets::kViewProj;
    std::optional<std::uint64_t> crosshair_entity = game_offsets::kCrosshair;
    std::uint64_t fire_state_primary = game_offsets::kFirePrimary;
    std::uint64_t fire_state_shadow = game_offsets::kFireShadow;
    std::uint64_t frame_counter = game_offsets::kFrameCounter;
    std::uint64_t entity_stride = game_offsets::kEntityStride;
    std::uint64_t max_entities = game_offsets::kMaxEntities;

    [[nodiscard]] GuestVirtAddr at(std::uint64_t offset) const { return base + offset; }
    friend bool operator==(const GameLayout&, const GameLayout&) = default;
};

/// `key = 0xHEX` lines. crosshair_entity is optional; every other key is
/// required and unknown keys are rejected (ParseError).
std::string format_offsets(const GameLayout& layout);
GameLayout parse_offsets(std::string_view text);
void export_offsets(const GameLayout& layout, const std::string& path);
GameLayout load_offsets(const std::string& path);

struct EntityScript {
    std::vector<Vec3> waypoints; // closed loop
    float speed = 200.0F;        // world units per second
    std::uint8_t team = kTeamEnemy;
};

struct ScriptSample {
    Vec3 pos;
    std::uint16_t segment = 0;
};

/// Position along the closed waypoint loop after `t` seconds.
ScriptSample script_position(const EntityScript& script, double t);
std::vector<EntityScript> generate_scripts(std::uint32_t players, std::uint64_t seed);

struct Mitigations {
    bool huge_pages = false;
    bool colocate_code_data = false;
    bool memory_encryption = false;

    friend bool operator==(const Mitigations&, const Mitigations&) = default;
};

struct AntiCheatConfig {
    bool enabled = true;
    std::uint32_t timing_iterations = kMinTimingIterations;
    std::uint32_t period_ticks = 60;
};

struct GameConfig {
    std::uint32_t players = 24;
    double nominal_rate = 60.0;
    std::int64_t work_us = 2000;
    std::int32_t weapon_damage = 5;
    std::int32_t max_health = 100;
    std::uint32_t respawn_ticks = 90;
    Mitigations mitigations;
    Screen screen;
    CameraParams camera;
    float move_speed = 320.0F;
    float mouse_sensitivity_deg = 0.25F;
    float eye_height = 64.0F;
    float entity_height = 72.0F;
    Vec3 player_start{};
    float player_yaw_deg = 0.0F;
    /// Overrides seeded generation when non-empty.
    std::vector<EntityScript> scripts;
    AntiCheatConfig anticheat;
    std::string process_name = "game";
    /// Publish crosshair_entity in the offsets.
    bool expose_crosshair = true;
};

struct ScreenBox {
    double x = 0;
    double y = 0;
    double w = 0;
    double h = 0;
    double depth = 0;
};

/// Screen box of an upright entity: feet and head projected separately,
/// width half the height. nullopt if either end is behind the camera.
std::optional<ScreenBox> entity_screen_box(const Vec3& feet, float height, const Mat4& view_proj,
                                           const Screen& screen);

struct GameStats {
    std::uint64_t fire_bursts = 0;
    std::uint64_t hits = 0;
    std::uint64_t kills = 0;
    std::uint64_t redundancy_mismatch_ticks = 0;
    std::optional<std::uint64_t> first_mismatch_tick;
    std::uint64_t probes_run = 0;
    double max_timing_ratio = 0.0;
    bool vm_instruction_artifact = false;
};

class Game {
public:
    /// game_init: allocates, maps and initialises guest state.
    Game(GuestMachine& guest, InputChannel& input, GameConfig config, std::uint64_t seed);

    Game(const Game&) = delete;
    Game& operator=(const Game&) = delete;

    /// One fixed-step tick; returns its duration in simulated nanoseconds.
    double tick();

    [[nodiscard]] const GameLayout& layout() const noexcept { return layout_; }
    [[nodiscard]] const ProcessContext& process() const noexcept { return *proc_; }
    [[nodiscard]] const GameConfig& config() const noexcept { return config_; }
    [[nodiscard]] const std::vector<EntityScript>& scripts() const noexcept { return scripts_; }
    [[nodiscard]] std::uint64_t ticks() const noexcept { return tick_; }
    [[nodiscard]] double dt() const noexcept { return 1.0 / config_.nominal_rate; }
    [[nodiscard]] double budget_ns() const noexcept { return 1e9 / config_.nominal_rate; }
    [[nodiscard]] const GameStats& stats() const noexcept { return stats_; }
    [[nodiscard]] ProbeReport probe_report() const noexcept;
    [[nodiscard]] GuestMachine& guest() noexcept { return guest_; }
    [[nodiscard]] bool fire_held() const noexcept { return fire_held_; }

    /// Plaintext ground truth, read without traps or cost.
    [[nodiscard]] EntityRecord inspect_entity(std::uint32_t index) const;
    [[nodiscard]] LocalPlayerRecord inspect_local_player() const;
    [[nodiscard]] std::int32_t inspect_crosshair() const;
    [[nodiscard]] Mat4 inspect_view_proj() const;
    [[nodiscard]] Mat4 inspect_view() const;
    /// Stored bytes of every game page, as the host sees them.
    [[nodiscard]] std::vector<std::uint8_t> memory_image() const;
    [[nodiscard]] std::uint64_t state_hash() const;

    [[nodiscard]] GuestVirtAddr code_address() const noexcept { return code_gva_; }
    [[nodiscard]] GuestVirtAddr probe_address() const noexcept { return layout_.at(game_offsets::kProbePage); }

private:
    void map_memory();
    void write_initial_state();
    void drain_input();
    void run_probes();

    GuestMachine& guest_;
    InputChannel& input_;
    GameConfig config_;
    std::uint64_t seed_;
    const ProcessContext* proc_ = nullptr;
    GameLayout layout_;
    std::vector<EntityScript> scripts_;
    std::vector<std::uint64_t> respawn_at_;
    std::vector<std::uint16_t> segments_;
    std::vector<std::pair<GuestVirtAddr, std::uint64_t>> pages_; // (gva, bytes)
    GuestVirtAddr code_gva_{};
    Mat4 projection_;
    std::uint64_t tick_ = 0;
    bool fire_held_ = false;
    bool keys_[4] = {false, false, false, false}; // w a s d
    float pending_yaw_ = 0;
    float pending_pitch_ = 0;
    GameStats stats_;
};

} // namespace vic
