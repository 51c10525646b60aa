#include "vic/game.hpp"

#include "vic/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace vic {

namespace {

using namespace game_offsets;

constexpr std::uint16_t kKeyW = 0x1A;
constexpr std::uint16_t kKeyA = 0x04;
constexpr std::uint16_t kKeyS = 0x16;
constexpr std::uint16_t kKeyD = 0x07;

double unit(std::mt19937_64& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::uint64_t mix(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

const char* const kOffsetKeys[] = {"base",           "entity_list_addr",   "entity_count",     "local_player",
                                   "view_proj_matrix", "crosshair_entity", "fire_state_primary", "fire_state_shadow",
                                   "frame_counter",  "entity_stride",      "max_entities"};

} // namespace

std::string format_offsets(const GameLayout& layout)
{
    std::ostringstream out;
    auto line = [&out](const char* key, std::uint64_t v) {
        out << key << " = 0x" << std::hex << std::uppercase << v << std::dec << '\n';
    };
    line("base", layout.base.value);
    line("entity_list_addr", layout.entity_list_addr);
    line("entity_count", layout.entity_count);
    line("local_player", layout.local_player);
    line("view_proj_matrix", layout.view_proj_matrix);
    if (layout.crosshair_entity) {
        line("crosshair_entity", *layout.crosshair_entity);
    }
    line("fire_state_primary", layout.fire_state_primary);
    line("fire_state_shadow", layout.fire_state_shadow);
    line("frame_counter", layout.frame_counter);
    line("entity_stride", layout.entity_stride);
    line("max_entities", layout.max_entities);
    return out.str();
}

GameLayout parse_offsets(std::string_view text)
{
    std::map<std::string, std::uint64_t> values;
    std::istringstream in{std::string(text)};
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        if (hash != std::string::npos) {
            raw.erase(hash);
        }
        const auto first = raw.find_first_not_of(" \t\r");
        if (first == std::string::npos) {
            continue;
        }
        const auto eq = raw.find('=');
        if (eq == std::string::npos) {
            fail(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        const std::string key = trim(raw.substr(0, eq));
        const std::string value = trim(raw.substr(eq + 1));
        if (std::find(std::begin(kOffsetKeys), std::end(kOffsetKeys), key) == std::end(kOffsetKeys)) {
            fail(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        if (values.count(key) != 0) {
            fail(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        }
        std::size_t used = 0;
        std::uint64_t v = 0;
        try {
            v = std::stoull(value, &used, 16);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != value.size()) {
            fail(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": bad hex value for '" + key + "'");
        }
        values[key] = v;
    }
    auto need = [&values](const char* key) {
        auto it = values.find(key);
        if (it == values.end()) {
            fail(ErrorCode::ParseError, std::string("missing required key '") + key + "'");
        }
        return it->second;
    };
    GameLayout l;
    l.base = GuestVirtAddr{need("base")};
    l.entity_list_addr = need("entity_list_addr");
    l.entity_count = need("entity_count");
    l.local_player = need("local_player");
    l.view_proj_matrix = need("view_proj_matrix");
    if (auto it = values.find("crosshair_entity"); it != values.end()) {
        l.crosshair_entity = it->second;
    } else {
        l.crosshair_entity.reset();
    }
    l.fire_state_primary = need("fire_state_primary");
    l.fire_state_shadow = need("fire_state_shadow");
    l.frame_counter = need("frame_counter");
    l.entity_stride = need("entity_stride");
    l.max_entities = need("max_entities");
    return l;
}

void export_offsets(const GameLayout& layout, const std::string& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorCode::IoFailure, "cannot open " + path);
    }
    out << format_offsets(layout);
    if (!out.flush()) {
        fail(ErrorCode::IoFailure, "write failed: " + path);
    }
}

GameLayout load_offsets(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::IoFailure, "cannot open " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_offsets(buf.str());
}

ScriptSample script_position(const EntityScript& script, double t)
{
    const auto& wp = script.waypoints;
    if (wp.empty()) {
        return {};
    }
    const std::size_t n = wp.size();
    double loop = 0;
    for (std::size_t i = 0; i < n; ++i) {
        loop += length(wp[(i + 1) % n] - wp[i]);
    }
    if (loop <= 0 || script.speed <= 0) {
        return {wp[0], 0};
    }
    double s = std::fmod(t * script.speed, loop);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 a = wp[i];
        const Vec3 b = wp[(i + 1) % n];
        const double seg = length(b - a);
        if (s < seg || i + 1 == n) {
            const double f = seg > 0 ? std::min(s / seg, 1.0) : 0.0;
            const Vec3 p{static_cast<float>(a.x + (b.x - a.x) * f), static_cast<float>(a.y + (b.y - a.y) * f),
                         static_cast<float>(a.z + (b.z - a.z) * f)};
            return {p, static_cast<std::uint16_t>(i)};
        }
        s -= seg;
    }
    return {wp[0], 0};
}

std::vector<EntityScript> generate_scripts(std::uint32_t players, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::vector<EntityScript> out;
    out.reserve(players);
    for (std::uint32_t i = 0; i < players; ++i) {
        EntityScript s;
        for (int k = 0; k < 4; ++k) {
            const float x = static_cast<float>(-3600.0 + 7200.0 * unit(rng));
            const float y = static_cast<float>(-3600.0 + 7200.0 * unit(rng));
            const float z = static_cast<float>(48.0 * unit(rng));
            s.waypoints.push_back({x, y, z});
        }
        s.speed = static_cast<float>(150.0 + 150.0 * unit(rng));
        s.team = (i % 2 == 0) ? kTeamEnemy : kTeamAlly;
        out.push_back(std::move(s));
    }
    return out;
}

std::optional<ScreenBox> entity_screen_box(const Vec3& feet, float height, const Mat4& view_proj,
                                           const Screen& screen)
{
    const auto f = world_to_screen(feet, view_proj, screen);
    const auto h = world_to_screen(feet + Vec3{0, 0, height}, view_proj, screen);
    if (!f || !h) {
        return std::nullopt;
    }
    const double box_h = f->y - h->y;
    const double box_w = box_h / 2.0;
    const double cx = (f->x + h->x) / 2.0;
    return ScreenBox{cx - box_w / 2.0, h->y, box_w, box_h, f->depth};
}

Game::Game(GuestMachine& guest, InputChannel& input, GameConfig config, std::uint64_t seed)
    : guest_(guest), input_(input), config_(std::move(config)), seed_(seed)
{
    if (config_.nominal_rate <= 0 || config_.work_us < 0) {
        fail(ErrorCode::InvalidArgument, "nominal rate must be positive and work non-negative");
    }
    scripts_ = config_.scripts.empty() ? generate_scripts(config_.players, seed_) : config_.scripts;
    config_.players = static_cast<std::uint32_t>(scripts_.size());
    if (scripts_.size() > kMaxEntities) {
        fail(ErrorCode::InvalidArgument, "at most 64 entities fit the entity list");
    }
    if (!config_.expose_crosshair) {
        layout_.crosshair_entity.reset();
    }
    projection_ = perspective(config_.camera, config_.screen);
    respawn_at_.assign(scripts_.size(), 0);
    segments_.assign(scripts_.size(), 0);
    proc_ = &guest_.create_process(config_.process_name);
    map_memory();
    write_initial_state();
}

void Game::map_memory()
{
    const Mitigations& m = config_.mitigations;
    const GuestVirtAddr base = layout_.base;
    if (m.huge_pages) {
        const GuestPhysAddr frame = guest_.alloc_frame(PageSize::k2M);
        guest_.map_page(*proc_, base, frame, PageSize::k2M, PagePerms{true, m.colocate_code_data});
        pages_.push_back({base, kPage2M});
    } else {
        const PagePerms hot{true, m.colocate_code_data};
        guest_.map_page(*proc_, base, guest_.alloc_frame(PageSize::k4K), PageSize::k4K, hot);
        guest_.map_page(*proc_, base + kAiScratch, guest_.alloc_frame(PageSize::k4K), PageSize::k4K, PagePerms{});
        pages_.push_back({base, kPage4K});
        pages_.push_back({base + kAiScratch, kPage4K});
    }
    if (m.colocate_code_data) {
        code_gva_ = base + kCodeWord;
    } else {
        code_gva_ = base + kCodePage;
        guest_.map_page(*proc_, code_gva_, guest_.alloc_frame(PageSize::k4K), PageSize::k4K, PagePerms{false, true});
        pages_.push_back({code_gva_, kPage4K});
    }
    guest_.map_page(*proc_, base + kProbePage, guest_.alloc_frame(PageSize::k4K), PageSize::k4K, PagePerms{});
    pages_.push_back({base + kProbePage, kPage4K});

    if (m.memory_encryption) {
        const std::uint64_t key = mix(seed_ ^ 0x5EC0'DE00'0000'0001ULL) | 1ULL;
        for (const auto& [gva, bytes] : pages_) {
            for (std::uint64_t off = 0; off < bytes; off += kPage4K) {
                const std::uint64_t gfn = guest_.translate(*proc_, gva + off).gpa.gfn();
                guest_.slat().set_encrypted(gfn, mix(key + gfn));
            }
        }
    }
}

void Game::write_initial_state()
{
    const ProcessContext& p = *proc_;
    const GuestVirtAddr base = layout_.base;
    guest_.write<std::uint64_t>(p, base + kEntityListPtr, (base + kEntityList).value);
    guest_.write<std::uint64_t>(p, base + kEntityCount, static_cast<std::uint64_t>(scripts_.size()));
    guest_.write<std::uint64_t>(p, base + kFrameCounter, 0);
    guest_.write<std::int32_t>(p, base + kCrosshair, -1);
    guest_.write<std::uint32_t>(p, base + kFirePrimary, 0);
    guest_.write<std::uint32_t>(p, base + kFireShadow, 0);
    for (std::size_t i = 0; i < scripts_.size(); ++i) {
        const ScriptSample s = script_position(scripts_[i], 0.0);
        EntityRecord rec;
        rec.pos = s.pos;
        rec.team = scripts_[i].team;
        rec.alive = 1;
        rec.waypoint = s.segment;
        rec.health = config_.max_health;
        segments_[i] = s.segment;
        guest_.write(p, base + kEntityList + i * kEntityStride, rec);
    }
    LocalPlayerRecord lp{config_.player_start, config_.player_yaw_deg, 0.0F};
    guest_.write(p, base + kLocalPlayer, lp);
    const Vec3 eye = lp.pos + Vec3{0, 0, config_.eye_height};
    const Mat4 view = view_matrix(eye, lp.yaw_deg, lp.pitch_deg);
    guest_.write(p, base + kViewMatrix, view.m);
    guest_.write(p, base + kViewProj, (projection_ * view).m);
    // The "instruction" word.
    if (config_.mitigations.colocate_code_data) {
        guest_.write<std::uint32_t>(p, code_gva_, 0x90909090U);
    } else {
        guest_.host_write_virtual(p, code_gva_, std::bit_cast<std::array<std::uint8_t, 4>>(0x90909090U));
    }
}

void Game::drain_input()
{
    const ProcessContext& p = *proc_;
    for (const GuestInputEvent& ev : input_.poll(tick_)) {
        if (ev.device == InputDevice::Mouse) {
            if (ev.action == InputAction::Move) {
                pending_yaw_ -= static_cast<float>(ev.dx) * config_.mouse_sensitivity_deg;
                pending_pitch_ -= static_cast<float>(ev.dy) * config_.mouse_sensitivity_deg;
            } else if (ev.code == button::kLeft &&
                       (ev.action == InputAction::ButtonDown || ev.action == InputAction::ButtonUp)) {
                const bool down = ev.action == InputAction::ButtonDown;
                if (down != fire_held_) {
                    fire_held_ = down;
                    stats_.fire_bursts += down ? 1 : 0;
                    const std::uint32_t v = down ? 1U : 0U;
                    guest_.write<std::uint32_t>(p, layout_.at(kFirePrimary), v);
                    guest_.write<std::uint32_t>(p, layout_.at(kFireShadow), v);
                }
            }
        } else if (ev.device == InputDevice::Keyboard) {
            const bool down = ev.action == InputAction::KeyDown;
            switch (ev.code) {
            case kKeyW: keys_[0] = down; break;
            case kKeyA: keys_[1] = down; break;
            case kKeyS: keys_[2] = down; break;
            case kKeyD: keys_[3] = down; break;
            default: break;
            }
        }
    }
}

double Game::tick()
{
    const ProcessContext& p = *proc_;
    const GuestVirtAddr base = layout_.base;
    const double dt_s = dt();
    guest_.begin_tick();
    ++tick_;
    guest_.set_logical_time(tick_);

    drain_input();

    // Scripted motion.
    const double t = static_cast<double>(tick_) * dt_s;
    const std::size_t n = scripts_.size();
    for (std::size_t i = 0; i < n; ++i) {
        const GuestVirtAddr rec_gva = base + kEntityList + i * kEntityStride;
        EntityRecord rec = guest_.read<EntityRecord>(p, rec_gva);
        const ScriptSample s = script_position(scripts_[i], t);
        guest_.write(p, rec_gva, s.pos);
        if (s.segment != segments_[i]) {
            segments_[i] = s.segment;
            guest_.write<std::uint16_t>(p, rec_gva + offsetof(EntityRecord, waypoint), s.segment);
        }
        if (rec.alive == 0 && tick_ >= respawn_at_[i]) {
            guest_.write<std::int32_t>(p, rec_gva + offsetof(EntityRecord, health), config_.max_health);
            guest_.write<std::uint8_t>(p, rec_gva + offsetof(EntityRecord, alive), 1);
        }
    }

    // Local player.
    LocalPlayerRecord lp = guest_.read<LocalPlayerRecord>(p, base + kLocalPlayer);
    lp.yaw_deg = std::remainder(lp.yaw_deg + pending_yaw_, 360.0F);
    lp.pitch_deg = std::clamp(lp.pitch_deg + pending_pitch_, -89.0F, 89.0F);
    pending_yaw_ = pending_pitch_ = 0;
    const Vec3 fwd = forward_vector(lp.yaw_deg, 0.0F);
    const Vec3 right{fwd.y, -fwd.x, 0.0F};
    Vec3 move{};
    move = move + fwd * static_cast<float>(keys_[0]) - fwd * static_cast<float>(keys_[2]);
    move = move + right * static_cast<float>(keys_[3]) - right * static_cast<float>(keys_[1]);
    if (length(move) > 0) {
        lp.pos = lp.pos + normalize(move) * static_cast<float>(config_.move_speed * dt_s);
    }
    guest_.write(p, base + kLocalPlayer, lp);

    // Camera.
    const Vec3 eye = lp.pos + Vec3{0, 0, config_.eye_height};
    const Mat4 view = view_matrix(eye, lp.yaw_deg, lp.pitch_deg);
    const Mat4 vp = projection_ * view;
    guest_.write(p, base + kViewMatrix, view.m);
    guest_.write(p, base + kViewProj, vp.m);

    // Crosshair ray: nearest alive entity whose box covers the screen centre.
    const double cx = config_.screen.width / 2.0;
    const double cy = config_.screen.height / 2.0;
    std::int32_t hit = -1;
    double best_depth = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const EntityRecord rec = guest_.read<EntityRecord>(p, base + kEntityList + i * kEntityStride);
        if (rec.alive == 0) {
            continue;
        }
        const auto box = entity_screen_box(rec.pos, config_.entity_height, vp, config_.screen);
        if (box && box->x <= cx && cx <= box->x + box->w && box->y <= cy && cy <= box->y + box->h &&
            (hit < 0 || box->depth < best_depth)) {
            hit = static_cast<std::int32_t>(i);
            best_depth = box->depth;
        }
    }
    guest_.write<std::int32_t>(p, base + kCrosshair, hit);

    // Weapon.
    const std::uint32_t fire = guest_.read<std::uint32_t>(p, base + kFirePrimary);
    if (config_.anticheat.enabled && redundancy_check(guest_, p, layout_)) {
        ++stats_.redundancy_mismatch_ticks;
        if (!stats_.first_mismatch_tick) {
            stats_.first_mismatch_tick = tick_;
        }
    }
    if (fire != 0 && hit >= 0) {
        const GuestVirtAddr rec_gva = base + kEntityList + static_cast<std::uint64_t>(hit) * kEntityStride;
        const GuestVirtAddr health_gva = rec_gva + offsetof(EntityRecord, health);
        const std::int32_t health = guest_.read<std::int32_t>(p, health_gva) - config_.weapon_damage;
        guest_.write<std::int32_t>(p, health_gva, std::max(health, 0));
        ++stats_.hits;
        if (health <= 0) {
            guest_.write<std::uint8_t>(p, rec_gva + offsetof(EntityRecord, alive), 0);
            respawn_at_[static_cast<std::size_t>(hit)] = tick_ + config_.respawn_ticks;
            ++stats_.kills;
        }
    }
    guest_.write<std::uint32_t>(p, base + kFireShadow, fire);

    // Bot AI: every entity scans every other one for the closest enemy.
    for (std::size_t i = 0; i < n; ++i) {
        const GuestVirtAddr me = base + kEntityList + i * kEntityStride;
        const Vec3 my_pos = guest_.read<Vec3>(p, me);
        const std::uint8_t my_team = scripts_[i].team;
        std::int32_t target = -1;
        float best = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) {
                continue;
            }
            const GuestVirtAddr other = base + kEntityList + j * kEntityStride;
            const Vec3 pos = guest_.read<Vec3>(p, other);
            const auto team = guest_.read<std::uint8_t>(p, other + offsetof(EntityRecord, team));
            const auto alive = guest_.read<std::uint8_t>(p, other + offsetof(EntityRecord, alive));
            const float d = length(pos - my_pos);
            if (alive != 0 && team != my_team && (target < 0 || d < best)) {
                target = static_cast<std::int32_t>(j);
                best = d;
            }
        }
        guest_.write<std::int32_t>(p, base + kAiScratch + i * 4, target);
    }

    guest_.guest_execute(p, code_gva_);

    const auto frame = guest_.read<std::uint64_t>(p, base + kFrameCounter);
    guest_.write<std::uint64_t>(p, base + kFrameCounter, frame + 1);

    if (config_.anticheat.enabled && config_.anticheat.period_ticks > 0 &&
        tick_ % config_.anticheat.period_ticks == 0) {
        run_probes();
    }

    guest_.charge_work(config_.work_us * 1000);
    input_.set_time(tick_);
    return guest_.end_tick(budget_ns());
}

void Game::run_probes()
{
    const double ratio = timing_probe(guest_, *proc_, probe_address(), config_.anticheat.timing_iterations);
    stats_.max_timing_ratio = std::max(stats_.max_timing_ratio, ratio);
    if (emulation_probe(profile_of(guest_))) {
        stats_.vm_instruction_artifact = true;
    }
    ++stats_.probes_run;
}

ProbeReport Game::probe_report() const noexcept
{
    const double ratio = stats_.probes_run > 0 ? stats_.max_timing_ratio : 1.0;
    return make_report(ratio, stats_.vm_instruction_artifact, stats_.redundancy_mismatch_ticks > 0);
}

EntityRecord Game::inspect_entity(std::uint32_t index) const
{
    return guest_.inspect<EntityRecord>(*proc_, layout_.at(kEntityList + index * kEntityStride));
}

LocalPlayerRecord Game::inspect_local_player() const
{
    return guest_.inspect<LocalPlayerRecord>(*proc_, layout_.at(kLocalPlayer));
}

std::int32_t Game::inspect_crosshair() const
{
    return guest_.inspect<std::int32_t>(*proc_, layout_.at(kCrosshair));
}

Mat4 Game::inspect_view_proj() const
{
    Mat4 m;
    m.m = guest_.inspect<std::array<float, 16>>(*proc_, layout_.at(kViewProj));
    return m;
}

Mat4 Game::inspect_view() const
{
    Mat4 m;
    m.m = guest_.inspect<std::array<float, 16>>(*proc_, layout_.at(kViewMatrix));
    return m;
}

std::vector<std::uint8_t> Game::memory_image() const
{
    std::vector<std::uint8_t> out;
    for (const auto& [gva, bytes] : pages_) {
        const std::size_t at = out.size();
        out.resize(at + bytes);
        guest_.host_read_virtual(*proc_, gva, std::span<std::uint8_t>(out).subspan(at, bytes));
    }
    return out;
}

std::uint64_t Game::state_hash() const
{
    // FNV-1a over the hot frame, the AI scratch frame and the probe frame.
    std::uint64_t h = 0xCBF29CE484222325ULL;
    std::array<std::uint8_t, kPage4K> buf{};
    for (const std::uint64_t off : {std::uint64_t{0}, kAiScratch, kProbePage}) {
        guest_.host_read_virtual(*proc_, layout_.at(off), buf);
        for (std::uint8_t b : buf) {
            h = (h ^ b) * 0x100000001B3ULL;
        }
    }
    return h;
}

} // namespace vic
