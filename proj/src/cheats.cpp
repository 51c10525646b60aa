#include "vic/cheats.hpp"

#include "vic/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace vic {

namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void rethrow_stale(const SimError& e)
{
    fail(ErrorCode::StaleOffsets, std::string("offsets do not match guest memory: ") + e.what());
}

bool is_address_fault(const SimError& e)
{
    return e.code() == ErrorCode::PageNotPresent || e.code() == ErrorCode::NonCanonicalAddress ||
           e.code() == ErrorCode::UnmappedFrame;
}

GuestVirtAddr resolve_list(VmiSession& session, const std::string& process, const GameLayout& layout,
                           SnapshotStats* stats)
{
    const auto ptr = session.read_value<std::uint64_t>(process, layout.at(layout.entity_list_addr));
    const GuestVirtAddr list{ptr};
    if (list.is_canonical()) {
        try {
            (void)session.guest().translate(session.resolve(process), list);
            return list;
        } catch (const SimError& e) {
            if (!is_address_fault(e)) {
                throw;
            }
        }
    }
    if (stats != nullptr) {
        ++stats->list_pointer_fallbacks;
    }
    return layout.at(game_offsets::kEntityList);
}

bool target_is_enemy(VmiSession& session, const GameLayout& layout, const std::string& process, std::int32_t idx)
{
    if (idx < 0 || static_cast<std::uint64_t>(idx) >= layout.max_entities) {
        return false;
    }
    const GuestVirtAddr list = resolve_list(session, process, layout, nullptr);
    const auto rec = session.read_value<EntityRecord>(process, list + static_cast<std::uint64_t>(idx) *
                                                                          layout.entity_stride);
    return rec.alive != 0 && rec.team == kTeamEnemy;
}

double finite_or_zero(double v)
{
    return std::isfinite(v) ? v : 0.0;
}

} // namespace

GameSnapshot read_snapshot(VmiSession& session, const std::string& process, const GameLayout& layout,
                           SnapshotStats* stats)
{
    try {
        GameSnapshot snap;
        snap.tick = session.read_value<std::uint64_t>(process, layout.at(layout.frame_counter));
        const auto lp = session.read_value<LocalPlayerRecord>(process, layout.at(layout.local_player));
        snap.local_pos = lp.pos;
        snap.yaw_deg = lp.yaw_deg;
        snap.pitch_deg = lp.pitch_deg;
        snap.view_proj.m = session.read_value<std::array<float, 16>>(process, layout.at(layout.view_proj_matrix));
        if (layout.crosshair_entity) {
            snap.crosshair = session.read_value<std::int32_t>(process, layout.at(*layout.crosshair_entity));
        }
        const auto count = std::min<std::uint64_t>(
            session.read_value<std::uint64_t>(process, layout.at(layout.entity_count)), layout.max_entities);
        const GuestVirtAddr list = resolve_list(session, process, layout, stats);
        const std::uint64_t stride = std::max<std::uint64_t>(layout.entity_stride, sizeof(EntityRecord));
        const std::vector<std::uint8_t> raw = session.read(process, list, count * stride);
        snap.entities.reserve(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            EntityRecord rec;
            std::memcpy(&rec, raw.data() + i * stride, sizeof rec);
            snap.entities.push_back(
                EntitySnapshot{static_cast<std::uint32_t>(i), rec.pos, rec.team, rec.alive != 0, rec.health});
        }
        return snap;
    } catch (const SimError& e) {
        if (is_address_fault(e)) {
            rethrow_stale(e);
        }
        throw;
    }
}

RadarPoint radar_project_unclamped(float world_x, float world_y, const RadarConfig& cfg, float player_x,
                                   float player_y)
{
    double wx = world_x;
    double wy = world_y;
    if (cfg.mode == RadarMode::PlayerRelative) {
        wx -= player_x;
        wy -= player_y;
    }
    const double half = cfg.map_half_extent;
    return RadarPoint{(wx / half + 1.0) / 2.0 * cfg.width, (1.0 - wy / half) / 2.0 * cfg.height};
}

RadarPixel radar_project(float world_x, float world_y, const RadarConfig& cfg, float player_x, float player_y)
{
    if (!(cfg.map_half_extent > 0) || cfg.width <= 0 || cfg.height <= 0) {
        fail(ErrorCode::PreconditionFailed, "radar needs a positive extent and size");
    }
    const RadarPoint p = radar_project_unclamped(world_x, world_y, cfg, player_x, player_y);
    auto clamp_px = [](double v, int size) {
        const double f = std::floor(finite_or_zero(v));
        return static_cast<std::uint16_t>(std::clamp(f, 0.0, static_cast<double>(size - 1)));
    };
    return RadarPixel{clamp_px(p.x, cfg.width), clamp_px(p.y, cfg.height)};
}

RadarFrame radar_frame(const GameSnapshot& snap, const RadarConfig& cfg)
{
    RadarFrame f;
    f.tick = snap.tick;
    f.width = cfg.width;
    f.height = cfg.height;
    for (const EntitySnapshot& e : snap.entities) {
        if (!e.alive) {
            continue;
        }
        const RadarPixel px = radar_project(e.pos.x, e.pos.y, cfg, snap.local_pos.x, snap.local_pos.y);
        f.dots.push_back(RadarDot{e.index, px.x, px.y, e.team});
    }
    return f;
}

const char* team_color(std::uint8_t team) noexcept
{
    return team == kTeamEnemy ? "red" : "blue";
}

std::optional<OverlayRect> overlay_rect(const ScreenBox& box, const Screen& screen)
{
    if (!std::isfinite(box.x) || !std::isfinite(box.y) || !std::isfinite(box.w) || !std::isfinite(box.h) ||
        box.w <= 0 || box.h <= 0) {
        return std::nullopt;
    }
    const double x0 = std::max(std::floor(box.x), 0.0);
    const double y0 = std::max(std::floor(box.y), 0.0);
    const double x1 = std::min(std::ceil(box.x + box.w), static_cast<double>(screen.width));
    const double y1 = std::min(std::ceil(box.y + box.h), static_cast<double>(screen.height));
    if (x1 <= x0 || y1 <= y0) {
        return std::nullopt;
    }
    OverlayRect r;
    r.x = static_cast<int>(x0);
    r.y = static_cast<int>(y0);
    r.w = static_cast<int>(x1 - x0);
    r.h = static_cast<int>(y1 - y0);
    return r;
}

OverlayFrame wallhack_frame(const GameSnapshot& snap, const Screen& screen, float entity_height)
{
    if (!snap.view_proj.is_finite()) {
        fail(ErrorCode::InvalidMatrix, "snapshot view-projection is not finite");
    }
    OverlayFrame f;
    f.tick = snap.tick;
    for (const EntitySnapshot& e : snap.entities) {
        if (!e.alive) {
            continue;
        }
        const auto box = entity_screen_box(e.pos, entity_height, snap.view_proj, screen);
        if (!box) {
            continue;
        }
        if (auto rect = overlay_rect(*box, screen)) {
            rect->index = e.index;
            rect->team = e.team;
            f.shapes.push_back(*rect);
        }
    }
    return f;
}

const char* to_string(FireAction a) noexcept
{
    return a == FireAction::Start ? "start" : "stop";
}

std::optional<FireCommand> trigger_decide(bool on_enemy, TriggerState& state, std::uint64_t tick)
{
    std::optional<FireCommand> cmd;
    if (on_enemy && !state.firing) {
        cmd = FireCommand{FireAction::Start, tick};
    } else if (!on_enemy && state.firing) {
        cmd = FireCommand{FireAction::Stop, tick};
    }
    if (cmd) {
        state.firing = cmd->action == FireAction::Start;
        state.commands.push_back(*cmd);
    }
    return cmd;
}

std::optional<std::uint32_t> overlap_target(const GameSnapshot& snap, const Screen& screen, float entity_height)
{
    if (!snap.view_proj.is_finite()) {
        return std::nullopt;
    }
    const double cx = screen.width / 2.0;
    const double cy = screen.height / 2.0;
    const EntitySnapshot* best = nullptr;
    double best_depth = 0;
    for (const EntitySnapshot& e : snap.entities) {
        if (!e.alive) {
            continue;
        }
        const auto box = entity_screen_box(e.pos, entity_height, snap.view_proj, screen);
        if (box && box->x <= cx && cx <= box->x + box->w && box->y <= cy && cy <= box->y + box->h &&
            (best == nullptr || box->depth < best_depth)) {
            best = &e;
            best_depth = box->depth;
        }
    }
    if (best == nullptr || best->team != kTeamEnemy) {
        return std::nullopt;
    }
    return best->index;
}

void issue_fire(const FireCommand& cmd, VmiSession& session, InputChannel& input, const GameLayout& layout,
                const TriggerContext& ctx)
{
    const bool down = cmd.action == FireAction::Start;
    if (ctx.unsafe_memory_fire) {
        session.write_value<std::uint32_t>(ctx.process, layout.at(layout.fire_state_primary), down ? 1U : 0U);
        return;
    }
    input.inject(InputEvent::mouse_button(button::kLeft, down, InputOrigin::Synthetic));
}

std::optional<FireCommand> triggerbot_poll_step(VmiSession& session, const GameLayout& layout, TriggerState& state,
                                                InputChannel& input, const TriggerContext& ctx)
{
    bool on_enemy = false;
    try {
        if (layout.crosshair_entity) {
            const auto idx = session.read_value<std::int32_t>(ctx.process, layout.at(*layout.crosshair_entity));
            on_enemy = target_is_enemy(session, layout, ctx.process, idx);
        } else {
            on_enemy = overlap_target(read_snapshot(session, ctx.process, layout), ctx.screen, ctx.entity_height)
                           .has_value();
        }
    } catch (const SimError& e) {
        if (is_address_fault(e)) {
            rethrow_stale(e);
        }
        throw;
    }
    const auto cmd = trigger_decide(on_enemy, state, session.guest().logical_time());
    if (cmd) {
        issue_fire(*cmd, session, input, layout, ctx);
    }
    return cmd;
}

WatchHandle triggerbot_event_setup(VmiSession& session, const GameLayout& layout, TriggerState& state,
                                   InputChannel& input, const TriggerContext& ctx, bool use_spp)
{
    if (!layout.crosshair_entity) {
        fail(ErrorCode::PreconditionFailed, "offsets do not publish crosshair_entity");
    }
    auto on_event = [&session, &state, &input, layout, ctx](const MemoryEvent& ev) {
        if (ev.kind != AccessKind::Write || ev.new_value.size() < sizeof(std::int32_t)) {
            return;
        }
        std::int32_t idx = -1;
        std::memcpy(&idx, ev.new_value.data(), sizeof idx);
        const bool on_enemy = target_is_enemy(session, layout, ctx.process, idx);
        if (const auto cmd = trigger_decide(on_enemy, state, ev.timestamp)) {
            issue_fire(*cmd, session, input, layout, ctx);
        }
    };
    WatchOptions opts;
    opts.use_spp = use_spp;
    return session.register_watch(ctx.process, layout.at(*layout.crosshair_entity), sizeof(std::int32_t), on_event,
                                  opts);
}

std::string to_json_line(const RadarFrame& frame)
{
    json j;
    j["tick"] = frame.tick;
    j["kind"] = "radar";
    json shapes = json::array();
    for (const RadarDot& d : frame.dots) {
        json s;
        s["i"] = d.index;
        s["x"] = d.x;
        s["y"] = d.y;
        s["team"] = d.team == kTeamEnemy ? "enemy" : "ally";
        shapes.push_back(std::move(s));
    }
    j["shapes"] = std::move(shapes);
    return j.dump();
}

std::string to_json_line(const OverlayFrame& frame)
{
    json j;
    j["tick"] = frame.tick;
    j["kind"] = "wallhack";
    json shapes = json::array();
    for (const OverlayRect& r : frame.shapes) {
        json s;
        s["i"] = r.index;
        s["x"] = r.x;
        s["y"] = r.y;
        s["w"] = r.w;
        s["h"] = r.h;
        s["color"] = team_color(r.team);
        shapes.push_back(std::move(s));
    }
    j["shapes"] = std::move(shapes);
    return j.dump();
}

FileSink::FileSink(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc)
{
    if (!out_) {
        fail(ErrorCode::IoFailure, "cannot open overlay log " + path);
    }
}

void FileSink::emit(const RadarFrame& frame)
{
    out_ << to_json_line(frame) << '\n';
}

void FileSink::emit(const OverlayFrame& frame)
{
    out_ << to_json_line(frame) << '\n';
}

const char* to_string(CheatKind k) noexcept
{
    switch (k) {
    case CheatKind::Radar: return "radar";
    case CheatKind::Wallhack: return "wallhack";
    case CheatKind::TriggerbotPoll: return "triggerbot_poll";
    case CheatKind::TriggerbotEvent: return "triggerbot_event";
    }
    return "?";
}

CheatRuntime::CheatRuntime(VmiSession& session, InputChannel& input, GameLayout layout, CheatOptions options,
                           OverlaySink* sink)
    : session_(session), input_(input), layout_(std::move(layout)), options_(std::move(options)), sink_(sink)
{
    if (!(options_.poll_interval_ms > 0)) {
        fail(ErrorCode::InvalidArgument, "poll interval must be positive");
    }
}

CheatRuntime::~CheatRuntime()
{
    try {
        stop();
    } catch (const SimError&) {
    }
}

void CheatRuntime::start()
{
    if (started_) {
        return;
    }
    started_ = true;
    next_due_ns_ = session_.guest().sim_time_ns();
    if (options_.kind == CheatKind::TriggerbotEvent) {
        // The watch callback runs from pump_events.
        watch_ = triggerbot_event_setup(session_, layout_, trigger_, input_, options_.trigger, options_.use_spp);
    }
}

void CheatRuntime::stop()
{
    if (watch_) {
        session_.unregister_watch(*watch_);
        watch_.reset();
    }
    started_ = false;
}

CheatTelemetry CheatRuntime::telemetry() const
{
    CheatTelemetry t = telemetry_;
    t.commands = trigger_.commands;
    return t;
}

void CheatRuntime::reader_task()
{
    if (options_.kind == CheatKind::TriggerbotPoll) {
        triggerbot_poll_step(session_, layout_, trigger_, input_, options_.trigger);
        return;
    }
    SnapshotStats stats;
    try {
        latest_ = std::make_shared<const GameSnapshot>(read_snapshot(session_, options_.trigger.process, layout_, &stats));
        ++telemetry_.snapshots_built;
    } catch (const SimError& e) {
        if (e.code() != ErrorCode::StaleOffsets) {
            throw;
        }
        ++telemetry_.stale_reads;
    }
    telemetry_.list_pointer_fallbacks += stats.list_pointer_fallbacks;
}

void CheatRuntime::overlay_task()
{
    if (!latest_ || sink_ == nullptr) {
        return;
    }
    const std::uint64_t reads_before = session_.host_reads();
    const GameSnapshot& snap = *latest_;
    if (options_.kind == CheatKind::Radar) {
        sink_->emit(radar_frame(snap, options_.radar));
        ++telemetry_.frames_emitted;
    } else if (options_.kind == CheatKind::Wallhack) {
        try {
            sink_->emit(wallhack_frame(snap, options_.trigger.screen, options_.trigger.entity_height));
        } catch (const SimError& e) {
            if (e.code() != ErrorCode::InvalidMatrix) {
                throw;
            }
            ++telemetry_.invalid_frames;
            sink_->emit(OverlayFrame{snap.tick, {}});
        }
        ++telemetry_.frames_emitted;
    }
    telemetry_.overlay_guest_reads += session_.host_reads() - reads_before;
}

void CheatRuntime::on_tick()
{
    if (!started_) {
        return;
    }
    if (options_.kind == CheatKind::TriggerbotEvent) {
        return;
    }
    const double now = session_.guest().sim_time_ns();
    const double interval = options_.poll_interval_ms * 1e6;
    while (next_due_ns_ <= now) {
        reader_task();
        overlay_task();
        next_due_ns_ += interval;
    }
}

void CheatRuntime::count_events(std::uint64_t n) noexcept
{
    telemetry_.events_handled += n;
}

CheatTelemetry cheat_run(VmiSession& session, InputChannel& input, const GameLayout& layout,
                         const CheatOptions& options, OverlaySink& sink, std::uint64_t duration_ticks)
{
    CheatRuntime runtime(session, input, layout, options, &sink);
    runtime.start();
    const std::uint64_t end = session.guest().logical_time() + duration_ticks;
    while (session.guest().logical_time() < end) {
        runtime.count_events(session.pump_events(session.guest().logical_time() + 1).size());
        runtime.on_tick();
    }
    runtime.stop();
    return runtime.telemetry();
}

} // namespace vic
