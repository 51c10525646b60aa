#include "support.hpp"
#include "vic/game.hpp"
#include "vic/vmi.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

using namespace vic;
using vic::test::error_of;
using vic::test::reference_project;
using vic::test::Rng;

namespace {

struct Rig {
    explicit Rig(GameConfig cfg = {}, std::uint64_t seed = 7) : game(guest, input, std::move(cfg), seed) {}
    GuestMachine guest;
    InputChannel input;
    Game game;
};

// Closed-form loop position, computed independently in double.
std::array<double, 3> loop_position(const EntityScript& s, double t)
{
    const std::size_t n = s.waypoints.size();
    std::vector<double> seg(n);
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& a = s.waypoints[i];
        const Vec3& b = s.waypoints[(i + 1) % n];
        seg[i] = std::hypot(static_cast<double>(b.x) - a.x, static_cast<double>(b.y) - a.y,
                            static_cast<double>(b.z) - a.z);
        total += seg[i];
    }
    double d = std::fmod(t * s.speed, total);
    std::size_t i = 0;
    while (i + 1 < n && d >= seg[i]) {
        d -= seg[i];
        ++i;
    }
    const Vec3& a = s.waypoints[i];
    const Vec3& b = s.waypoints[(i + 1) % n];
    const double f = d / seg[i];
    return {a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f, a.z + (b.z - a.z) * f};
}

EntityScript stationary(Vec3 at, std::uint8_t team)
{
    EntityScript s;
    s.waypoints = {at};
    s.speed = 0;
    s.team = team;
    return s;
}

std::string temp_path(const std::string& tag)
{
    return (std::filesystem::temp_directory_path() / ("vic-" + tag + "-" + std::to_string(::getpid()))).string();
}

} // namespace

TEST(Game, InitWritesEntityTable)
{
    Rig r;
    EXPECT_EQ(r.guest.inspect<std::uint64_t>(r.game.process(), r.game.layout().at(r.game.layout().entity_count)), 24U);
    const auto list = r.guest.inspect<std::uint64_t>(r.game.process(), r.game.layout().at(r.game.layout().entity_list_addr));
    EXPECT_EQ(list, kGameBase + game_offsets::kEntityList);
    for (std::uint32_t i = 0; i < 24; ++i) {
        const EntityRecord e = r.game.inspect_entity(i);
        EXPECT_EQ(e.alive, 1);
        EXPECT_EQ(e.health, 100);
        EXPECT_EQ(e.team, i % 2 == 0 ? kTeamEnemy : kTeamAlly);
    }
}

TEST(Game, InitIsByteIdentical)
{
    Rig a;
    Rig b;
    EXPECT_EQ(a.game.memory_image(), b.game.memory_image());
    Rig c(GameConfig{}, 8);
    EXPECT_NE(a.game.memory_image(), c.game.memory_image());
}

TEST(Game, HugePagesBackTheState)
{
    GameConfig cfg;
    cfg.mitigations.huge_pages = true;
    Rig r(cfg);
    const TranslationResult t = r.guest.translate(r.game.process(), r.game.layout().at(game_offsets::kEntityList));
    EXPECT_EQ(t.page_size, PageSize::k2M);
    Rig plain;
    EXPECT_EQ(plain.guest.translate(plain.game.process(), plain.game.layout().at(game_offsets::kEntityList)).page_size,
              PageSize::k4K);
}

TEST(Game, EntitiesFollowWaypointsExactly)
{
    Rig r;
    for (int t = 0; t < 1200; ++t) {
        r.game.tick();
        if (t % 7 != 0) {
            continue;
        }
        const double secs = static_cast<double>(r.game.ticks()) / 60.0;
        for (std::uint32_t i = 0; i < 24; ++i) {
            const EntityRecord e = r.game.inspect_entity(i);
            const auto want = loop_position(r.game.scripts()[i], secs);
            EXPECT_NEAR(e.pos.x, want[0], 1e-2);
            EXPECT_NEAR(e.pos.y, want[1], 1e-2);
            EXPECT_NEAR(e.pos.z, want[2], 1e-2);
        }
    }
}

TEST(Game, EntityInvariantsHold)
{
    Rig r;
    Rng rng(4);
    for (int t = 0; t < 3000; ++t) {
        if (rng.below(30) == 0) {
            r.input.inject(InputEvent::mouse_button(button::kLeft, rng.coin(), InputOrigin::Scripted));
        }
        r.input.inject(InputEvent::mouse_move(static_cast<std::int16_t>(rng.below(21)) - 10, 0, InputOrigin::Scripted));
        r.game.tick();
        for (std::uint32_t i = 0; i < 24; ++i) {
            const EntityRecord e = r.game.inspect_entity(i);
            if (e.alive != 0) {
                ASSERT_GT(e.health, 0);
            }
            ASSERT_LE(std::abs(e.pos.x), 4096.0F);
            ASSERT_LE(std::abs(e.pos.y), 4096.0F);
            ASSERT_GE(e.pos.z, 0.0F);
            ASSERT_LE(e.pos.z, 512.0F);
        }
    }
}

TEST(Game, CentredEnemyIsUnderCrosshair)
{
    GameConfig cfg;
    cfg.scripts = {stationary({800, 300, 0}, kTeamEnemy), stationary({600, 0, 0}, kTeamEnemy),
                   stationary({300, 0, 0}, kTeamAlly)};
    cfg.scripts[2].waypoints = {{300, 900, 0}};
    Rig r(cfg);
    r.game.tick();
    EXPECT_EQ(r.game.inspect_crosshair(), 1);
}

TEST(Game, NearestCoveringEntityWins)
{
    GameConfig cfg;
    cfg.scripts = {stationary({900, 0, 0}, kTeamEnemy), stationary({400, 0, 0}, kTeamAlly)};
    Rig r(cfg);
    r.game.tick();
    EXPECT_EQ(r.game.inspect_crosshair(), 1);
}

TEST(Game, NothingAheadIsMinusOne)
{
    GameConfig cfg;
    cfg.scripts = {stationary({-900, 0, 0}, kTeamEnemy)};
    Rig r(cfg);
    r.game.tick();
    EXPECT_EQ(r.game.inspect_crosshair(), -1);
}

// The stored crosshair equals a projection oracle run on the ground truth.
TEST(Game, RaycastMatchesOracle)
{
    Rig r;
    Rng rng(12);
    const Screen screen;
    int on_target = 0;
    for (int t = 0; t < 4000; ++t) {
        r.input.inject(InputEvent::mouse_move(static_cast<std::int16_t>(8 + rng.below(8)), 0, InputOrigin::Scripted));
        r.game.tick();
        const Mat4 vp = r.game.inspect_view_proj();
        std::int32_t want = -1;
        long double best = 0;
        for (std::uint32_t i = 0; i < 24; ++i) {
            const EntityRecord e = r.game.inspect_entity(i);
            if (e.alive == 0) {
                continue;
            }
            const auto feet = reference_project(e.pos, vp, screen.width, screen.height);
            const auto head = reference_project(e.pos + Vec3{0, 0, 72}, vp, screen.width, screen.height);
            if (!feet || !head) {
                continue;
            }
            const long double h = (*feet)[1] - (*head)[1];
            const long double cx = ((*feet)[0] + (*head)[0]) / 2;
            const bool covers = std::fabs(640.0L - cx) <= h / 4 && (*head)[1] <= 360.0L && 360.0L <= (*feet)[1];
            long double depth = 0;
            for (int c = 0; c < 3; ++c) {
                depth += static_cast<long double>(vp.at(3, c)) * (c == 0 ? e.pos.x : c == 1 ? e.pos.y : e.pos.z);
            }
            depth += vp.at(3, 3);
            if (covers && (want < 0 || depth < best)) {
                want = static_cast<std::int32_t>(i);
                best = depth;
            }
        }
        ASSERT_EQ(r.game.inspect_crosshair(), want) << "tick " << r.game.ticks();
        on_target += want >= 0 ? 1 : 0;
    }
    EXPECT_GT(on_target, 0);
}

TEST(Game, TenTicksOfFireDealFifty)
{
    GameConfig cfg;
    cfg.scripts = {stationary({600, 0, 0}, kTeamEnemy)};
    Rig r(cfg);
    r.input.inject_at(InputEvent::mouse_button(button::kLeft, true, InputOrigin::Scripted), 1);
    r.input.inject_at(InputEvent::mouse_button(button::kLeft, false, InputOrigin::Scripted), 11);
    for (int t = 0; t < 20; ++t) {
        r.game.tick();
    }
    EXPECT_EQ(r.game.inspect_entity(0).health, 50);
    EXPECT_EQ(r.game.stats().fire_bursts, 1U);
    EXPECT_EQ(r.game.stats().hits, 10U);
}

TEST(Game, KillAndRespawn)
{
    GameConfig cfg;
    cfg.scripts = {stationary({600, 0, 0}, kTeamEnemy)};
    Rig r(cfg);
    r.input.inject_at(InputEvent::mouse_button(button::kLeft, true, InputOrigin::Scripted), 1);
    for (int t = 0; t < 20; ++t) {
        r.game.tick();
    }
    EXPECT_EQ(r.game.inspect_entity(0).alive, 0);
    EXPECT_EQ(r.game.inspect_entity(0).health, 0);
    EXPECT_EQ(r.game.stats().kills, 1U);
    for (int t = 0; t < 90; ++t) {
        r.game.tick();
    }
    EXPECT_EQ(r.game.inspect_entity(0).alive, 1);
}

TEST(Game, KeyWMovesForward)
{
    GameConfig cfg;
    cfg.scripts = {stationary({-900, 0, 0}, kTeamEnemy)};
    Rig r(cfg);
    const LocalPlayerRecord before = r.game.inspect_local_player();
    r.input.inject_at(InputEvent::key(*qcode_to_code("w"), true, InputOrigin::Synthetic), 1);
    r.input.inject_at(InputEvent::key(*qcode_to_code("w"), false, InputOrigin::Synthetic), 11);
    for (int t = 0; t < 15; ++t) {
        r.game.tick();
    }
    const LocalPlayerRecord after = r.game.inspect_local_player();
    EXPECT_NEAR(after.pos.x - before.pos.x, 10 * 320.0 / 60.0, 1e-3);
    EXPECT_NEAR(after.pos.y - before.pos.y, 0.0, 1e-4);
}

TEST(Game, MouseTurnsCamera)
{
    Rig r;
    r.input.inject(InputEvent::mouse_move(-40, 0, InputOrigin::Synthetic));
    r.game.tick();
    EXPECT_FLOAT_EQ(r.game.inspect_local_player().yaw_deg, 10.0F);
}

TEST(Game, DeterministicOverTenThousandTicks)
{
    auto trace = [] {
        Rig r;
        Rng rng(31);
        std::vector<std::uint64_t> h;
        for (int t = 0; t < 10000; ++t) {
            if (rng.below(40) == 0) {
                r.input.inject(InputEvent::mouse_button(button::kLeft, rng.coin(), InputOrigin::Synthetic));
            }
            if (rng.below(5) == 0) {
                r.input.inject(InputEvent::key(static_cast<std::uint16_t>(0x04 + rng.below(26)), rng.coin(),
                                               InputOrigin::Scripted));
            }
            r.input.inject(InputEvent::mouse_move(static_cast<std::int16_t>(rng.below(9)) - 4,
                                                  static_cast<std::int16_t>(rng.below(3)) - 1, InputOrigin::Scripted));
            r.game.tick();
            h.push_back(r.game.state_hash());
        }
        return h;
    };
    const auto a = trace();
    const auto b = trace();
    EXPECT_EQ(a, b);
}

TEST(Game, FireStateStaysCoherentUnderGuestWrites)
{
    Rig r;
    Rng rng(9);
    const GameLayout& l = r.game.layout();
    for (int t = 0; t < 2000; ++t) {
        if (rng.below(10) == 0) {
            r.input.inject(InputEvent::mouse_button(button::kLeft, rng.coin(), InputOrigin::Synthetic));
        }
        r.game.tick();
        EXPECT_EQ(r.guest.inspect<std::uint32_t>(r.game.process(), l.at(l.fire_state_primary)),
                  r.guest.inspect<std::uint32_t>(r.game.process(), l.at(l.fire_state_shadow)));
    }
    EXPECT_EQ(r.game.stats().redundancy_mismatch_ticks, 0U);
}

TEST(Game, BudgetLaw)
{
    // Unwatched: every tick is the nominal budget. Watched: the tick lasts as
    // long as everything charged to it.
    Rig r;
    for (int t = 0; t < 120; ++t) {
        EXPECT_NEAR(r.game.tick(), 1e9 / 60, 1e-3);
    }
    VmiSession s(r.guest);
    s.register_watch("game", r.game.layout().at(*r.game.layout().crosshair_entity), 4, nullptr);
    for (int t = 0; t < 120; ++t) {
        const double d = r.game.tick();
        const double charged = static_cast<double>(r.guest.tick_charged_ns());
        EXPECT_NEAR(d, std::max(1e9 / 60, charged), 1e-3);
        const double rate = 1e9 / d;
        EXPECT_NEAR(rate, std::min(60.0, 1e9 / charged), 1e-9);
        EXPECT_LT(rate, 15.0);
        (void)s.pump_events(r.game.ticks());
    }
}

TEST(Offsets, RoundTrip)
{
    Rig r;
    const std::string path = temp_path("offsets");
    export_offsets(r.game.layout(), path);
    EXPECT_EQ(load_offsets(path), r.game.layout());
    std::filesystem::remove(path);

    GameConfig cfg;
    cfg.expose_crosshair = false;
    Rig hidden(cfg);
    const GameLayout l = parse_offsets(format_offsets(hidden.game.layout()));
    EXPECT_FALSE(l.crosshair_entity.has_value());
    EXPECT_EQ(l, hidden.game.layout());
}

TEST(Offsets, Format)
{
    const std::string text = format_offsets(GameLayout{});
    EXPECT_EQ(text.substr(0, text.find('\n')), "base = 0x140000000");
    EXPECT_NE(text.find("crosshair_entity = 0x80\n"), std::string::npos);
    EXPECT_NE(text.find("entity_stride = 0x20\n"), std::string::npos);
}

TEST(Offsets, MissingKeyIsNamed)
{
    std::string text = format_offsets(GameLayout{});
    const auto at = text.find("frame_counter");
    text.erase(at, text.find('\n', at) - at + 1);
    try {
        (void)parse_offsets(text);
        FAIL() << "expected ParseError";
    } catch (const SimError& e) {
        EXPECT_EQ(e.code(), ErrorCode::ParseError);
        EXPECT_NE(std::string(e.what()).find("frame_counter"), std::string::npos);
    }
}

TEST(Offsets, RejectsUnknownDuplicateAndBadHex)
{
    const std::string good = format_offsets(GameLayout{});
    EXPECT_EQ(error_of([&] { (void)parse_offsets(good + "bogus = 0x1\n"); }), ErrorCode::ParseError);
    EXPECT_EQ(error_of([&] { (void)parse_offsets(good + "base = 0x1\n"); }), ErrorCode::ParseError);
    std::string bad = good;
    bad.replace(bad.find("0x20"), 4, "0xZZ");
    EXPECT_EQ(error_of([&] { (void)parse_offsets(bad); }), ErrorCode::ParseError);
    EXPECT_EQ(parse_offsets("# comment\n\n" + good), GameLayout{});
    EXPECT_EQ(error_of([&] { (void)load_offsets("/nonexistent/offsets.txt"); }), ErrorCode::IoFailure);
    EXPECT_EQ(error_of([&] { export_offsets(GameLayout{}, "/nonexistent/offsets.txt"); }), ErrorCode::IoFailure);
}

TEST(Offsets, ValidAgainstReseededGame)
{
    Rig a;
    const GameLayout l = parse_offsets(format_offsets(a.game.layout()));
    Rig b(GameConfig{}, 1234);
    for (int t = 0; t < 10; ++t) {
        b.game.tick();
    }
    VmiSession s(b.guest);
    const auto count = s.read_value<std::uint64_t>("game", l.at(l.entity_count));
    EXPECT_EQ(count, 24U);
    const auto list = s.read_value<std::uint64_t>("game", l.at(l.entity_list_addr));
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto e = s.read_value<EntityRecord>("game", GuestVirtAddr{list + i * l.entity_stride});
        EXPECT_EQ(e.alive, 1);
    }
    EXPECT_EQ(s.read_value<std::uint64_t>("game", l.at(l.frame_counter)), 10U);
    (void)s.read_value<std::int32_t>("game", l.at(*l.crosshair_entity));
    (void)s.read_value<std::array<float, 16>>("game", l.at(l.view_proj_matrix));
}
