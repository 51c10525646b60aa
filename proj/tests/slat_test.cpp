#include "support.hpp"
#include "vic/slat.hpp"

#include <gtest/gtest.h>

#include <vector>

using namespace vic;
using vic::test::error_of;
using vic::test::Rng;

namespace {

SlatConfig small_slat()
{
    SlatConfig c;
    c.guest_frames = 16;
    return c;
}

AccessOutcome do_write(Slat& s, std::uint64_t gpa, std::vector<std::uint8_t> bytes)
{
    return s.access(AccessRequest{1, GuestVirtAddr{gpa}, GuestPhysAddr{gpa}, AccessKind::Write}, bytes);
}

AccessOutcome do_read(Slat& s, std::uint64_t gpa, std::size_t len)
{
    std::vector<std::uint8_t> out(len);
    return s.access(AccessRequest{1, GuestVirtAddr{gpa}, GuestPhysAddr{gpa}, AccessKind::Read}, out);
}

constexpr std::uint64_t kF = 3 * kPage4K; // frame under test

} // namespace

TEST(Slat, IdentityMapSeesHostBytes)
{
    Slat s(small_slat());
    const std::array<std::uint8_t, 3> b{9, 8, 7};
    s.host_write(GuestPhysAddr{kF + 5}, b);
    std::vector<std::uint8_t> out(3);
    s.access(AccessRequest{1, {}, GuestPhysAddr{kF + 5}, AccessKind::Read}, out);
    EXPECT_EQ(out, (std::vector<std::uint8_t>{9, 8, 7}));
}

TEST(Slat, RemapRedirectsToNewHostFrame)
{
    Slat s(small_slat());
    const std::array<std::uint8_t, 1> b{0x5A};
    s.host_write(GuestPhysAddr{15 * kPage4K}, b); // host frame 15 via identity
    s.slat_unmap(5);
    s.slat_map(5, 15, KindSet::all());
    std::vector<std::uint8_t> out(1);
    s.access(AccessRequest{1, {}, GuestPhysAddr{5 * kPage4K}, AccessKind::Read}, out);
    EXPECT_EQ(out[0], 0x5A);
    EXPECT_EQ(error_of([&] { s.slat_map(5, 16, KindSet::all()); }), ErrorCode::DuplicateMapping);
}

TEST(Slat, UnmappedAccessIsUnhandledViolation)
{
    Slat s(small_slat());
    s.slat_unmap(4);
    EXPECT_EQ(error_of([&] { do_read(s, 4 * kPage4K, 4); }), ErrorCode::SlatViolationUnhandled);
    EXPECT_EQ(error_of([&] { s.set_page_guard(4, {}, KindSet::all(), nullptr); }), ErrorCode::UnmappedFrame);
}

TEST(Slat, RelevantWriteDeliversOldAndNew)
{
    Slat s(small_slat());
    const std::array<std::uint8_t, 4> init{1, 1, 1, 1};
    s.host_write(GuestPhysAddr{kF + 0x10}, init);
    std::vector<MemoryEvent> seen;
    s.set_page_guard(3, {{0x10, 4}}, {AccessKind::Write}, [&](const MemoryEvent& e) { seen.push_back(e); });
    const AccessOutcome o = do_write(s, kF + 0x10, {2, 3, 4, 5});
    EXPECT_TRUE(o.trapped);
    EXPECT_TRUE(o.relevant);
    EXPECT_EQ(o.cost_ns, 50'000);
    ASSERT_EQ(seen.size(), 1U);
    EXPECT_EQ(seen[0].old_value, (std::vector<std::uint8_t>{1, 1, 1, 1}));
    EXPECT_EQ(seen[0].new_value, (std::vector<std::uint8_t>{2, 3, 4, 5}));
    EXPECT_TRUE(seen[0].relevant);
    EXPECT_EQ(seen[0].kind, AccessKind::Write);
}

TEST(Slat, IrrelevantEventsAreChargedNotDelivered)
{
    Slat s(small_slat());
    int calls = 0;
    s.set_page_guard(3, {{0x10, 4}}, {AccessKind::Write}, [&](const MemoryEvent&) { ++calls; });
    const AccessOutcome o = do_write(s, kF + 0x800, {1});
    EXPECT_TRUE(o.trapped);
    EXPECT_FALSE(o.relevant);
    EXPECT_EQ(o.cost_ns, s.costs().vmexit_ns());
    EXPECT_EQ(calls, 0);
    EXPECT_EQ(s.ledger().trapped, 1U);
    EXPECT_EQ(s.ledger().relevant, 0U);
    EXPECT_EQ(s.entry(3).trapped_accesses, 1U);

    s.set_deliver_irrelevant(true);
    do_write(s, kF + 0x800, {2});
    EXPECT_EQ(calls, 1);
}

TEST(Slat, UnguardedAccessCostsBaseline)
{
    Slat s(small_slat());
    const AccessOutcome o = do_write(s, kF, {1, 2});
    EXPECT_FALSE(o.trapped);
    EXPECT_EQ(o.cost_ns, 100);
}

TEST(Slat, RemoveGuardRestoresPerms)
{
    Slat s(small_slat());
    const KindSet before = s.effective_perms(3);
    const GuardId id = s.set_page_guard(3, {{0, 8}}, {AccessKind::Write}, nullptr);
    EXPECT_FALSE(s.effective_perms(3).contains(AccessKind::Write));
    s.remove_guard(id);
    EXPECT_EQ(s.effective_perms(3), before);
    EXPECT_FALSE(do_write(s, kF, {1}).trapped);
    EXPECT_EQ(s.guard_count(), 0U);
    EXPECT_EQ(error_of([&] { s.remove_guard(id); }), ErrorCode::NoSuchGuard);
}

TEST(Slat, GuardOnlyTrapsItsKinds)
{
    Slat s(small_slat());
    s.set_page_guard(3, {{0, 8}}, {AccessKind::Write}, nullptr);
    EXPECT_FALSE(do_read(s, kF, 4).trapped);
    EXPECT_TRUE(do_write(s, kF, {0}).trapped);
}

TEST(Slat, RearmsAcrossThousandWrites)
{
    Slat s(small_slat());
    std::vector<std::uint32_t> seen;
    s.set_page_guard(3, {{0x40, 4}}, {AccessKind::Write}, [&](const MemoryEvent& e) {
        seen.push_back(static_cast<std::uint32_t>(e.new_value[0]) | static_cast<std::uint32_t>(e.new_value[1]) << 8);
    });
    for (std::uint32_t i = 0; i < 1000; ++i) {
        const AccessOutcome o = do_write(s, kF + 0x40, {static_cast<std::uint8_t>(i), static_cast<std::uint8_t>(i >> 8)});
        ASSERT_TRUE(o.trapped) << "write " << i;
    }
    ASSERT_EQ(seen.size(), 1000U);
    for (std::uint32_t i = 0; i < 1000; ++i) {
        EXPECT_EQ(seen[i], i);
    }
}

// Random accesses against a guarded frame and its neighbours: the number of
// events observed for the frame equals the number of guarded-kind accesses.
TEST(Slat, EventConservation)
{
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Slat s(small_slat());
        std::uint64_t observed = 0;
        std::uint64_t delivered = 0;
        s.set_event_observer([&](const MemoryEvent& e) {
            if (e.gpa.gfn() == 3) {
                ++observed;
            }
        });
        const KindSet kinds = KindSet::from_bits(1 + static_cast<unsigned>(rng.below(7)));
        s.set_page_guard(3, {{rng.below(2048), 1 + rng.below(512)}}, kinds, [&](const MemoryEvent&) { ++delivered; });
        std::uint64_t expected = 0;
        std::uint64_t relevant_seen = 0;
        for (int i = 0; i < 500; ++i) {
            const std::uint64_t gfn = 2 + rng.below(3);
            const std::uint64_t len = 1 + rng.below(64);
            const std::uint64_t off = rng.below(kPage4K - len);
            const AccessKind kind = rng.coin() ? AccessKind::Read : AccessKind::Write;
            std::vector<std::uint8_t> buf(len, static_cast<std::uint8_t>(i));
            const AccessOutcome o =
                s.access(AccessRequest{1, {}, GuestPhysAddr{gfn * kPage4K + off}, kind}, buf);
            if (gfn == 3 && kinds.contains(kind)) {
                ++expected;
            }
            relevant_seen += o.relevant ? 1 : 0;
        }
        EXPECT_EQ(observed, expected);
        EXPECT_EQ(s.entry(3).trapped_accesses, expected);
        EXPECT_EQ(delivered, relevant_seen);
    }
}

TEST(Slat, CostAccountingIsExact)
{
    Rng rng(12);
    Slat s(small_slat());
    s.set_page_guard(3, {{0, 16}}, KindSet::all(), nullptr);
    s.set_page_guard(6, {{100, 16}}, {AccessKind::Write}, nullptr);
    std::int64_t sum = 0;
    for (int i = 0; i < 2000; ++i) {
        const std::uint64_t gpa = rng.below(8) * kPage4K + rng.below(kPage4K - 8);
        sum += rng.coin() ? do_write(s, gpa, {1, 2}).cost_ns : do_read(s, gpa, 8).cost_ns;
    }
    const CostLedger& l = s.ledger();
    EXPECT_EQ(l.trapped + l.untrapped, 2000U);
    EXPECT_EQ(l.total_ns, static_cast<std::int64_t>(l.trapped) * 50'000 + static_cast<std::int64_t>(l.untrapped) * 100);
    EXPECT_EQ(sum, l.total_ns);
}

TEST(Slat, SppBitmapSelectsSubRanges)
{
    Slat s(small_slat());
    const GuardId id = s.set_page_guard(3, {{0x40, 4}}, {AccessKind::Write}, nullptr);
    s.set_spp_bitmap(id, 0x1);
    EXPECT_TRUE(do_write(s, kF + 0x40, {1}).trapped);
    const AccessOutcome o = do_write(s, kF + 0x100, {1});
    EXPECT_FALSE(o.trapped);
    EXPECT_EQ(o.cost_ns, s.costs().baseline_ns());
    // An access spanning sub-ranges 0 and 1 touches a protected one.
    EXPECT_TRUE(do_write(s, kF + 0x7E, {1, 2, 3, 4}).trapped);
}

TEST(Slat, SppRejectedOnHugeGuard)
{
    SlatConfig c;
    c.guest_frames = 1024;
    Slat s(c);
    const GuardId id = s.set_page_guard(512, {{0, 4}}, {AccessKind::Write}, nullptr, PageSize::k2M);
    EXPECT_EQ(error_of([&] { s.set_spp_bitmap(id, 1); }), ErrorCode::HugePageUnsupported);
    // The huge guard covers all 512 small frames.
    EXPECT_TRUE(do_write(s, 1000 * kPage4K + 8, {1}).trapped);
}

// With every sub-range set the guard behaves exactly as if no bitmap existed.
TEST(Slat, FullSppBitmapIsTransparent)
{
    struct Trace {
        std::vector<AccessOutcome> outcomes;
        std::vector<std::pair<std::uint64_t, std::vector<std::uint8_t>>> delivered;
        CostLedger ledger;
    };
    auto run = [](bool with_bitmap) {
        Rng rng(99);
        Slat s(small_slat());
        Trace t;
        const GuardId id = s.set_page_guard(3, {{0x200, 64}, {0x900, 8}}, KindSet::all(), [&](const MemoryEvent& e) {
            t.delivered.emplace_back(e.sequence, e.new_value);
        });
        if (with_bitmap) {
            s.set_spp_bitmap(id, 0xFFFF'FFFFU);
        }
        for (int i = 0; i < 3000; ++i) {
            const std::uint64_t len = 1 + rng.below(32);
            const std::uint64_t gpa = (2 + rng.below(3)) * kPage4K + rng.below(kPage4K - len);
            std::vector<std::uint8_t> buf(len, static_cast<std::uint8_t>(rng.u64()));
            const AccessKind k = static_cast<AccessKind>(1U << rng.below(3));
            t.outcomes.push_back(s.access(AccessRequest{1, {}, GuestPhysAddr{gpa}, k}, buf));
        }
        t.ledger = s.ledger();
        return t;
    };
    const Trace a = run(false);
    const Trace b = run(true);
    ASSERT_EQ(a.outcomes.size(), b.outcomes.size());
    for (std::size_t i = 0; i < a.outcomes.size(); ++i) {
        EXPECT_EQ(a.outcomes[i].trapped, b.outcomes[i].trapped);
        EXPECT_EQ(a.outcomes[i].relevant, b.outcomes[i].relevant);
        EXPECT_EQ(a.outcomes[i].cost_ns, b.outcomes[i].cost_ns);
    }
    EXPECT_EQ(a.delivered, b.delivered);
    EXPECT_EQ(a.ledger.trapped, b.ledger.trapped);
    EXPECT_EQ(a.ledger.relevant, b.ledger.relevant);
    EXPECT_EQ(a.ledger.total_ns, b.ledger.total_ns);
}

TEST(Slat, CallbacksRunInsideCallbackScope)
{
    Slat s(small_slat());
    bool inside = false;
    s.set_page_guard(3, {{0, 4}}, {AccessKind::Write}, [&](const MemoryEvent&) { inside = s.in_callback(); });
    do_write(s, kF, {1});
    EXPECT_TRUE(inside);
    EXPECT_FALSE(s.in_callback());
}

TEST(Slat, EncryptionHidesPlaintextFromHost)
{
    Slat s(small_slat());
    s.set_encrypted(3, 0xC0FFEE);
    std::vector<std::uint8_t> plain(256);
    for (std::size_t i = 0; i < plain.size(); ++i) {
        plain[i] = static_cast<std::uint8_t>(i * 7 + 1);
    }
    s.access(AccessRequest{1, {}, GuestPhysAddr{kF}, AccessKind::Write}, plain);
    std::vector<std::uint8_t> stored(plain.size());
    s.host_read(GuestPhysAddr{kF}, stored);
    std::size_t same = 0;
    for (std::size_t i = 0; i < plain.size(); ++i) {
        same += stored[i] == plain[i] ? 1 : 0;
    }
    EXPECT_LT(same, 16U);
    std::vector<std::uint8_t> back(plain.size());
    s.access(AccessRequest{1, {}, GuestPhysAddr{kF}, AccessKind::Read}, back);
    EXPECT_EQ(back, plain);
    std::vector<std::uint8_t> truth(plain.size());
    s.inspect(GuestPhysAddr{kF}, truth);
    EXPECT_EQ(truth, plain);
}

TEST(Slat, CostModelValidation)
{
    CostModel c;
    EXPECT_EQ(c.vmexit_ns(), 50'000);
    EXPECT_EQ(c.baseline_ns(), 100);
    c.vmexit_cost_us = 0.05;
    c.baseline_access_cost_us = 0.1;
    EXPECT_EQ(error_of([&] { c.validate(); }), ErrorCode::InvalidArgument);
}
