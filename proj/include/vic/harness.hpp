#pragma once

// Scenario runner: benchmark and cheat sessions on simulated time, sampled
// once per simulated second, averaged over repetitions, and written to a
// versioned JSON report.

#include "vic/anticheat.hpp"
#include "vic/cheats.hpp"
#include "vic/game.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace vic {

enum class ScenarioName { Benchmark, Radar, Wallhack, TriggerbotPoll, TriggerbotEvent, TriggerbotEventSpp };
const char* to_string(ScenarioName n) noexcept;
std::optional<ScenarioName> scenario_from_string(const std::string& name);

struct Scenario {
    ScenarioName name = ScenarioName::Benchmark;
    GameConfig game;
    std::uint64_t seed = 7;
    double session_seconds = 600.0;
    std::uint32_t repetitions = 3;
    CostModel costs;
    bool ud_on_vmread = true;
    double poll_interval_ms = 16.0;
    bool unsafe_memory_fire = false;
    RadarConfig radar;
    /// Scripted player: mouse counts per tick turning the camera.
    std::int16_t scripted_turn = 4;
    /// Frame log for the first repetition (radar and wall-hack only).
    std::optional<std::string> overlay_log;
    /// Record a state hash after every tick.
    bool record_state_trace = false;
};

struct CheatSummary {
    std::uint64_t snapshots_built = 0;
    std::uint64_t frames_emitted = 0;
    std::uint64_t commands = 0;
    std::uint64_t overlay_guest_reads = 0;
    std::uint64_t list_pointer_fallbacks = 0;
    std::uint64_t stale_reads = 0;
};

struct RepetitionResult {
    std::uint32_t index = 0;
    std::uint64_t seed = 0;
    std::uint64_t ticks = 0;
    std::vector<double> rate;   // achieved ticks/s per simulated second
    std::vector<double> events; // trapped accesses per simulated second
    ProbeReport probes;
    CheatSummary cheat;
    std::uint64_t fire_bursts = 0;
    std::vector<std::uint64_t> state_trace;
};

struct SessionReport {
    Scenario scenario;
    std::vector<RepetitionResult> repetitions;
    std::vector<double> averaged;
    std::vector<double> events_per_second;
    ProbeReport probes;

    [[nodiscard]] double mean_rate() const;
    [[nodiscard]] double mean_events_per_second() const;
};

/// Rounds to 1e-6 so per-second sums of tick fractions are exact.
double round_micro(double v);

/// Adds the tick [start, end) (seconds since the session origin) to the
/// per-second series, weighting each second by its share of the tick.
void accumulate_tick(std::vector<double>& per_second, double start_s, double end_s);

RepetitionResult run_repetition(const Scenario& scenario, std::uint32_t index);
SessionReport run_scenario(const Scenario& scenario);

struct Quartiles {
    double q1 = 0;
    double q2 = 0;
    double q3 = 0;
};

/// Linear interpolation between closest ranks (Hyndman-Fan type 7).
Quartiles quartiles(std::vector<double> values);

struct DiffStats {
    std::vector<double> series; // baseline - cheat
    double mean = 0;
    Quartiles q;
    double min = 0;
    double max = 0;
};

DiffStats diff_series(const std::vector<double>& cheat, const std::vector<double>& baseline);
/// Throws LengthMismatch on unequal series lengths.
DiffStats diff_report(const SessionReport& cheat, const SessionReport& baseline);

struct CorrelationResult {
    std::vector<std::uint32_t> players;
    std::vector<double> events_per_second;
    bool non_decreasing = true;
    bool strictly_increasing = true;
};

CorrelationResult events_per_player_correlation(const std::vector<SessionReport>& reports);

inline constexpr const char* kReportFormat = "vic-sim-report";
inline constexpr int kReportVersion = 1;

std::string report_to_json(const SessionReport& report);
SessionReport report_from_json(const std::string& text);
void write_report(const SessionReport& report, const std::string& path);
SessionReport read_report(const std::string& path);
std::string diff_to_json(const DiffStats& diff);
/// Plain-text table in the spirit of a box plot: one row per report.
std::string summary_table(const std::vector<std::pair<std::string, DiffStats>>& rows);

} // namespace vic
