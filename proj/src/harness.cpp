#include "vic/harness.hpp"

#include "vic/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>

namespace vic {

namespace {

using json = nlohmann::ordered_json;

CheatKind cheat_kind(ScenarioName n)
{
    switch (n) {
    case ScenarioName::Radar: return CheatKind::Radar;
    case ScenarioName::Wallhack: return CheatKind::Wallhack;
    case ScenarioName::TriggerbotPoll: return CheatKind::TriggerbotPoll;
    case ScenarioName::TriggerbotEvent:
    case ScenarioName::TriggerbotEventSpp: return CheatKind::TriggerbotEvent;
    case ScenarioName::Benchmark: break;
    }
    fail(ErrorCode::InvalidArgument, "benchmark has no cheat");
}

json probes_json(const ProbeReport& p)
{
    json j;
    j["timing_ratio"] = p.timing_ratio;
    j["vm_instruction_artifact"] = p.vm_instruction_artifact;
    j["redundancy_mismatch"] = p.redundancy_mismatch;
    j["verdict"] = to_string(p.verdict);
    return j;
}

ProbeReport probes_from(const json& j)
{
    return make_report(j.at("timing_ratio").get<double>(), j.at("vm_instruction_artifact").get<bool>(),
                       j.at("redundancy_mismatch").get<bool>());
}

double mean_of(const std::vector<double>& v)
{
    if (v.empty()) {
        return 0.0;
    }
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

} // namespace

const char* to_string(ScenarioName n) noexcept
{
    switch (n) {
    case ScenarioName::Benchmark: return "benchmark";
    case ScenarioName::Radar: return "radar";
    case ScenarioName::Wallhack: return "wallhack";
    case ScenarioName::TriggerbotPoll: return "triggerbot_poll";
    case ScenarioName::TriggerbotEvent: return "triggerbot_event";
    case ScenarioName::TriggerbotEventSpp: return "triggerbot_event_spp";
    }
    return "?";
}

std::optional<ScenarioName> scenario_from_string(const std::string& name)
{
    for (ScenarioName n : {ScenarioName::Benchmark, ScenarioName::Radar, ScenarioName::Wallhack,
                           ScenarioName::TriggerbotPoll, ScenarioName::TriggerbotEvent,
                           ScenarioName::TriggerbotEventSpp}) {
        if (name == to_string(n)) {
            return n;
        }
    }
    return std::nullopt;
}

double SessionReport::mean_rate() const
{
    return mean_of(averaged);
}

double SessionReport::mean_events_per_second() const
{
    return mean_of(events_per_second);
}

double round_micro(double v)
{
    return std::round(v * 1e6) / 1e6;
}

void accumulate_tick(std::vector<double>& per_second, double start_s, double end_s)
{
    const double len = end_s - start_s;
    if (!(len > 0)) {
        return;
    }
    const auto first = static_cast<std::size_t>(std::max(0.0, std::floor(start_s)));
    for (std::size_t s = first; s < per_second.size() && static_cast<double>(s) < end_s; ++s) {
        const double lo = std::max(start_s, static_cast<double>(s));
        const double hi = std::min(end_s, static_cast<double>(s + 1));
        if (hi > lo) {
            per_second[s] += (hi - lo) / len;
        }
    }
}

RepetitionResult run_repetition(const Scenario& scenario, std::uint32_t index)
{
    if (!(scenario.session_seconds > 0) || scenario.session_seconds != std::floor(scenario.session_seconds)) {
        fail(ErrorCode::InvalidArgument, "session length must be a positive whole number of seconds");
    }
    RepetitionResult result;
    result.index = index;
    result.seed = scenario.seed + index;

    MachineConfig mc;
    mc.costs = scenario.costs;
    mc.ud_on_vmread = scenario.ud_on_vmread;
    GuestMachine guest(mc);
    InputChannel input;
    Game game(guest, input, scenario.game, result.seed);

    std::unique_ptr<OverlaySink> sink;
    std::unique_ptr<VmiSession> session;
    std::unique_ptr<CheatRuntime> runtime;
    if (scenario.name != ScenarioName::Benchmark) {
        session = std::make_unique<VmiSession>(guest);
        session->set_driver([&game] { game.tick(); });
        if (scenario.overlay_log && index == 0) {
            sink = std::make_unique<FileSink>(*scenario.overlay_log);
        } else {
            sink = std::make_unique<NullSink>();
        }
        CheatOptions opts;
        opts.kind = cheat_kind(scenario.name);
        opts.poll_interval_ms = scenario.poll_interval_ms;
        opts.use_spp = scenario.name == ScenarioName::TriggerbotEventSpp;
        opts.radar = scenario.radar;
        opts.trigger.process = scenario.game.process_name;
        opts.trigger.screen = scenario.game.screen;
        opts.trigger.entity_height = scenario.game.entity_height;
        opts.trigger.unsafe_memory_fire = scenario.unsafe_memory_fire;
        runtime = std::make_unique<CheatRuntime>(*session, input, game.layout(), opts, sink.get());
        runtime->start();
    }

    const auto seconds = static_cast<std::size_t>(scenario.session_seconds);
    result.rate.assign(seconds, 0.0);
    guest.reset_event_epoch();
    const double origin = guest.sim_time_ns();
    const double end = origin + scenario.session_seconds * 1e9;
    while (guest.sim_time_ns() < end) {
        if (scenario.scripted_turn != 0) {
            input.inject(InputEvent::mouse_move(scenario.scripted_turn, 0, InputOrigin::Scripted));
        }
        const double start = guest.sim_time_ns();
        if (session) {
            session->pump_events(guest.logical_time() + 1);
        } else {
            game.tick();
        }
        accumulate_tick(result.rate, (start - origin) / 1e9, (guest.sim_time_ns() - origin) / 1e9);
        if (runtime) {
            runtime->on_tick();
        }
        if (scenario.record_state_trace) {
            result.state_trace.push_back(game.state_hash());
        }
    }
    for (double& r : result.rate) {
        r = round_micro(r);
    }
    const auto& trapped = guest.trapped_per_second();
    result.events.assign(seconds, 0.0);
    for (std::size_t s = 0; s < seconds && s < trapped.size(); ++s) {
        result.events[s] = static_cast<double>(trapped[s]);
    }
    result.ticks = game.ticks();
    result.probes = game.probe_report();
    result.fire_bursts = game.stats().fire_bursts;
    if (runtime) {
        runtime->stop();
        const CheatTelemetry t = runtime->telemetry();
        result.cheat = CheatSummary{t.snapshots_built, t.frames_emitted, t.commands.size(),
                                    t.overlay_guest_reads, t.list_pointer_fallbacks, t.stale_reads};
    }
    return result;
}

SessionReport run_scenario(const Scenario& scenario)
{
    if (scenario.repetitions == 0) {
        fail(ErrorCode::InvalidArgument, "at least one repetition is required");
    }
    SessionReport report;
    report.scenario = scenario;
    for (std::uint32_t i = 0; i < scenario.repetitions; ++i) {
        report.repetitions.push_back(run_repetition(scenario, i));
    }
    const std::size_t n = report.repetitions.front().rate.size();
    report.averaged.assign(n, 0.0);
    report.events_per_second.assign(n, 0.0);
    double max_ratio = 0;
    bool artifact = false;
    bool mismatch = false;
    for (const RepetitionResult& r : report.repetitions) {
        for (std::size_t s = 0; s < n; ++s) {
            report.averaged[s] += r.rate[s];
            report.events_per_second[s] += r.events[s];
        }
        max_ratio = std::max(max_ratio, r.probes.timing_ratio);
        artifact = artifact || r.probes.vm_instruction_artifact;
        mismatch = mismatch || r.probes.redundancy_mismatch;
    }
    const double reps = report.repetitions.size();
    for (std::size_t s = 0; s < n; ++s) {
        report.averaged[s] = round_micro(report.averaged[s] / reps);
        report.events_per_second[s] = round_micro(report.events_per_second[s] / reps);
    }
    report.probes = make_report(max_ratio, artifact, mismatch);
    return report;
}

Quartiles quartiles(std::vector<double> v)
{
    if (v.empty()) {
        return {};
    }
    std::sort(v.begin(), v.end());
    auto at = [&v](double p) {
        const double h = (static_cast<double>(v.size()) - 1.0) * p;
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const std::size_t hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    return Quartiles{at(0.25), at(0.5), at(0.75)};
}

DiffStats diff_series(const std::vector<double>& cheat, const std::vector<double>& baseline)
{
    if (cheat.size() != baseline.size()) {
        fail(ErrorCode::LengthMismatch, "series lengths differ: " + std::to_string(cheat.size()) + " vs " +
                                            std::to_string(baseline.size()));
    }
    DiffStats d;
    d.series.resize(cheat.size());
    for (std::size_t i = 0; i < cheat.size(); ++i) {
        d.series[i] = round_micro(baseline[i] - cheat[i]);
    }
    if (!d.series.empty()) {
        d.mean = mean_of(d.series);
        d.q = quartiles(d.series);
        const auto [lo, hi] = std::minmax_element(d.series.begin(), d.series.end());
        d.min = *lo;
        d.max = *hi;
    }
    return d;
}

DiffStats diff_report(const SessionReport& cheat, const SessionReport& baseline)
{
    return diff_series(cheat.averaged, baseline.averaged);
}

CorrelationResult events_per_player_correlation(const std::vector<SessionReport>& reports)
{
    std::vector<std::pair<std::uint32_t, double>> points;
    for (const SessionReport& r : reports) {
        points.emplace_back(r.scenario.game.players, r.mean_events_per_second());
    }
    std::stable_sort(points.begin(), points.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    CorrelationResult c;
    for (std::size_t i = 0; i < points.size(); ++i) {
        c.players.push_back(points[i].first);
        c.events_per_second.push_back(points[i].second);
        if (i > 0) {
            c.non_decreasing = c.non_decreasing && points[i].second >= points[i - 1].second;
            c.strictly_increasing = c.strictly_increasing && points[i].second > points[i - 1].second;
        }
    }
    return c;
}

std::string report_to_json(const SessionReport& report)
{
    const Scenario& s = report.scenario;
    json j;
    j["format"] = kReportFormat;
    j["version"] = kReportVersion;
    json sc;
    sc["name"] = to_string(s.name);
    sc["players"] = s.game.players;
    sc["seed"] = s.seed;
    sc["session_seconds"] = s.session_seconds;
    sc["repetitions"] = s.repetitions;
    sc["nominal_rate"] = s.game.nominal_rate;
    sc["work_us"] = s.game.work_us;
    sc["mitigations"]["huge_pages"] = s.game.mitigations.huge_pages;
    sc["mitigations"]["colocate_code_data"] = s.game.mitigations.colocate_code_data;
    sc["mitigations"]["memory_encryption"] = s.game.mitigations.memory_encryption;
    sc["spp"] = s.name == ScenarioName::TriggerbotEventSpp;
    sc["poll_interval_ms"] = s.poll_interval_ms;
    sc["unsafe_memory_fire"] = s.unsafe_memory_fire;
    sc["costs"]["vmexit_cost_us"] = s.costs.vmexit_cost_us;
    sc["costs"]["baseline_access_cost_us"] = s.costs.baseline_access_cost_us;
    sc["costs"]["tsc_offset_enabled"] = s.costs.tsc_offset_enabled;
    sc["ud_on_vmread"] = s.ud_on_vmread;
    j["scenario"] = std::move(sc);
    j["summary"]["mean_rate"] = round_micro(report.mean_rate());
    j["summary"]["mean_events_per_second"] = round_micro(report.mean_events_per_second());
    j["summary"]["verdict"] = to_string(report.probes.verdict);
    j["averaged_rate"] = report.averaged;
    j["events_per_second"] = report.events_per_second;
    j["probes"] = probes_json(report.probes);
    json reps = json::array();
    for (const RepetitionResult& r : report.repetitions) {
        json jr;
        jr["index"] = r.index;
        jr["seed"] = r.seed;
        jr["ticks"] = r.ticks;
        jr["fire_bursts"] = r.fire_bursts;
        jr["rate"] = r.rate;
        jr["events"] = r.events;
        jr["probes"] = probes_json(r.probes);
        jr["cheat"]["snapshots_built"] = r.cheat.snapshots_built;
        jr["cheat"]["frames_emitted"] = r.cheat.frames_emitted;
        jr["cheat"]["commands"] = r.cheat.commands;
        jr["cheat"]["overlay_guest_reads"] = r.cheat.overlay_guest_reads;
        jr["cheat"]["list_pointer_fallbacks"] = r.cheat.list_pointer_fallbacks;
        jr["cheat"]["stale_reads"] = r.cheat.stale_reads;
        reps.push_back(std::move(jr));
    }
    j["repetitions"] = std::move(reps);
    return j.dump(1) + "\n";
}

SessionReport report_from_json(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("report is not valid JSON: ") + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != kReportFormat) {
            fail(ErrorCode::ParseError, "not a vic-sim report");
        }
        if (j.at("version").get<int>() != kReportVersion) {
            fail(ErrorCode::ParseError, "unsupported report version " + std::to_string(j.at("version").get<int>()));
        }
        SessionReport r;
        const json& sc = j.at("scenario");
        const auto name = scenario_from_string(sc.at("name").get<std::string>());
        if (!name) {
            fail(ErrorCode::ParseError, "unknown scenario " + sc.at("name").get<std::string>());
        }
        Scenario& s = r.scenario;
        s.name = *name;
        s.game.players = sc.at("players").get<std::uint32_t>();
        s.seed = sc.at("seed").get<std::uint64_t>();
        s.session_seconds = sc.at("session_seconds").get<double>();
        s.repetitions = sc.at("repetitions").get<std::uint32_t>();
        s.game.nominal_rate = sc.at("nominal_rate").get<double>();
        s.game.work_us = sc.at("work_us").get<std::int64_t>();
        s.game.mitigations.huge_pages = sc.at("mitigations").at("huge_pages").get<bool>();
        s.game.mitigations.colocate_code_data = sc.at("mitigations").at("colocate_code_data").get<bool>();
        s.game.mitigations.memory_encryption = sc.at("mitigations").at("memory_encryption").get<bool>();
        s.poll_interval_ms = sc.at("poll_interval_ms").get<double>();
        s.unsafe_memory_fire = sc.at("unsafe_memory_fire").get<bool>();
        s.costs.vmexit_cost_us = sc.at("costs").at("vmexit_cost_us").get<double>();
        s.costs.baseline_access_cost_us = sc.at("costs").at("baseline_access_cost_us").get<double>();
        s.costs.tsc_offset_enabled = sc.at("costs").at("tsc_offset_enabled").get<bool>();
        s.ud_on_vmread = sc.at("ud_on_vmread").get<bool>();
        r.averaged = j.at("averaged_rate").get<std::vector<double>>();
        r.events_per_second = j.at("events_per_second").get<std::vector<double>>();
        r.probes = probes_from(j.at("probes"));
        for (const json& jr : j.at("repetitions")) {
            RepetitionResult rr;
            rr.index = jr.at("index").get<std::uint32_t>();
            rr.seed = jr.at("seed").get<std::uint64_t>();
            rr.ticks = jr.at("ticks").get<std::uint64_t>();
            rr.fire_bursts = jr.at("fire_bursts").get<std::uint64_t>();
            rr.rate = jr.at("rate").get<std::vector<double>>();
            rr.events = jr.at("events").get<std::vector<double>>();
            rr.probes = probes_from(jr.at("probes"));
            const json& c = jr.at("cheat");
            rr.cheat = CheatSummary{c.at("snapshots_built").get<std::uint64_t>(),
                                    c.at("frames_emitted").get<std::uint64_t>(),
                                    c.at("commands").get<std::uint64_t>(),
                                    c.at("overlay_guest_reads").get<std::uint64_t>(),
                                    c.at("list_pointer_fallbacks").get<std::uint64_t>(),
                                    c.at("stale_reads").get<std::uint64_t>()};
            r.repetitions.push_back(std::move(rr));
        }
        return r;
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("malformed report: ") + e.what());
    }
}

void write_report(const SessionReport& report, const std::string& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorCode::IoFailure, "cannot open " + path);
    }
    out << report_to_json(report);
    if (!out.flush()) {
        fail(ErrorCode::IoFailure, "write failed: " + path);
    }
}

SessionReport read_report(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::IoFailure, "cannot open " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return report_from_json(buf.str());
}

std::string diff_to_json(const DiffStats& d)
{
    json j;
    j["mean"] = round_micro(d.mean);
    j["q1"] = round_micro(d.q.q1);
    j["q2"] = round_micro(d.q.q2);
    j["q3"] = round_micro(d.q.q3);
    j["min"] = d.min;
    j["max"] = d.max;
    j["series"] = d.series;
    return j.dump(1) + "\n";
}

std::string summary_table(const std::vector<std::pair<std::string, DiffStats>>& rows)
{
    std::ostringstream out;
    out << std::left << std::setw(24) << "scenario" << std::right;
    for (const char* h : {"mean", "min", "q1", "median", "q3", "max"}) {
        out << std::setw(10) << h;
    }
    out << '\n' << std::fixed << std::setprecision(3);
    for (const auto& [name, d] : rows) {
        out << std::left << std::setw(24) << name << std::right << std::setw(10) << d.mean << std::setw(10) << d.min
            << std::setw(10) << d.q.q1 << std::setw(10) << d.q.q2 << std::setw(10) << d.q.q3 << std::setw(10)
            << d.max << '\n';
    }
    return out.str();
}

} // namespace vic
