// vic-sim: run scenarios, diff reports, dump offsets, serve the input
// protocol.

#include "vic/error.hpp"
#include "vic/harness.hpp"
#include "vic/qmp.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <sstream>

namespace {

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

struct RunArgs {
    std::string scenario = "benchmark";
    std::uint32_t players = 24;
    std::uint64_t seed = 7;
    double session_secs = 600;
    std::uint32_t reps = 3;
    std::string mitigations;
    bool spp = false;
    bool unsafe_memory_fire = false;
    bool tsc_offset = false;
    bool vmread_no_ud = false;
    double vmexit_us = 50.0;
    double baseline_us = 0.1;
    double poll_ms = 16.0;
    std::string report;
    std::string overlay_log;
};

vic::Scenario build_scenario(const RunArgs& a)
{
    auto name = vic::scenario_from_string(a.scenario);
    if (!name) {
        throw CLI::ValidationError("--scenario", "unknown scenario '" + a.scenario + "'");
    }
    if (a.spp) {
        if (*name != vic::ScenarioName::TriggerbotEvent && *name != vic::ScenarioName::TriggerbotEventSpp) {
            throw CLI::ValidationError("--spp", "only applies to triggerbot_event");
        }
        name = vic::ScenarioName::TriggerbotEventSpp;
    }
    vic::Scenario s;
    s.name = *name;
    s.game.players = a.players;
    s.seed = a.seed;
    s.session_seconds = a.session_secs;
    s.repetitions = a.reps;
    s.unsafe_memory_fire = a.unsafe_memory_fire;
    s.costs.vmexit_cost_us = a.vmexit_us;
    s.costs.baseline_access_cost_us = a.baseline_us;
    s.costs.tsc_offset_enabled = a.tsc_offset;
    s.costs.validate();
    s.ud_on_vmread = !a.vmread_no_ud;
    s.poll_interval_ms = a.poll_ms;
    for (const std::string& m : split_list(a.mitigations)) {
        const auto which = vic::mitigation_from_string(m);
        if (!which) {
            throw CLI::ValidationError("--mitigations", "unknown mitigation '" + m + "'");
        }
        vic::apply_mitigation(s.game, *which);
    }
    if (!a.overlay_log.empty()) {
        s.overlay_log = a.overlay_log;
    }
    return s;
}

int cmd_run(const RunArgs& a)
{
    const vic::SessionReport report = vic::run_scenario(build_scenario(a));
    if (a.report.empty()) {
        std::cout << vic::report_to_json(report);
    } else {
        vic::write_report(report, a.report);
        std::cerr << vic::to_string(report.scenario.name) << ": mean rate " << report.mean_rate()
                  << " ticks/s, events/s " << report.mean_events_per_second() << ", verdict "
                  << vic::to_string(report.probes.verdict) << "\n";
    }
    return 0;
}

volatile std::sig_atomic_t g_stop = 0;

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"vic-sim: hypervisor-introspection cheat simulator"};
    app.require_subcommand(1);

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "run a scenario and write a session report");
    run_cmd->add_option("--scenario", run.scenario,
                        "benchmark|radar|wallhack|triggerbot_poll|triggerbot_event|triggerbot_event_spp")
        ->capture_default_str();
    run_cmd->add_option("--players", run.players)->capture_default_str()->check(CLI::Range(0, 64));
    run_cmd->add_option("--seed", run.seed)->capture_default_str();
    run_cmd->add_option("--session-secs", run.session_secs)->capture_default_str()->check(CLI::PositiveNumber);
    run_cmd->add_option("--reps", run.reps)->capture_default_str()->check(CLI::Range(1, 1000));
    run_cmd->add_option("--mitigations", run.mitigations, "comma list: huge_pages,colocate,encrypt");
    run_cmd->add_flag("--spp", run.spp, "sub-page protection for the event trigger-bot");
    run_cmd->add_flag("--unsafe-memory-fire", run.unsafe_memory_fire, "fire by writing guest memory");
    run_cmd->add_flag("--tsc-offset", run.tsc_offset, "hide vmexit latency from the guest clock");
    run_cmd->add_flag("--vmread-no-ud", run.vmread_no_ud, "privileged instruction does not fault in the guest");
    run_cmd->add_option("--vmexit-us", run.vmexit_us)->capture_default_str();
    run_cmd->add_option("--baseline-us", run.baseline_us)->capture_default_str();
    run_cmd->add_option("--poll-ms", run.poll_ms)->capture_default_str()->check(CLI::PositiveNumber);
    run_cmd->add_option("--report", run.report, "output file (stdout if omitted)");
    run_cmd->add_option("--overlay-log", run.overlay_log, "frame log of the first repetition");

    std::string baseline_path;
    std::string cheat_path;
    auto* diff_cmd = app.add_subcommand("diff", "baseline - cheat statistics for two reports");
    diff_cmd->add_option("--baseline", baseline_path)->required()->check(CLI::ExistingFile);
    diff_cmd->add_option("--cheat", cheat_path)->required()->check(CLI::ExistingFile);

    std::vector<std::string> summary_cheats;
    std::string summary_baseline;
    auto* summary_cmd = app.add_subcommand("summary", "quartile table for several cheat reports");
    summary_cmd->add_option("--baseline", summary_baseline)->required()->check(CLI::ExistingFile);
    summary_cmd->add_option("cheats", summary_cheats)->required()->check(CLI::ExistingFile);

    std::vector<std::string> correlate_reports;
    auto* correlate_cmd = app.add_subcommand("correlate", "events/s against player count");
    correlate_cmd->add_option("reports", correlate_reports)->required()->check(CLI::ExistingFile);

    std::string offsets_out;
    std::uint32_t offsets_players = 24;
    std::uint64_t offsets_seed = 7;
    std::string offsets_mitigations;
    bool offsets_no_crosshair = false;
    auto* offsets_cmd = app.add_subcommand("offsets", "write the game's offsets file");
    offsets_cmd->add_option("--out", offsets_out)->required();
    offsets_cmd->add_option("--players", offsets_players)->capture_default_str()->check(CLI::Range(0, 64));
    offsets_cmd->add_option("--seed", offsets_seed)->capture_default_str();
    offsets_cmd->add_option("--mitigations", offsets_mitigations);
    offsets_cmd->add_flag("--no-crosshair", offsets_no_crosshair, "omit crosshair_entity");

    std::string endpoint;
    std::uint64_t max_connections = 0;
    auto* qmp_cmd = app.add_subcommand("qmp-serve", "serve the input protocol and log injected events");
    qmp_cmd->add_option("--endpoint", endpoint, "unix socket path, unix:PATH or tcp:[HOST:]PORT")->required();
    qmp_cmd->add_option("--connections", max_connections, "exit after this many connections (0 = forever)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run_cmd) {
            return cmd_run(run);
        }
        if (*diff_cmd) {
            const vic::DiffStats d = vic::diff_report(vic::read_report(cheat_path), vic::read_report(baseline_path));
            std::cout << vic::diff_to_json(d);
            return 0;
        }
        if (*summary_cmd) {
            const vic::SessionReport base = vic::read_report(summary_baseline);
            std::vector<std::pair<std::string, vic::DiffStats>> rows;
            for (const std::string& p : summary_cheats) {
                const vic::SessionReport r = vic::read_report(p);
                rows.emplace_back(vic::to_string(r.scenario.name), vic::diff_report(r, base));
            }
            std::cout << vic::summary_table(rows);
            return 0;
        }
        if (*correlate_cmd) {
            std::vector<vic::SessionReport> reports;
            for (const std::string& p : correlate_reports) {
                reports.push_back(vic::read_report(p));
            }
            const vic::CorrelationResult c = vic::events_per_player_correlation(reports);
            std::cout << "players,events_per_second\n";
            for (std::size_t i = 0; i < c.players.size(); ++i) {
                std::cout << c.players[i] << ',' << c.events_per_second[i] << '\n';
            }
            std::cout << "# non_decreasing=" << (c.non_decreasing ? "true" : "false")
                      << " strictly_increasing=" << (c.strictly_increasing ? "true" : "false") << '\n';
            return c.non_decreasing ? 0 : 3;
        }
        if (*offsets_cmd) {
            vic::GameConfig cfg;
            cfg.players = offsets_players;
            cfg.expose_crosshair = !offsets_no_crosshair;
            for (const std::string& m : split_list(offsets_mitigations)) {
                const auto which = vic::mitigation_from_string(m);
                if (!which) {
                    std::cerr << "unknown mitigation '" << m << "'\n";
                    return 2;
                }
                vic::apply_mitigation(cfg, *which);
            }
            vic::GuestMachine guest;
            vic::InputChannel input;
            vic::Game game(guest, input, cfg, offsets_seed);
            vic::export_offsets(game.layout(), offsets_out);
            return 0;
        }
        if (*qmp_cmd) {
            vic::InputChannel input;
            vic::QmpServer server(input, endpoint);
            std::cerr << "listening on " << server.endpoint() << "\n";
            std::signal(SIGINT, [](int) { g_stop = 1; });
            std::signal(SIGTERM, [](int) { g_stop = 1; });
            std::uint64_t served = 0;
            std::size_t logged = 0;
            while (g_stop == 0 && (max_connections == 0 || served < max_connections)) {
                server.serve_one();
                ++served;
                const auto injected = input.injected();
                for (; logged < injected.size(); ++logged) {
                    const vic::GuestInputEvent& e = injected[logged].event.data;
                    std::cout << "event device=" << static_cast<int>(e.device)
                              << " action=" << static_cast<int>(e.action) << " code=" << e.code << " dx=" << e.dx
                              << " dy=" << e.dy << "\n";
                }
                std::cout.flush();
            }
            return 0;
        }
    } catch (const vic::SimError& e) {
        std::cerr << "error: " << vic::to_string(e.code()) << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
