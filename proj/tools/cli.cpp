#include "cli.hpp"

#include "posecal/serialize.hpp"
#include "posecal/service.hpp"
#include "posecal/synth.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace posecal {

namespace {

namespace fs = std::filesystem;

const char* const kFooter =
    "CSV files have the columns camera,frame,parameter,value,sigma,iod: one row per camera, frame index\n"
    "(keyframes so far, starting at 2 after initialization) and parameter (fx fy cx cy k1 k2 k3 p1 p2),\n"
    "with the estimate, its standard deviation and its index of dispersion.\n"
    "Exit codes: 0 success, 1 runtime failure, 2 usage error.";

struct Options {
    std::uint64_t seed = 0;
    double noise = 1.0;
    double threshold = 0.1;
    double deviation = 0.1;
    int cameras = 20;
    std::string layout = "both";
    std::string out = "out";
    std::string actor = "overlay";
    int max_keyframes = 60;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string config;
};

class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Values from a JSON config file fill the options not given on the command line.
void apply_config_file(const CLI::App& cmd, Options& o) {
    if (o.config.empty()) {
        return;
    }
    std::ifstream in(o.config);
    if (!in) {
        throw UsageError("cannot read config file " + o.config);
    }
    const Json j = Json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw UsageError("config file is not a JSON object");
    }
    const auto given = [&](const char* flag) {
        const CLI::Option* opt = cmd.get_option_no_throw(flag);
        return opt != nullptr && opt->count() > 0;
    };
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "seed" && !given("--seed")) {
                o.seed = value.get<std::uint64_t>();
            } else if (key == "noise" && !given("--noise")) {
                o.noise = value.get<double>();
            } else if (key == "threshold" && !given("--threshold")) {
                o.threshold = value.get<double>();
            } else if (key == "deviation" && !given("--deviation")) {
                o.deviation = value.get<double>();
            } else if (key == "cameras" && !given("--cameras")) {
                o.cameras = value.get<int>();
            } else if (key == "layout" && !given("--layout")) {
                o.layout = value.get<std::string>();
            } else if (key == "out" && !given("--out")) {
                o.out = value.get<std::string>();
            } else if (key == "actor" && !given("--actor")) {
                o.actor = value.get<std::string>();
            }
        }
    } catch (const Json::exception& e) {
        throw UsageError(std::string("bad value in config file: ") + e.what());
    }
}

void validate(const Options& o) {
    if (!(o.noise >= 0.0)) {
        throw UsageError("--noise must be non-negative");
    }
    if (!(o.threshold > 0.0 && o.threshold <= 1.0)) {
        throw UsageError("--threshold must lie in (0, 1]");
    }
    if (!(o.deviation >= 0.0 && o.deviation <= 1.0)) {
        throw UsageError("--deviation must lie in [0, 1]");
    }
    if (o.cameras < 1) {
        throw UsageError("--cameras must be at least 1");
    }
    if (o.layout != "kfirst" && o.layout != "distfirst" && o.layout != "both") {
        throw UsageError("--layout must be kfirst, distfirst or both");
    }
    if (o.actor != "overlay" && o.actor != "exact") {
        throw UsageError("--actor must be overlay or exact");
    }
    if (o.max_keyframes < 2) {
        throw UsageError("--max-keyframes must be at least 2");
    }
    if (o.port < 0 || o.port > 65535) {
        throw UsageError("--port must lie in [0, 65535]");
    }
}

void write_atomic(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw std::runtime_error("cannot write " + tmp.string());
        }
        f << content;
        if (!f.flush()) {
            throw std::runtime_error("cannot write " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

std::string number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void csv_header(std::ostringstream& csv) { csv << "camera,frame,parameter,value,sigma,iod\n"; }

void csv_rows(std::ostringstream& csv, int camera, int frame, const IntrinsicParams& c, const Vector9d& sigma,
              const Vector9d& iod) {
    for (int i = 0; i < kNumIntrinsics; ++i) {
        csv << camera << ',' << frame << ',' << kParamNames[static_cast<std::size_t>(i)] << ',' << number(c[i]) << ','
            << number(sigma[i]) << ',' << number(iod[i]) << '\n';
    }
}

GuidedRun guided_run(const Options& o, const GroundTruthCamera& cam) {
    SessionConfig cfg;
    cfg.image_size = cam.image_size;
    cfg.convergence_threshold = o.threshold;
    GuidedRunOptions run;
    run.actor = o.actor == "exact" ? Actor::ExactPose : Actor::MatchOverlay;
    run.noise_sigma = o.noise;
    run.seed = o.seed;
    run.max_keyframes = o.max_keyframes;
    return run_guided_session(cam, cfg, run);
}

// Held-out views are noise-free so the error reflects the intrinsics only.
TestSet held_out(const Options& o, const GroundTruthCamera& cam) {
    return make_test_set(cam, 0.0, o.seed ^ 0x5deece66dULL);
}

int calibrate_synthetic(const Options& o, std::ostream& out, std::ostream& err) {
    const GroundTruthCamera cam = sample_camera(default_camera(), o.deviation, o.seed);
    const GuidedRun run = guided_run(o, cam);
    if (!run.state.estimate) {
        err << "session did not complete initialization\n";
        return kExitFailure;
    }
    const double eps = estimation_error(run.state.estimate->intrinsics, held_out(o, cam)).rms;
    const int frames = static_cast<int>(run.state.keyframes.size());

    std::ostringstream csv;
    csv_header(csv);
    for (const auto& rec : run.state.history) {
        csv_rows(csv, 0, rec.keyframe, rec.intrinsics, rec.variances.cwiseSqrt(), rec.iod);
    }
    Json report;
    report["converged"] = run.converged;
    report["frames_used"] = frames;
    report["frames_captured"] = run.state.frames_captured;
    report["eps_est"] = eps;
    report["calibration"] = calibration_to_json(*run.state.estimate);
    report["ground_truth"] = camera_to_json(cam.intrinsics, cam.image_size);
    report["config"] = {{"seed", o.seed}, {"noise", o.noise}, {"threshold", o.threshold}, {"deviation", o.deviation},
                        {"actor", o.actor}};
    write_atomic(fs::path(o.out) / "iod.csv", csv.str());
    write_atomic(fs::path(o.out) / "calibration.json", report.dump(2) + "\n");

    out << "converged " << (run.converged ? "yes" : "no") << "\n";
    out << "frames-used " << frames << "\n";
    out << "eps-est " << number(eps) << "\n";
    if (!run.converged) {
        err << "session did not converge within " << o.max_keyframes << " keyframes\n";
        return kExitFailure;
    }
    return kExitOk;
}

// Mean sigma drop over frames 3-10 and 11-20, per parameter.
Json drop_summary(const CorrelationTable& t, Layout layout) {
    Json params = Json::object();
    const std::size_t split = 8;
    const std::size_t last = t.mean_sigma.size() - 1;
    for (int i = 0; i < kNumIntrinsics; ++i) {
        const double first = t.mean_sigma[0][i] - t.mean_sigma[split][i];
        const double second = t.mean_sigma[split][i] - t.mean_sigma[last][i];
        const bool first_matches = (layout == Layout::KFirst) == is_pinhole_param(i);
        const double matched = first_matches ? first : second;
        const double other = first_matches ? second : first;
        params[std::string(kParamNames[static_cast<std::size_t>(i)])] = {
            {"drop_frames_3_10", first},
            {"drop_frames_11_20", second},
            {"group_matched_dominant", matched >= 2.0 * other}};
    }
    return params;
}

int correlation(const Options& o, std::ostream& out) {
    std::vector<std::pair<std::string, Layout>> layouts;
    if (o.layout != "distfirst") {
        layouts.emplace_back("kfirst", Layout::KFirst);
    }
    if (o.layout != "kfirst") {
        layouts.emplace_back("distfirst", Layout::DistFirst);
    }
    Json summary = Json::object();
    for (const auto& [name, layout] : layouts) {
        CorrelationConfig cfg;
        cfg.cameras = o.cameras;
        cfg.layout = layout;
        cfg.deviation = o.deviation;
        cfg.noise_sigma = o.noise;
        cfg.seed = o.seed;
        const CorrelationTable t = run_correlation_experiment(default_camera(), cfg);
        std::ostringstream csv;
        csv_header(csv);
        for (const auto& r : t.rows) {
            csv_rows(csv, r.camera, r.frame, r.intrinsics, r.sigma, r.iod);
        }
        const fs::path path = fs::path(o.out) / ("correlation_" + name + ".csv");
        write_atomic(path, csv.str());
        Json means = Json::array();
        for (const auto& m : t.mean_sigma) {
            means.push_back(std::vector<double>(m.data(), m.data() + m.size()));
        }
        summary[name] = {{"cameras", o.cameras},
                         {"failed_cameras", t.failed_cameras},
                         {"mean_sigma", means},
                         {"parameters", drop_summary(t, layout)}};
        out << name << ": " << t.rows.size() << " rows, " << t.failed_cameras << " failed cameras -> "
            << path.string() << "\n";
    }
    write_atomic(fs::path(o.out) / "correlation_summary.json", summary.dump(2) + "\n");
    return kExitOk;
}

int compactness(const Options& o, std::ostream& out, std::ostream& err) {
    const GroundTruthCamera cam = sample_camera(default_camera(), o.deviation, o.seed);
    const GuidedRun run = guided_run(o, cam);
    if (!run.state.estimate) {
        err << "session did not complete initialization\n";
        return kExitFailure;
    }
    const TestSet test = held_out(o, cam);
    const double full_eps = estimation_error(run.state.estimate->intrinsics, test).rms;
    const CompactResult compact = greedy_compact(run.state.keyframes, test, cam.image_size);
    const double compact_eps = compact.trace.back();

    Json report;
    report["session_converged"] = run.converged;
    report["full_frames"] = run.state.keyframes.size();
    report["full_eps_est"] = full_eps;
    report["compact_frames"] = compact.selected.size();
    report["compact_eps_est"] = compact_eps;
    report["selected"] = compact.selected;
    report["trace"] = compact.trace;
    write_atomic(fs::path(o.out) / "compactness.json", report.dump(2) + "\n");

    out << "full " << run.state.keyframes.size() << " frames, eps-est " << number(full_eps) << "\n";
    out << "compact " << compact.selected.size() << " frames, eps-est " << number(compact_eps) << "\n";
    return kExitOk;
}

int serve(const Options& o, std::ostream& out, std::ostream& err) {
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    GuidanceService service;
    httplib::Server server;
    mount_routes(server, service);
    const int port = o.port == 0 ? server.bind_to_any_port(o.host) : (server.bind_to_port(o.host, o.port) ? o.port : -1);
    if (port < 0) {
        err << "cannot bind " << o.host << ":" << o.port << "\n";
        return kExitFailure;
    }
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        service.stop();
        server.stop();
    });
    out << "listening on http://" << o.host << ":" << port << "/v1\n" << std::flush;
    const bool ok = server.listen_after_bind();
    if (waiter.joinable()) {
        pthread_kill(waiter.native_handle(), SIGTERM);
        waiter.join();
    }
    return ok ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app("Guided camera calibration: synthetic experiments and the guidance service.", "posecal");
    app.footer(kFooter);
    app.require_subcommand(1);
    Options o;

    const auto common = [&o](CLI::App* cmd) {
        cmd->add_option("--seed", o.seed, "Random seed");
        cmd->add_option("--noise", o.noise, "Corner noise sigma in pixels");
        cmd->add_option("--deviation", o.deviation, "Camera sampling deviation around the default camera");
        cmd->add_option("--out", o.out, "Output directory");
        cmd->add_option("--config", o.config, "JSON config file; command-line flags take precedence");
    };
    CLI::App* cal = app.add_subcommand("calibrate-synthetic", "Run a guided session against a sampled camera");
    common(cal);
    cal->add_option("--threshold", o.threshold, "Convergence threshold on the relative variance reduction");
    cal->add_option("--actor", o.actor, "Synthetic user: overlay (match the drawn overlay) or exact (target pose)");
    cal->add_option("--max-keyframes", o.max_keyframes, "Keyframe budget");

    CLI::App* corr = app.add_subcommand("correlation", "Pose strategy vs parameter uncertainty experiment");
    common(corr);
    corr->add_option("--cameras", o.cameras, "Number of sampled cameras");
    corr->add_option("--layout", o.layout, "kfirst, distfirst or both");

    CLI::App* comp = app.add_subcommand("compactness", "Greedy key-frame compaction of a guided session");
    common(comp);
    comp->add_option("--threshold", o.threshold, "Convergence threshold on the relative variance reduction");
    comp->add_option("--actor", o.actor, "Synthetic user: overlay or exact");
    comp->add_option("--max-keyframes", o.max_keyframes, "Keyframe budget");

    CLI::App* srv = app.add_subcommand("serve", "Run the guidance HTTP service");
    srv->add_option("--host", o.host, "Bind address");
    srv->add_option("--port", o.port, "Port (0 picks a free one)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n" << "Run with --help for usage.\n";
        return kExitUsage;
    }

    try {
        for (CLI::App* cmd : {cal, corr, comp}) {
            if (cmd->parsed()) {
                apply_config_file(*cmd, o);
            }
        }
        validate(o);
    } catch (const UsageError& e) {
        err << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (cal->parsed()) {
            return calibrate_synthetic(o, out, err);
        }
        if (corr->parsed()) {
            return correlation(o, out);
        }
        if (comp->parsed()) {
            return compactness(o, out, err);
        }
        return serve(o, out, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace posecal
