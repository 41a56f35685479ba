// migcast: ingest, train, evaluate and query the migration network.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "migcast/causal_net.hpp"
#include "migcast/checkpoint.hpp"
#include "migcast/eval_grid.hpp"
#include "migcast/report.hpp"

namespace fs = std::filesystem;
using namespace migcast;

#ifndef MIGCAST_DATA_DIR
#define MIGCAST_DATA_DIR "data"
#endif

namespace {

struct Globals {
    std::uint64_t seed = 1;
    std::string out = "out";
    std::string network;
    std::string config;
    double threshold = 0.001;
};

Config load_config(const Globals& g) { return g.config.empty() ? Config{} : Config::load(g.config); }

std::string default_network() { return std::string(MIGCAST_DATA_DIR) + "/paper-params.snapshot"; }

// Output paths are always file names inside --out.
std::string out_path(const Globals& g, const std::string& file) {
    fs::create_directories(g.out);
    return (fs::path(g.out) / file).string();
}

std::ofstream open_out(const Globals& g, const std::string& file) {
    const auto path = out_path(g, file);
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path);
    return f;
}

// Writes the text to stdout and to --out/<file>.
void emit(const Globals& g, const std::string& file, const std::string& text) {
    std::cout << text;
    open_out(g, file) << text;
}

std::string clipped(double v) { return report::format_number(std::max(0.0, v), 2); }

std::vector<MonthlySeries> load_dataset(const std::string& path) {
    auto data = load_csv(path);
    check_total_consistency(data);
    return data;
}

std::string dataset_summary(const std::vector<MonthlySeries>& data) {
    std::set<std::string> provinces, streams;
    YearMonth first = data.front().start, last = data.front().start.plus(static_cast<int>(data.front().values.size()) - 1);
    for (const auto& s : data) {
        provinces.insert(std::string(code(s.province)));
        streams.insert(std::string(name(s.stream)));
        first = std::min(first, s.start);
        last = std::max(last, s.start.plus(static_cast<int>(s.values.size()) - 1));
    }
    std::ostringstream os;
    os << data.size() << " series, " << provinces.size() << " provinces (";
    bool sep = false;
    for (const auto& p : provinces) os << (std::exchange(sep, true) ? " " : "") << p;
    os << "), streams (";
    sep = false;
    for (const auto& s : streams) os << (std::exchange(sep, true) ? " " : "") << s;
    os << "), " << first.str() << " .. " << last.str() << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Inference report shared by `infer`, `scenario` and `forecast --handoff`.

struct InferRequest {
    std::string name = "infer";
    bn::Evidence evidence;
    std::vector<Stream> nodes;
    bool decompose = false;
};

void run_inference(const Globals& g, const bn::CGNetwork& net, const InferRequest& req) {
    std::ostringstream os;
    os << "scenario: " << req.name << "\n";
    os << "evidence: " << report::evidence_string(req.evidence) << "\n";
    os << "network: " << net.states.size() << " provinces, total mode " << bn::to_string(net.mode)
       << (net.crisis ? ", crisis node marginalised" : "") << "\n\n";

    const auto post = bn::posterior_province(net, req.evidence);
    report::write_province_table(os, net, post, g.threshold);
    if (report::is_refugee_case(req.evidence)) {
        os << "  reference values from the original study (different, unpublished parameters; not asserted):";
        for (const auto& r : report::refugee_case_reference()) os << " " << r.label << " " << r.value << "%";
        os << "\n";
    }
    {
        auto f = open_out(g, req.name + ".province.csv");
        report::write_province_csv(f, net, post);
    }

    for (auto node : req.nodes) {
        const auto mix = bn::posterior_node(net, node, req.evidence);
        os << "\n";
        report::write_mixture(os, node, mix);
        if (req.evidence.province) {
            for (const auto& r : net.references) {
                if (r.province != *req.evidence.province || r.node != node) continue;
                os << "  stored reference for " << code(r.province) << " " << name(r.node) << ": mean "
                   << report::format_number(r.mean, 2);
                if (r.sd) os << ", std " << report::format_number(*r.sd, 2);
                os << "\n";
            }
        }
        auto f = open_out(g, req.name + ".density_" + lower(name(node)) + ".csv");
        report::write_density_csv(f, mix);
    }

    if (req.decompose) {
        const auto d = bn::decompose_total(net, req.evidence);
        os << "\nPosterior stream means given the Total finding\n";
        for (auto s : kComponents)
            os << "  " << std::string(name(s)) << std::string(10 - name(s).size(), ' ')
               << report::format_number(d.stream_means[index_of(s)], 2) << "\n";
        os << "  sum       " << report::format_number(d.stream_means[0] + d.stream_means[1] + d.stream_means[2], 2)
           << "\n  Total     " << report::format_number(d.total_mean, 2) << "\n";
        if (report::is_total_case(req.evidence)) {
            os << "  reference values from the original study (different, unpublished parameters; not asserted):";
            for (const auto& r : report::total_case_reference()) os << " " << r.label << " " << r.value;
            os << "\n";
        }
        auto f = open_out(g, req.name + ".decomposition.csv");
        f << "stream,posterior_mean\n";
        for (auto s : kComponents) f << lower(name(s)) << ',' << shortest(d.stream_means[index_of(s)]) << '\n';
        f << "total," << shortest(d.total_mean) << '\n';
    }
    emit(g, req.name + ".report.txt", os.str());
}

std::vector<Stream> parse_nodes(const std::vector<std::string>& names) {
    std::vector<Stream> out;
    for (const auto& n : names) {
        auto s = parse_stream(n);
        if (!s) throw ConfigError("unknown node `" + n + "` (sponsor | refugee | economic | total)");
        if (std::find(out.begin(), out.end(), *s) == out.end()) out.push_back(*s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Model helpers

struct ModelArgs {
    std::string variant = "autoformer";
    int years = 5;
};

models::Variant variant_of(const std::string& s) {
    auto v = models::parse_variant(s);
    if (!v) throw ConfigError("unknown variant `" + s + "` (autoformer | transformer | informer)");
    return *v;
}

std::string model_file(models::Variant v, int years) {
    return lower(models::variant_name(v)) + "-" + std::to_string(years) + "y.ckpt";
}

models::ForecastModel train_model(const Globals& g, const Config& cfg, const std::vector<MonthlySeries>& data,
                                  models::Variant v, int years, std::vector<double>* trace) {
    const auto mc = models::ModelConfig::from_config(cfg);
    WindowSpec spec{years, static_cast<int>(mc.horizon)};
    spec.validate();
    const auto windows = eval::training_windows(eval::total_series(data), spec, false);
    if (windows.empty()) throw RangeError("dataset too short for a " + std::to_string(years) + "-year context");
    auto m = models::create_model(v, mc, static_cast<std::size_t>(spec.context_months()), g.seed);
    auto t = models::train(m, windows, models::TrainConfig::from_config(cfg, g.seed));
    if (trace) *trace = std::move(t);
    return m;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_ingest(const Globals& g, const std::string& csv) {
    const auto data = load_dataset(csv);
    write_csv(out_path(g, "dataset.csv"), data);
    std::cout << "ingested " << csv << ": " << dataset_summary(data) << "wrote " << out_path(g, "dataset.csv") << "\n";
}

void cmd_gen_synth(const Globals& g, int months) {
    const auto cfg = load_config(g);
    const auto data = gen_synthetic(g.seed, months, SynthParams::from_config(cfg));
    write_csv(out_path(g, "synthetic.csv"), data);
    std::cout << "generated " << dataset_summary(data) << "wrote " << out_path(g, "synthetic.csv") << "\n";
}

void cmd_fit(const Globals& g, const std::string& csv, const std::string& mode) {
    auto data = load_dataset(csv);
    if (mode == "structural") std::erase_if(data, [](const auto& s) { return s.stream == Stream::Total; });
    std::vector<std::string> warnings;
    auto net = bn::fit_parameters(data, &warnings);
    if (mode == "fitted" && net.mode != bn::TotalMode::Fitted)
        throw FitError("fitted mode needs Total series in " + csv);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    bn::save_network(out_path(g, "network.json"), net);
    std::cout << "fitted " << net.states.size() << " provinces, total mode " << bn::to_string(net.mode) << "; wrote "
              << out_path(g, "network.json") << "\n";
}

void cmd_train(const Globals& g, const std::string& csv, const ModelArgs& a) {
    const auto cfg = load_config(g);
    const auto v = variant_of(a.variant);
    std::vector<double> trace;
    const auto m = train_model(g, cfg, load_dataset(csv), v, a.years, &trace);
    ad::save_parameters(out_path(g, model_file(v, a.years)), m.params);
    auto f = open_out(g, "loss_trace.csv");
    f << "epoch,loss\n";
    for (std::size_t i = 0; i < trace.size(); ++i) f << i + 1 << ',' << shortest(trace[i]) << '\n';
    std::cout << models::variant_name(v) << " " << a.years << "y trained for " << trace.size() << " epochs";
    if (!trace.empty()) std::cout << ", final loss " << report::format_number(trace.back(), 4);
    std::cout << "; wrote " << out_path(g, model_file(v, a.years)) << "\n";
}

void cmd_forecast(const Globals& g, const std::string& csv, const ModelArgs& a, const std::string& checkpoint,
                  bool do_train, const std::string& handoff) {
    if (checkpoint.empty() && !do_train) throw ConfigError("forecast needs --checkpoint FILE or --train");
    const auto cfg = load_config(g);
    const auto v = variant_of(a.variant);
    const auto data = load_dataset(csv);
    const auto mc = models::ModelConfig::from_config(cfg);
    WindowSpec spec{a.years, static_cast<int>(mc.horizon)};
    spec.validate();
    models::ForecastModel m;
    if (do_train) {
        m = train_model(g, cfg, data, v, a.years, nullptr);
    } else {
        m = models::create_model(v, mc, static_cast<std::size_t>(spec.context_months()), g.seed);
        auto loaded = ad::load_parameters(checkpoint);
        if (loaded.size() != m.params.size())
            throw ConfigError("checkpoint " + checkpoint + " holds " + std::to_string(loaded.size()) +
                              " parameters, " + std::string(models::variant_name(v)) + " needs " +
                              std::to_string(m.params.size()));
        for (const auto& [key, t] : m.params) {
            auto it = loaded.find(key);
            if (it == loaded.end() || it->second.shape() != t.shape())
                throw ConfigError("checkpoint " + checkpoint + " does not match " +
                                  std::string(models::variant_name(v)) + " with a " + std::to_string(a.years) +
                                  "-year context (parameter " + key + ")");
        }
        m.params = std::move(loaded);
    }

    std::optional<Province> handoff_province;
    if (!handoff.empty()) {
        handoff_province = parse_province(handoff);
        if (!handoff_province) throw ConfigError("unknown handoff province `" + handoff + "`");
    }

    std::ostringstream os;
    auto f = open_out(g, "forecast.csv");
    f << "province,date,forecast\n";
    std::optional<bn::SoftFinding> finding;
    for (const auto& s : eval::total_series(data)) {
        const int n = static_cast<int>(s.values.size());
        if (n < spec.context_months())
            throw RangeError(std::string(code(s.province)) + " Total has " + std::to_string(n) + " months, need " +
                             std::to_string(spec.context_months()));
        const std::vector<double> ctx(s.values.end() - spec.context_months(), s.values.end());
        const auto first = s.start.plus(n - spec.context_months());
        const auto fc = models::forecast(m, ctx, first);
        const auto target0 = s.start.plus(n);
        os << code(s.province) << " " << target0.str() << " .. " << target0.plus(static_cast<int>(fc.size()) - 1).str()
           << ":";
        for (std::size_t t = 0; t < fc.size(); ++t) {
            f << code(s.province) << ',' << target0.plus(static_cast<int>(t)).str() << ',' << clipped(fc[t]) << '\n';
            os << " " << clipped(fc[t]);
        }
        os << "\n";
        if (handoff_province && *handoff_province == s.province) {
            double mean = 0.0;
            for (double x : fc) mean += std::max(0.0, x);
            mean /= static_cast<double>(fc.size());
            double ss = 0.0;
            for (double x : fc) ss += (std::max(0.0, x) - mean) * (std::max(0.0, x) - mean);
            const double sd = std::max(std::sqrt(ss / static_cast<double>(fc.size() - 1)), bn::kMinSigma);
            finding = bn::SoftFinding{Stream::Total, mean, sd};
        }
    }
    if (handoff_province && !finding)
        throw ConfigError("handoff province " + std::string(code(*handoff_province)) + " has no series in " + csv);
    emit(g, "forecast.txt", os.str());
    if (finding) {
        // The printed string is the evidence actually used, so it can be replayed with `infer`.
        const auto evidence = "total=N(" + report::format_number(finding->mean, 4) + "," +
                              report::format_number(std::max(finding->sd, 1e-4), 4) + ")";
        const auto ev = report::parse_evidence({evidence});
        std::cout << "\nhandoff evidence: " << evidence << "\n\n";
        open_out(g, "handoff.txt") << evidence << "\n";
        const auto net = bn::load_network(g.network.empty() ? default_network() : g.network);
        run_inference(g, net, {"handoff", ev, {Stream::Total}, false});
    }
}

void cmd_eval_grid(const Globals& g, const std::string& csv, const std::string& denominator) {
    const auto cfg = load_config(g);
    const auto mode = metrics::parse_mase_denominator(
        denominator.empty() ? cfg.get_string("eval.mase_denominator", "as-printed") : denominator);
    std::vector<MonthlySeries> data;
    if (csv.empty()) {
        const auto months = static_cast<int>(cfg.get_int("eval.months", 180));
        data = gen_synthetic(g.seed, months, SynthParams::from_config(cfg));
        std::cerr << "eval-grid: synthetic data, seed " << g.seed << ", " << months << " months\n";
    } else {
        data = load_dataset(csv);
    }
    const auto grid = eval::GridConfig::from_config(cfg, g.seed);
    const auto totals = eval::total_series(data);
    const auto cells = eval::eval_grid(data, grid, [](const eval::Cell& c) {
        std::cerr << "  " << models::variant_name(c.variant) << " " << c.years << "y done\n";
    });

    {
        auto f = open_out(g, "eval_grid.csv");
        eval::write_grid_csv(f, cells, mode);
    }
    {
        const auto& s = totals.front();
        auto f = open_out(g, "eval_forecasts.csv");
        eval::write_forecasts_csv(f, cells, s.start.plus(static_cast<int>(s.values.size()) - 12));
    }
    std::ostringstream os;
    eval::write_grid_table(os, cells, mode);
    const auto base = eval::naive_baseline(totals, static_cast<int>(grid.model.horizon));
    const auto b = eval::score(base, mode);
    os << "\nnaive last-value baseline: MASE " << (b.degenerate ? "deg" : report::format_number(b.mase, 4))
       << ", sMAPE " << report::format_number(b.smape, 4) << "\n";
    emit(g, "eval_grid.txt", os.str());

    auto f = open_out(g, "eval_baseline.csv");
    f << "model,mase_as_printed,mase_naive_actuals,smape\n";
    const auto ap = eval::score(base, metrics::MaseDenominator::AsPrinted);
    const auto na = eval::score(base, metrics::MaseDenominator::NaiveActuals);
    f << "naive_last_value," << (ap.degenerate ? "deg" : shortest(ap.mase)) << ','
      << (na.degenerate ? "deg" : shortest(na.mase)) << ',' << shortest(ap.smape) << '\n';
}

void cmd_infer(const Globals& g, const std::vector<std::string>& evidence, const std::vector<std::string>& nodes) {
    const auto ev = report::parse_evidence(evidence);
    const auto net = bn::load_network(g.network.empty() ? default_network() : g.network);
    run_inference(g, net, {"infer", ev, parse_nodes(nodes), false});
}

void cmd_scenario(const Globals& g, const std::string& which) {
    const auto net = bn::load_network(g.network.empty() ? default_network() : g.network);
    InferRequest req;
    req.name = which;
    if (which == "case1") {
        req.evidence.hard(Province::ON);
        req.nodes = {Stream::Total, Stream::Refugee, Stream::Sponsor, Stream::Economic};
    } else if (which == "case2") {
        req.evidence.add({Stream::Refugee, 15.0, 2.0});
        req.nodes = {Stream::Total, Stream::Refugee};
    } else if (which == "case3") {
        req.evidence.add({Stream::Total, 150.0, 2.0});
        req.nodes = {Stream::Total};
        req.decompose = true;
    } else {
        throw ConfigError("unknown scenario `" + which + "` (case1 | case2 | case3)");
    }
    run_inference(g, net, req);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Migration forecasting and what-if inference"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
    app.add_option("--out", g.out, "Output directory")->capture_default_str();
    app.add_option("--network", g.network, "Network file (default: bundled paper-params.snapshot)");
    app.add_option("--config", g.config, "key = value configuration file");
    app.add_option("--threshold", g.threshold, "Fold provinces below this probability into `other` in reports")
        ->check(CLI::Range(0.0, 0.999999))
        ->capture_default_str();

    std::string csv, mode = "auto", checkpoint, handoff, denominator, scenario;
    int months = 96;
    bool do_train = false;
    ModelArgs margs;
    std::vector<std::string> evidence, nodes;

    auto* ingest = app.add_subcommand("ingest", "Validate a CSV and write the canonical dataset");
    ingest->add_option("csv", csv, "Input CSV (date,province,stream,count)")->required();

    auto* synth = app.add_subcommand("gen-synth", "Generate the synthetic dataset");
    synth->add_option("--months", months, "Months to generate")->capture_default_str();

    auto* fit = app.add_subcommand("fit", "Fit network parameters from a dataset");
    fit->add_option("csv", csv)->required();
    fit->add_option("--mode", mode, "auto | structural | fitted")
        ->check(CLI::IsMember({"auto", "structural", "fitted"}))
        ->capture_default_str();

    auto add_model_opts = [&](CLI::App* c) {
        c->add_option("csv", csv)->required();
        c->add_option("--variant", margs.variant, "autoformer | transformer | informer")->capture_default_str();
        c->add_option("--years", margs.years, "Context length in years (1..9)")
            ->check(CLI::Range(1, 9))
            ->capture_default_str();
    };
    auto* train = app.add_subcommand("train", "Train one forecaster and save a checkpoint");
    add_model_opts(train);

    auto* forecast = app.add_subcommand("forecast", "Forecast the next 12 months of every province's Total");
    add_model_opts(forecast);
    forecast->add_option("--checkpoint", checkpoint, "Checkpoint written by `train`");
    forecast->add_flag("--train", do_train, "Train before forecasting");
    forecast->add_option("--handoff", handoff, "Province whose forecast becomes a Total finding for inference");

    auto* grid = app.add_subcommand("eval-grid", "Variant x context-length evaluation");
    grid->add_option("csv", csv, "Dataset (default: synthetic, eval.months long)");
    grid->add_option("--mase-denominator", denominator, "as-printed | naive-actuals")
        ->check(CLI::IsMember({"as-printed", "naive-actuals"}));

    auto* infer = app.add_subcommand("infer", "Posterior report for the given evidence");
    infer->add_option("--evidence", evidence, "province=ON | refugee=N(15,2) | ... (repeatable)");
    infer->add_option("--node", nodes, "Node(s) to report: sponsor | refugee | economic | total");

    auto* scen = app.add_subcommand("scenario", "Canned what-if queries");
    scen->add_option("case", scenario, "case1 | case2 | case3")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ErrorKind::Usage);
    }

    try {
        if (*ingest) cmd_ingest(g, csv);
        else if (*synth) cmd_gen_synth(g, months);
        else if (*fit) cmd_fit(g, csv, mode);
        else if (*train) cmd_train(g, csv, margs);
        else if (*forecast) cmd_forecast(g, csv, margs, checkpoint, do_train, handoff);
        else if (*grid) cmd_eval_grid(g, csv, denominator);
        else if (*infer) cmd_infer(g, evidence, nodes);
        else if (*scen) cmd_scenario(g, scenario);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
