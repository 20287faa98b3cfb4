#include "batchverify/cli.hpp"

#include "batchverify/error.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

namespace batchverify::cli {

using nlohmann::json;

namespace {

std::string trim(const std::string &s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::optional<double> parse_number(const std::string &field)
{
    const std::string text = trim(field);
    if (text.empty())
        return std::nullopt;
    char *end = nullptr;
    errno = 0;
    const double v = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size() || errno == ERANGE || !std::isfinite(v))
        return std::nullopt;
    return v;
}

const char *mode_name(Mode mode)
{
    switch (mode) {
    case Mode::Batch:
        return "batch";
    case Mode::OneByOne:
        return "one-by-one";
    case Mode::Compare:
        return "compare";
    }
    return "?";
}

json timing_json(const Timing &t)
{
    return {{"bounds_s", t.bounds_s},
            {"batch_s", t.batch_s},
            {"refine_s", t.refine_s},
            {"split_learning_s", t.split_learning_s},
            {"single_s", t.single_s},
            {"total_s", t.total_s}};
}

void add_timing(Timing &into, const Timing &t)
{
    into.bounds_s += t.bounds_s;
    into.batch_s += t.batch_s;
    into.refine_s += t.refine_s;
    into.split_learning_s += t.split_learning_s;
    into.single_s += t.single_s;
    into.total_s += t.total_s;
}

json vector_json(const Eigen::VectorXd &v)
{
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        out.push_back(v[i]);
    return out;
}

json config_json(const RunConfig &c)
{
    json split;
    switch (c.split_mode) {
    case SplitMode::Auto:
        split = "auto";
        break;
    case SplitMode::LastConvolution:
        split = "last-conv";
        break;
    case SplitMode::Fixed:
        split = c.split_layer;
        break;
    }
    return {{"network", c.network_path},
            {"inputs", c.inputs_path},
            {"class", c.label ? json(*c.label) : json("auto")},
            {"epsilon", c.epsilon},
            {"max_batch_size", c.max_batch_size},
            {"bucket_size", c.bucket_size},
            {"rho", c.rho},
            {"seed", c.seed},
            {"split_layer", split},
            {"mode", mode_name(c.mode)},
            {"node_limit", c.encoder.solver.node_limit},
            {"feasibility_tolerance", c.encoder.solver.feasibility_tolerance},
            {"integrality_tolerance", c.encoder.solver.integrality_tolerance},
            {"bound_mode", c.encoder.bound_mode == BoundMode::Milp ? "milp" : "lp"},
            {"threads", c.threads},
            {"logical_clock", c.logical_clock}};
}

void write_text(const std::string &path, const std::string &text)
{
    std::ofstream out(path);
    if (!out)
        throw InvalidArgument("cannot write " + path);
    out << text;
}

std::string fixed(double v, int digits = 3)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string pad(const std::string &s, std::size_t width)
{
    return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

struct ClassRow {
    std::size_t robust = 0;
    std::size_t correct = 0;
    std::size_t batches = 0;
    std::size_t refinements = 0;
    double total_s = 0.0;
    double bounds_s = 0.0;
    double batch_s = 0.0;
    double refine_s = 0.0;
};

std::map<std::string, ClassRow> class_rows(const json &report)
{
    std::map<std::string, ClassRow> rows;
    for (const json &entry : report.at("per_input")) {
        const std::string key = entry.at("class").dump();
        ClassRow &row = rows[key];
        const std::string status = entry.at("status").get<std::string>();
        if (status != "NonRobustMisclassified")
            ++row.correct;
        if (status == "Robust")
            ++row.robust;
    }
    for (const json &c : report.at("classes")) {
        ClassRow &row = rows[c.at("class").dump()];
        const json &t = c.at("timing");
        row.total_s = t.at("total_s").get<double>();
        row.bounds_s = t.at("bounds_s").get<double>();
        row.batch_s = t.at("batch_s").get<double>();
        row.refine_s = t.at("refine_s").get<double>();
        row.batches = c.at("batches").get<std::size_t>();
        row.refinements = c.at("refinements").get<std::size_t>();
    }
    return rows;
}

std::optional<double> baseline_total(const json &baseline, const std::string &key)
{
    for (const json &c : baseline.at("classes"))
        if (c.at("class").dump() == key)
            return c.at("timing").at("total_s").get<double>();
    return std::nullopt;
}

} // namespace

InputSet read_inputs_csv(std::istream &in, std::size_t dimension)
{
    InputSet set;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (trim(line).empty())
            continue;
        std::vector<double> values;
        std::string field;
        std::istringstream fields(line);
        std::string reason;
        while (std::getline(fields, field, ',')) {
            const auto v = parse_number(field);
            if (!v) {
                reason = "not a number: \"" + trim(field) + "\"";
                break;
            }
            if (*v < 0.0 || *v > 1.0) {
                reason = "value " + trim(field) + " outside [0,1]";
                break;
            }
            values.push_back(*v);
        }
        if (reason.empty() && !line.empty() && line.back() == ',')
            reason = "trailing comma";
        if (reason.empty() && values.size() != dimension)
            reason = "expected " + std::to_string(dimension) + " values, found " + std::to_string(values.size());
        if (!reason.empty()) {
            set.rejected.push_back({number, reason});
            continue;
        }
        set.inputs.push_back(Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
        set.lines.push_back(number);
    }
    return set;
}

bool Invocation::complete() const
{
    for (const ClassRun &run : runs)
        if (!run.report.complete || (run.baseline && !run.baseline->complete))
            return false;
    return true;
}

Invocation execute(const RunConfig &config)
{
    if (!(config.epsilon >= 0.0) || !std::isfinite(config.epsilon))
        throw InvalidArgument("--epsilon must be a finite non-negative number");
    const Network net = load_network_file(config.network_path);
    std::ifstream in(config.inputs_path);
    if (!in)
        throw InvalidArgument("cannot open input file " + config.inputs_path);

    Invocation inv;
    inv.config = config;
    inv.inputs = read_inputs_csv(in, net.input_dim());
    if (inv.inputs.inputs.empty())
        throw InvalidArgument("input file " + config.inputs_path + " contains no valid rows");
    if (config.label && *config.label >= net.output_dim())
        throw InvalidArgument("--class " + std::to_string(*config.label) + " is not a class of the network");

    // Partition by predicted class unless a class was given.
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < inv.inputs.inputs.size(); ++i)
        groups[config.label ? *config.label : net.classify(inv.inputs.inputs[i])].push_back(i);

    DriverConfig driver;
    driver.max_batch_size = config.max_batch_size;
    driver.bucket_size = config.bucket_size;
    driver.rho = config.rho;
    driver.seed = config.seed;
    driver.split_mode = config.split_mode;
    driver.split_layer = config.split_layer;
    driver.threads = config.logical_clock ? 1 : config.threads;
    if (config.logical_clock) {
        // Every reading advances the time by one millisecond.
        auto ticks = std::make_shared<std::uint64_t>(0);
        driver.clock = [ticks] { return static_cast<double>((*ticks)++) * 1e-3; };
    }

    MilpBackend backend(net, config.encoder);
    for (const auto &[label, members] : groups) {
        ClassRun run;
        run.label = label;
        run.members = members;
        std::vector<Eigen::VectorXd> inputs;
        for (std::size_t i : members)
            inputs.push_back(inv.inputs.inputs[i]);
        if (config.mode == Mode::OneByOne)
            run.report = verify_one_by_one(backend, inputs, label, config.epsilon, driver);
        else
            run.report = verify_group(backend, inputs, label, config.epsilon, driver);
        if (config.mode == Mode::Compare)
            run.baseline = verify_one_by_one(backend, inputs, label, config.epsilon, driver);
        inv.runs.push_back(std::move(run));
    }
    return inv;
}

json report_json(const Invocation &inv)
{
    json doc;
    doc["config"] = config_json(inv.config);
    doc["rejected_rows"] = json::array();
    for (const RejectedRow &r : inv.inputs.rejected)
        doc["rejected_rows"].push_back({{"line", r.line}, {"reason", r.reason}});

    std::vector<json> per_input(inv.inputs.inputs.size());
    json classes = json::array();
    json batches = json::array();
    json trace = json::array();
    json errors = json::array();
    Timing total;
    Timing baseline_total;
    bool agree = true;
    for (const ClassRun &run : inv.runs) {
        const RunReport &r = run.report;
        for (std::size_t local = 0; local < run.members.size(); ++local) {
            const std::size_t index = run.members[local];
            const InputVerdict &v = r.verdicts[local];
            json entry = {{"index", index},
                          {"line", inv.inputs.lines[index]},
                          {"class", run.label},
                          {"status", to_string(v.status)},
                          {"provenance", to_string(v.provenance)}};
            if (v.witness)
                entry["witness"] = vector_json(*v.witness);
            per_input[index] = std::move(entry);
            if (run.baseline && run.baseline->verdicts[local].status != v.status)
                agree = false;
        }
        std::size_t refinements = 0;
        for (const BatchRecord &b : r.batches) {
            json members = json::array(), refined = json::array();
            for (std::size_t m : b.members)
                members.push_back(run.members[m]);
            for (std::size_t m : b.refined)
                refined.push_back(run.members[m]);
            refinements += b.refined.size();
            batches.push_back({{"class", run.label},
                               {"members", members},
                               {"recommended", b.recommended},
                               {"actual", b.members.size()},
                               {"bounds_s", b.bounds_s},
                               {"suffix_s", b.suffix_s},
                               {"refine_s", b.refine_s},
                               {"refined", refined},
                               {"survivors", b.survivors},
                               {"velocity", b.velocity}});
        }
        for (const BanditRound &round : r.bandit_trace) {
            json row = {{"class", run.label},
                        {"round", round.round},
                        {"chosen_arm", round.chosen_arm},
                        {"recommended", round.recommended},
                        {"scores", round.scores}};
            row["actual"] = round.actual ? json(*round.actual) : json(nullptr);
            row["updated_arm"] = round.updated_arm ? json(*round.updated_arm) : json(nullptr);
            row["reward"] = round.reward ? json(*round.reward) : json(nullptr);
            trace.push_back(std::move(row));
        }
        json split_trials = json::array();
        for (const SplitTrial &t : r.split_trials)
            split_trials.push_back({{"layer", t.layer}, {"input", run.members[t.input]}, {"seconds", t.seconds}});
        json c = {{"class", run.label},
                  {"inputs", run.members.size()},
                  {"split_layer", r.split_layer ? json(*r.split_layer) : json(nullptr)},
                  {"split_trials", split_trials},
                  {"timing", timing_json(r.timing)},
                  {"batches", r.batches.size()},
                  {"refinements", refinements},
                  {"warnings", r.warnings},
                  {"complete", r.complete}};
        if (run.baseline)
            c["baseline_timing"] = timing_json(run.baseline->timing);
        classes.push_back(std::move(c));
        add_timing(total, r.timing);
        if (!r.complete)
            errors.push_back("class " + std::to_string(run.label) + ": " + r.error);
        if (run.baseline) {
            add_timing(baseline_total, run.baseline->timing);
            if (!run.baseline->complete)
                errors.push_back("class " + std::to_string(run.label) + " baseline: " + run.baseline->error);
        }
    }
    doc["per_input"] = per_input;
    doc["classes"] = classes;
    doc["batches"] = batches;
    doc["timing"] = timing_json(total);
    doc["bandit_trace"] = trace;
    if (inv.config.mode == Mode::Compare) {
        doc["baseline"] = {{"mode", "one-by-one"},
                           {"timing", timing_json(baseline_total)},
                           {"verdicts_agree", agree},
                           {"speedup", total.total_s > 0.0 ? baseline_total.total_s / total.total_s : 0.0}};
    }
    doc["complete"] = inv.complete();
    doc["errors"] = errors;
    return doc;
}

std::string summarize(const json &report, const json *baseline)
{
    try {
        const std::map<std::string, ClassRow> rows = class_rows(report);
        // A compare-mode report carries its own baseline timings.
        json embedded;
        if (!baseline && report.contains("baseline")) {
            embedded["classes"] = json::array();
            for (const json &c : report.at("classes"))
                embedded["classes"].push_back({{"class", c.at("class")}, {"timing", c.at("baseline_timing")}});
            embedded["timing"] = report.at("baseline").at("timing");
            baseline = &embedded;
        }
        std::ostringstream out;
        const std::size_t w = 12;
        out << pad("class", 7) << pad("cert.rate", w) << pad("batches", 9) << pad("refined", 9) << pad("bounds_s", w)
            << pad("batch_s", w) << pad("refine_s", w) << pad("total_s", w);
        if (baseline)
            out << pad("baseline_s", w) << "speedup";
        out << '\n';
        ClassRow all;
        auto emit = [&](const std::string &name, const ClassRow &row, std::optional<double> base) {
            out << pad(name, 7) << pad(std::to_string(row.robust) + " / " + std::to_string(row.correct), w)
                << pad(std::to_string(row.batches), 9) << pad(std::to_string(row.refinements), 9)
                << pad(fixed(row.bounds_s), w) << pad(fixed(row.batch_s), w) << pad(fixed(row.refine_s), w)
                << pad(fixed(row.total_s), w);
            if (baseline) {
                if (base)
                    out << pad(fixed(*base), w) << (row.total_s > 0.0 ? fixed(*base / row.total_s, 2) + "x" : "-");
                else
                    out << pad("-", w) << "-";
            }
            out << '\n';
        };
        for (const auto &[key, row] : rows) {
            emit(key, row, baseline ? baseline_total(*baseline, key) : std::nullopt);
            all.robust += row.robust;
            all.correct += row.correct;
            all.batches += row.batches;
            all.refinements += row.refinements;
            all.bounds_s += row.bounds_s;
            all.batch_s += row.batch_s;
            all.refine_s += row.refine_s;
        }
        all.total_s = report.at("timing").at("total_s").get<double>();
        std::optional<double> base_all;
        if (baseline)
            base_all = baseline->at("timing").at("total_s").get<double>();
        emit("all", all, base_all);
        return out.str();
    } catch (const json::exception &e) {
        throw ParseError(std::string("malformed report: ") + e.what());
    }
}

namespace {

json load_json(const std::string &path)
{
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open report " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error &e) {
        throw ParseError("report " + path + ": " + e.what());
    }
}

std::string trace_csv(const Invocation &inv)
{
    std::ostringstream out;
    out << "class,round,chosen_arm,recommended,actual,updated_arm,reward,scores\n";
    for (const ClassRun &run : inv.runs)
        for (const BanditRound &r : run.report.bandit_trace) {
            out << run.label << ',' << r.round << ',' << r.chosen_arm << ',' << r.recommended << ',';
            if (r.actual)
                out << *r.actual;
            out << ',';
            if (r.updated_arm)
                out << *r.updated_arm;
            out << ',';
            if (r.reward)
                out << *r.reward;
            out << ',';
            for (std::size_t a = 0; a < r.scores.size(); ++a)
                out << (a ? ";" : "") << r.scores[a];
            out << '\n';
        }
    return out.str();
}

std::string dendrograms_json(const Invocation &inv)
{
    json out = json::array();
    for (const ClassRun &run : inv.runs) {
        if (!run.report.dendrogram)
            continue;
        // Leaves of the dendrogram are the inputs left after filtering and
        // split learning, in input order.
        json leaves = json::array();
        for (std::size_t local = 0; local < run.members.size(); ++local) {
            const Provenance p = run.report.verdicts[local].provenance;
            if (p != Provenance::Filter && p != Provenance::SplitLearning)
                leaves.push_back(run.members[local]);
        }
        out.push_back({{"class", run.label}, {"leaves", leaves}, {"dendrogram", json::parse(run.report.dendrogram->to_json())}});
    }
    return out.dump(2);
}

std::size_t threads_from_environment()
{
    const char *value = std::getenv("BATCHVERIFY_THREADS");
    if (!value || !*value)
        return 1;
    const auto n = parse_number(value);
    if (!n || *n < 1.0 || *n != std::floor(*n))
        throw InvalidArgument("BATCHVERIFY_THREADS must be a positive integer");
    return static_cast<std::size_t>(*n);
}

} // namespace

int main(int argc, char **argv, std::ostream &out, std::ostream &err)
{
    CLI::App app{"Group local-robustness verification of ReLU classifiers", "batchverify"};
    app.require_subcommand(1);

    RunConfig config;
    std::string label_text = "auto", split_text = "auto", mode_text = "batch", bound_text = "milp";
    CLI::App *run = app.add_subcommand("run", "verify the epsilon-balls of an input set");
    run->add_option("--network", config.network_path, "network JSON file")->required();
    run->add_option("--inputs", config.inputs_path, "CSV file, one input per row")->required();
    run->add_option("--class", label_text, "class index, or auto to group inputs by predicted class");
    run->add_option("--epsilon", config.epsilon, "L-infinity radius")->required();
    run->add_option("--max-batch-size", config.max_batch_size, "largest mini-batch")->capture_default_str();
    run->add_option("--bucket-size", config.bucket_size, "batch sizes per bandit arm")->capture_default_str();
    run->add_option("--rho", config.rho, "risk weight of the variance in arm scores")->capture_default_str();
    run->add_option("--seed", config.seed, "seed for split sampling and Thompson draws")->capture_default_str();
    run->add_option("--split-layer", split_text, "auto, last-conv, or a layer index (0 = input)");
    run->add_option("--mode", mode_text, "batch, one-by-one, or compare")
        ->check(CLI::IsMember({"batch", "one-by-one", "compare"}));
    run->add_option("--report", config.report_path, "report JSON path (default: standard output)");
    run->add_option("--node-limit", config.encoder.solver.node_limit, "branch-and-bound node limit")
        ->capture_default_str();
    run->add_option("--feasibility-tol", config.encoder.solver.feasibility_tolerance)->capture_default_str();
    run->add_option("--integrality-tol", config.encoder.solver.integrality_tolerance)->capture_default_str();
    run->add_option("--bounds", bound_text, "per-neuron bounds: milp (exact) or lp (relaxed)")
        ->check(CLI::IsMember({"milp", "lp"}));
    run->add_option("--bandit-trace", config.bandit_trace_path, "write the bandit trace as CSV");
    run->add_option("--dendrogram", config.dendrogram_path, "write the dendrograms as JSON");
    run->add_flag("--logical-clock", config.logical_clock, "replace wall time by a call counter (reproducible runs)");

    std::string summary_report, summary_baseline;
    CLI::App *sum = app.add_subcommand("summarize", "print certification rates and times of a report");
    sum->add_option("--report", summary_report, "report JSON")->required();
    sum->add_option("--baseline", summary_baseline, "report of a baseline run, for the speedup column");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*sum) {
            const json report = load_json(summary_report);
            if (summary_baseline.empty()) {
                out << summarize(report);
            } else {
                const json baseline = load_json(summary_baseline);
                out << summarize(report, &baseline);
            }
            return 0;
        }

        if (label_text != "auto") {
            const auto v = parse_number(label_text);
            if (!v || *v < 0 || *v != std::floor(*v))
                throw InvalidArgument("--class must be a non-negative integer or auto");
            config.label = static_cast<std::size_t>(*v);
        }
        if (split_text == "last-conv") {
            config.split_mode = SplitMode::LastConvolution;
        } else if (split_text != "auto") {
            const auto v = parse_number(split_text);
            if (!v || *v < 0 || *v != std::floor(*v))
                throw InvalidArgument("--split-layer must be auto, last-conv, or a layer index");
            config.split_mode = SplitMode::Fixed;
            config.split_layer = static_cast<std::size_t>(*v);
        }
        config.mode = mode_text == "batch" ? Mode::Batch : mode_text == "one-by-one" ? Mode::OneByOne : Mode::Compare;
        config.encoder.bound_mode = bound_text == "lp" ? BoundMode::LpRelaxation : BoundMode::Milp;
        if (config.max_batch_size < 1)
            throw InvalidArgument("--max-batch-size must be at least 1");
        if (config.bucket_size < 1 || config.bucket_size > config.max_batch_size)
            throw InvalidArgument("--bucket-size must lie in [1, max batch size]");
        if (!(config.rho >= 0.0))
            throw InvalidArgument("--rho must be non-negative");
        config.threads = threads_from_environment();

        const Invocation inv = execute(config);
        for (const RejectedRow &r : inv.inputs.rejected)
            err << "batchverify: " << config.inputs_path << ":" << r.line << ": rejected row: " << r.reason << '\n';
        const json report = report_json(inv);
        if (config.report_path.empty() || config.report_path == "-")
            out << report.dump(2) << '\n';
        else
            write_text(config.report_path, report.dump(2) + "\n");
        if (!config.bandit_trace_path.empty())
            write_text(config.bandit_trace_path, trace_csv(inv));
        if (!config.dendrogram_path.empty())
            write_text(config.dendrogram_path, dendrograms_json(inv));
        if (!config.report_path.empty() && config.report_path != "-")
            out << summarize(report);
        if (!inv.complete()) {
            for (const json &e : report.at("errors"))
                err << "batchverify: solver failure: " << e.get<std::string>() << '\n';
            return 2;
        }
        return 0;
    } catch (const SolverError &e) {
        err << "batchverify: solver failure: " << e.what() << '\n';
        return 2;
    } catch (const Error &e) {
        err << "batchverify: " << e.what() << '\n';
        return 1;
    }
}

} // namespace batchverify::cli
