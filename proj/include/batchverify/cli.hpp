#pragma once

#include "batchverify/driver.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace batchverify::cli {

struct RejectedRow {
    std::size_t line = 0;
    std::string reason;
};

struct InputSet {
    std::vector<Eigen::VectorXd> inputs;
    std::vector<std::size_t> lines;  // 1-based source line of each accepted input
    std::vector<RejectedRow> rejected;
};

/// One input per line, comma separated values in [0,1], no header. Blank
/// lines are skipped; malformed rows are collected in `rejected`.
InputSet read_inputs_csv(std::istream &in, std::size_t dimension);

enum class Mode { Batch, OneByOne, Compare };

struct RunConfig {
    std::string network_path;
    std::string inputs_path;
    std::optional<std::size_t> label;  // nullopt: partition by predicted class
    double epsilon = 0.0;
    std::size_t max_batch_size = 8;
    std::size_t bucket_size = 2;
    double rho = 100.0;
    std::uint64_t seed = 0;
    SplitMode split_mode = SplitMode::Auto;
    std::size_t split_layer = 1;
    Mode mode = Mode::Batch;
    std::string report_path;
    std::string bandit_trace_path;
    std::string dendrogram_path;
    EncoderOptions encoder;
    bool logical_clock = false;
    std::size_t threads = 1;
};

/// Per-class run results of one invocation.
struct ClassRun {
    std::size_t label = 0;
    std::vector<std::size_t> members;  // indices into the input set
    RunReport report;
    std::optional<RunReport> baseline;  // one-by-one run in compare mode
};

struct Invocation {
    RunConfig config;
    InputSet inputs;
    std::vector<ClassRun> runs;

    bool complete() const;
};

/// Loads everything named by the config and runs the requested mode.
Invocation execute(const RunConfig &config);

nlohmann::json report_json(const Invocation &invocation);

/// Table of certification rates and times; `baseline` adds a speedup column.
std::string summarize(const nlohmann::json &report, const nlohmann::json *baseline = nullptr);

/// Entry point of the batchverify executable. Exit codes: 0 success, 1 usage
/// or input error, 2 solver failure.
int main(int argc, char **argv, std::ostream &out, std::ostream &err);

} // namespace batchverify::cli
