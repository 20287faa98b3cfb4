#include "batchverify/driver.hpp"

#include "batchverify/error.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <chrono>
#include <cmath>

namespace batchverify {

namespace {

class MilpBatchSession : public BatchSession {
public:
    MilpBatchSession(BatchEncoding encoding, const solver::SolverOptions &options)
        : indicators_(std::move(encoding.indicators)),
          session_(std::move(encoding.milp), solver::MilpMode::FirstFeasible, options)
    {
        session_.solve();
    }

    std::optional<std::size_t> counterexample_member() override
    {
        const solver::SolveResult &r = session_.result();
        if (!r.has_assignment())
            return std::nullopt;
        std::size_t best = 0;
        for (std::size_t j = 1; j < indicators_.size(); ++j)
            if (r.assignment[indicators_[j]] > r.assignment[indicators_[best]])
                best = j;
        return best;
    }

    void exclude(std::size_t member) override
    {
        session_.add_constraint_and_resolve({{{indicators_.at(member), 1.0}}, solver::Relation::Equal, 0.0});
    }

private:
    std::vector<solver::VarId> indicators_;
    solver::MilpSession session_;
};

std::function<double()> effective_clock(const DriverConfig &config)
{
    if (config.clock)
        return config.clock;
    return [] {
        using namespace std::chrono;
        return duration<double>(steady_clock::now().time_since_epoch()).count();
    };
}

BallQuery make_query(const std::vector<Eigen::VectorXd> &inputs, std::size_t index, double epsilon, std::size_t label)
{
    return {inputs.at(index), epsilon, label};
}

void record_single(InputVerdict &verdict, const SingleVerdict &single, Provenance provenance)
{
    verdict.provenance = provenance;
    if (single.robust) {
        verdict.status = VerdictStatus::Robust;
    } else {
        verdict.status = VerdictStatus::NonRobust;
        verdict.witness = single.witness;
    }
}

/// Marks misclassified inputs and returns the rest.
std::vector<std::size_t> filter_inputs(VerificationBackend &backend, const std::vector<Eigen::VectorXd> &inputs,
                                       std::size_t label, std::vector<InputVerdict> &verdicts)
{
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (backend.classify(inputs[i]) != label) {
            verdicts[i].status = VerdictStatus::NonRobustMisclassified;
            verdicts[i].provenance = Provenance::Filter;
        } else {
            pending.push_back(i);
        }
    }
    return pending;
}

void check_inputs(const std::vector<Eigen::VectorXd> &inputs, double epsilon)
{
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
        throw InvalidArgument("epsilon must be finite and non-negative");
    for (std::size_t i = 0; i < inputs.size(); ++i)
        for (Eigen::Index m = 0; m < inputs[i].size(); ++m)
            if (!(inputs[i][m] >= 0.0 && inputs[i][m] <= 1.0))
                throw InvalidArgument("input " + std::to_string(i) + " has a coordinate outside [0,1]");
}

} // namespace

const char *to_string(VerdictStatus status)
{
    switch (status) {
    case VerdictStatus::Robust:
        return "Robust";
    case VerdictStatus::NonRobust:
        return "NonRobust";
    case VerdictStatus::NonRobustMisclassified:
        return "NonRobustMisclassified";
    case VerdictStatus::Unresolved:
        return "Unresolved";
    }
    return "?";
}

const char *to_string(Provenance provenance)
{
    switch (provenance) {
    case Provenance::Batch:
        return "Batch";
    case Provenance::Refinement:
        return "Refinement";
    case Provenance::SplitLearning:
        return "SplitLearning";
    case Provenance::Filter:
        return "Filter";
    case Provenance::Single:
        return "Single";
    case Provenance::None:
        return "None";
    }
    return "?";
}

std::size_t RunReport::count(VerdictStatus status) const
{
    return static_cast<std::size_t>(
        std::count_if(verdicts.begin(), verdicts.end(), [&](const InputVerdict &v) { return v.status == status; }));
}

MilpBackend::MilpBackend(const Network &net, EncoderOptions options)
    : net_(net), options_(std::move(options))
{
}

std::size_t MilpBackend::layer_count() const
{
    return net_.layer_count();
}

std::optional<std::size_t> MilpBackend::last_convolution_layer() const
{
    return net_.last_convolution_layer();
}

std::size_t MilpBackend::classify(const Eigen::VectorXd &x) const
{
    return net_.classify(x);
}

ActivationPattern MilpBackend::activation_pattern(const Eigen::VectorXd &x) const
{
    return net_.activation_pattern(x);
}

LayerBounds MilpBackend::prefix_bounds(const BallQuery &query, std::size_t split)
{
    if (split == 0)
        return {};
    return milp_bounds(net_, split, query, options_);
}

std::unique_ptr<BatchSession> MilpBackend::open_batch(std::size_t split, const std::vector<BallQuery> &members,
                                                      const std::vector<LayerBounds> &bounds)
{
    if (members.empty() || members.size() != bounds.size())
        throw InvalidArgument("open_batch needs one bounds entry per member");
    std::vector<std::vector<Interval>> intervals;
    for (std::size_t j = 0; j < members.size(); ++j)
        intervals.push_back(split_intervals(bounds[j], split, members[j]));
    BatchEncoding encoding = milp_batch(net_, split, intervals, members.front().label, options_);
    return std::make_unique<MilpBatchSession>(std::move(encoding), options_.solver);
}

SingleVerdict MilpBackend::verify_single(const BallQuery &query, const LayerBounds *prefix)
{
    if (prefix != nullptr && prefix->depth() == 0)
        prefix = nullptr;
    return mip_verify_single(net_, query, prefix, options_);
}

RefinementOutcome refine_loop(VerificationBackend &backend, BatchSession &session,
                              const std::vector<BallQuery> &members, const std::vector<LayerBounds> &bounds,
                              const std::function<double()> &clock)
{
    RefinementOutcome out;
    std::vector<bool> alive(members.size(), true);
    std::size_t alive_count = members.size();
    while (true) {
        const std::optional<std::size_t> suspect = session.counterexample_member();
        if (!suspect)
            break;
        if (*suspect >= members.size() || !alive[*suspect])
            throw NumericalFailure("joint problem selected a member that was already excluded");
        const double refine_start = clock();
        out.refined_verdicts.push_back(backend.verify_single(members[*suspect], &bounds[*suspect]));
        out.refine_s += clock() - refine_start;
        out.refined.push_back(*suspect);
        alive[*suspect] = false;
        if (--alive_count == 0)
            break;
        const double resolve_start = clock();
        session.exclude(*suspect);
        out.resolve_s += clock() - resolve_start;
    }
    for (std::size_t j = 0; j < members.size(); ++j)
        if (alive[j])
            out.survivors.push_back(j);
    return out;
}

SplitLearningResult learn_split_layer(VerificationBackend &backend, const std::vector<Eigen::VectorXd> &inputs,
                                      std::vector<std::size_t> &pending, std::size_t label, double epsilon,
                                      std::vector<InputVerdict> &verdicts, const DriverConfig &config,
                                      std::mt19937_64 &rng)
{
    const std::size_t layers = backend.layer_count();
    if (layers < 2)
        throw InvalidArgument("split learning needs at least one hidden layer");
    if (pending.size() < layers - 1)
        throw InvalidArgument("split learning needs one input per candidate layer");
    const std::function<double()> clock = effective_clock(config);
    SplitLearningResult result;
    double best = 0.0;
    for (std::size_t layer = 1; layer < layers; ++layer) {
        std::size_t pick = 0;
        if (config.sample_input) {
            pick = config.sample_input(pending.size(), rng);
        } else {
            std::uniform_int_distribution<std::size_t> uniform(0, pending.size() - 1);
            pick = uniform(rng);
        }
        if (pick >= pending.size())
            throw InvalidArgument("split-learning sampler returned an out-of-range index");
        const std::size_t input = pending[pick];
        pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(pick));

        const BallQuery query = make_query(inputs, input, epsilon, label);
        const double start = clock();
        const LayerBounds bounds = backend.prefix_bounds(query, layer);
        const std::unique_ptr<BatchSession> session = backend.open_batch(layer, {query}, {bounds});
        SingleVerdict verdict;
        if (session->counterexample_member())
            verdict = backend.verify_single(query, &bounds);
        const double seconds = clock() - start;
        record_single(verdicts[input], verdict, Provenance::SplitLearning);

        result.trials.push_back({layer, input, seconds});
        if (layer == 1 || seconds < best) {
            best = seconds;
            result.layer = layer;
        }
    }
    return result;
}

namespace {

std::size_t choose_split(VerificationBackend &backend, const std::vector<Eigen::VectorXd> &inputs,
                         std::vector<std::size_t> &pending, std::size_t label, double epsilon,
                         const DriverConfig &config, std::mt19937_64 &rng, RunReport &report)
{
    const std::size_t layers = backend.layer_count();
    SplitMode mode = config.split_mode;
    if (mode == SplitMode::LastConvolution) {
        if (const auto conv = backend.last_convolution_layer(); conv && *conv < layers)
            return *conv;
        report.warnings.push_back("no convolution layer below the output; learning the split layer instead");
        mode = SplitMode::Auto;
    }
    if (mode == SplitMode::Fixed) {
        if (config.split_layer >= layers)
            throw InvalidArgument("split layer " + std::to_string(config.split_layer) +
                                  " must be below the output layer " + std::to_string(layers));
        return config.split_layer;
    }
    if (layers < 2) {
        report.warnings.push_back("network has no hidden layer; splitting at the input");
        return 0;
    }
    if (pending.size() < layers - 1) {
        report.warnings.push_back("too few inputs to learn the split layer; using layer 1");
        return 1;
    }
    const double start = effective_clock(config)();
    const SplitLearningResult learned =
        learn_split_layer(backend, inputs, pending, label, epsilon, report.verdicts, config, rng);
    report.timing.split_learning_s = effective_clock(config)() - start;
    report.split_trials = learned.trials;
    return learned.layer;
}

// Returns the summed per-ball durations, so parallel runs report the same
// work as sequential ones.
double compute_bounds(VerificationBackend &backend, const std::vector<BallQuery> &queries, std::size_t split,
                      std::size_t threads, const std::function<double()> &clock, std::vector<LayerBounds> &bounds)
{
    std::vector<double> seconds(queries.size(), 0.0);
    auto task = [&](std::size_t j) {
        const double start = clock();
        bounds[j] = backend.prefix_bounds(queries[j], split);
        seconds[j] = clock() - start;
    };
    const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), queries.size());
    if (workers <= 1) {
        for (std::size_t j = 0; j < queries.size(); ++j)
            task(j);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t j = next++; j < queries.size(); j = next++) {
                    try {
                        task(j);
                    } catch (...) {
                        const std::lock_guard<std::mutex> lock(failure_mutex);
                        if (!failure)
                            failure = std::current_exception();
                    }
                }
            });
        for (std::thread &t : pool)
            t.join();
        if (failure)
            std::rethrow_exception(failure);
    }
    double total = 0.0;
    for (double s : seconds)
        total += s;
    return total;
}

void run_batches(VerificationBackend &backend, const std::vector<Eigen::VectorXd> &inputs,
                 const std::vector<std::size_t> &pending, std::size_t label, double epsilon, std::size_t split,
                 const DriverConfig &config, std::mt19937_64 &rng, RunReport &report)
{
    if (pending.empty())
        return;
    const std::function<double()> clock = effective_clock(config);
    std::vector<ActivationPattern> patterns;
    for (std::size_t i : pending)
        patterns.push_back(backend.activation_pattern(inputs[i]));
    report.dendrogram = hcluster(patterns);
    BatchTree tree(*report.dendrogram);
    BatchSizeBandit bandit(config.max_batch_size, config.bucket_size, config.rho, config.prior);

    while (!tree.empty()) {
        BatchRecord record;
        if (config.choose_batch_size) {
            record.recommended = config.choose_batch_size(bandit, rng);
            if (record.recommended == 0)
                throw InvalidArgument("batch size must be positive");
            bandit.record_external_choice(record.recommended);
        } else {
            record.recommended = bandit.get_mini_batch_size(rng);
        }
        for (std::size_t leaf : tree.extract_batch(record.recommended))
            record.members.push_back(pending[leaf]);

        std::vector<BallQuery> queries;
        for (std::size_t input : record.members)
            queries.push_back(make_query(inputs, input, epsilon, label));
        std::vector<LayerBounds> bounds(queries.size());
        record.bounds_s = compute_bounds(backend, queries, split, config.threads, clock, bounds);

        const double solve_start = clock();
        const std::unique_ptr<BatchSession> session = backend.open_batch(split, queries, bounds);
        record.suffix_s = clock() - solve_start;

        const RefinementOutcome outcome = refine_loop(backend, *session, queries, bounds, clock);
        record.suffix_s += outcome.resolve_s;
        record.refine_s = outcome.refine_s;
        for (std::size_t j = 0; j < outcome.refined.size(); ++j) {
            const std::size_t input = record.members[outcome.refined[j]];
            record.refined.push_back(input);
            record_single(report.verdicts[input], outcome.refined_verdicts[j], Provenance::Refinement);
        }
        for (std::size_t j : outcome.survivors) {
            report.verdicts[record.members[j]].status = VerdictStatus::Robust;
            report.verdicts[record.members[j]].provenance = Provenance::Batch;
        }
        record.survivors = outcome.survivors.size();

        // Refinement checks are not part of the batch's own time.
        const double batch_time = std::max(record.bounds_s + record.suffix_s, 1e-9);
        const Velocity velocity{record.survivors, batch_time};
        record.velocity = velocity.value();
        bandit.update(record.members.size(), velocity);

        report.timing.bounds_s += record.bounds_s;
        report.timing.batch_s += record.suffix_s;
        report.timing.refine_s += record.refine_s;
        report.batches.push_back(std::move(record));
        report.bandit_trace = bandit.trace();
    }
    report.bandit_trace = bandit.trace();
}

} // namespace

RunReport verify_group(VerificationBackend &backend, const std::vector<Eigen::VectorXd> &inputs, std::size_t label,
                       double epsilon, const DriverConfig &config)
{
    check_inputs(inputs, epsilon);
    const std::function<double()> clock = effective_clock(config);
    const double start = clock();
    RunReport report;
    report.label = label;
    report.epsilon = epsilon;
    report.verdicts.resize(inputs.size());
    std::mt19937_64 rng(config.seed);
    try {
        std::vector<std::size_t> pending = filter_inputs(backend, inputs, label, report.verdicts);
        if (!pending.empty()) {
            const std::size_t split = choose_split(backend, inputs, pending, label, epsilon, config, rng, report);
            report.split_layer = split;
            run_batches(backend, inputs, pending, label, epsilon, split, config, rng, report);
        }
    } catch (const SolverError &e) {
        report.complete = false;
        report.error = e.what();
    }
    report.timing.total_s = clock() - start;
    return report;
}

RunReport verify_one_by_one(VerificationBackend &backend, const std::vector<Eigen::VectorXd> &inputs,
                            std::size_t label, double epsilon, const DriverConfig &config)
{
    check_inputs(inputs, epsilon);
    const std::function<double()> clock = effective_clock(config);
    const double start = clock();
    RunReport report;
    report.label = label;
    report.epsilon = epsilon;
    report.verdicts.resize(inputs.size());
    try {
        for (std::size_t i : filter_inputs(backend, inputs, label, report.verdicts)) {
            const double t = clock();
            const SingleVerdict v = backend.verify_single(make_query(inputs, i, epsilon, label), nullptr);
            report.timing.single_s += clock() - t;
            record_single(report.verdicts[i], v, Provenance::Single);
        }
    } catch (const SolverError &e) {
        report.complete = false;
        report.error = e.what();
    }
    report.timing.total_s = clock() - start;
    return report;
}

} // namespace batchverify
