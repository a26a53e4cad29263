#include "lorafuse/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <tuple>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lorafuse/composer.hpp"
#include "lorafuse/config.hpp"
#include "lorafuse/errors.hpp"
#include "lorafuse/io.hpp"
#include "lorafuse/numerics.hpp"

namespace lorafuse {

namespace {

namespace fs = std::filesystem;

struct RunCell {
    Method method = Method::kComposite;
    int count = 0;  // 0 marks the adapter-free baseline
    std::string strategy;
    std::uint64_t seed = 0;
};

// Methods x counts x strategies x seeds; the baseline ignores the roster,
// so its count axis collapses to a single slot.
std::vector<RunCell> expand_matrix(const ExperimentConfig& cfg) {
    std::vector<RunCell> cells;
    for (Method m : cfg.methods) {
        const std::vector<int> counts = m == Method::kNaive ? std::vector<int>{0} : cfg.counts;
        for (int n : counts)
            for (const auto& st : cfg.strategies)
                for (auto s : cfg.seeds) cells.push_back({m, n, st, s});
    }
    return cells;
}

std::string strategy_tag(const ExperimentConfig& cfg, const std::string& strategy) {
    if (strategy == "uniform") return "uniform" + std::to_string(cfg.base.stride1);
    if (strategy == "dynamic")
        return "dynamic" + std::to_string(cfg.base.stride1) + "-" +
               std::to_string(cfg.base.stride2);
    return strategy;
}

std::string cell_dir_name(const ExperimentConfig& cfg, const RunCell& cell) {
    return method_tag(cell.method) + "_n" + std::to_string(cell.count) + "_" +
           strategy_tag(cfg, cell.strategy) + "_s" + std::to_string(cell.seed);
}

void write_text(const fs::path& path, const std::string& text) {
    write_file_text(path.string(), text);
}

void write_bytes(const fs::path& path, const std::string& data) {
    write_file_bytes(path.string(), std::vector<unsigned char>(data.begin(), data.end()));
}

// ---------------------------------------------------------------- profile

int cmd_profile(const std::string& config_path, const std::string& out_override,
                const std::optional<std::uint64_t>& seed) {
    ExperimentConfig cfg = load_experiment(config_path);
    if (cfg.roster.empty()) throw ParameterError("profiling needs an adapter roster");
    const DenoiserNet net = init_net(cfg.net);
    RunConfig rc = cfg.make_run(Method::kComposite, static_cast<int>(cfg.roster.size()), "none",
                                seed ? *seed : cfg.profile_seed);
    const std::vector<FrequencySeries> series = profile_all(net, rc);
    const Ordering ordering = ranking_from_series(series);
    const Partition partition = make_partition(ordering);

    const fs::path dir = fs::path(out_override.empty() ? cfg.output_dir : out_override) / "profile";
    fs::create_directories(dir);
    {
        std::ostringstream os;
        write_series_csv(os, series);
        write_text(dir / "series.csv", os.str());
    }
    for (const auto& s : series) {
        std::ostringstream os;
        write_series_csv(os, {s});
        write_text(dir / ("series_" + s.adapter_id + ".csv"), os.str());
    }
    {
        std::ostringstream os;
        os << "label,early_mean\n";
        for (const auto& e : ordering.entries)
            os << e.label << ',' << format_double(e.early_mean) << '\n';
        write_text(dir / "ordering.csv", os.str());
    }
    write_text(dir / "partition.json", partition_json(partition));
    std::cout << partition_json(partition);
    return 0;
}

// ---------------------------------------------------------------- compose

SummaryRow execute_cell(const DenoiserNet& net, const ExperimentConfig& cfg, const RunCell& cell,
                        const fs::path& out_dir) {
    const RunConfig rc = cfg.make_run(cell.method, cell.count, cell.strategy, cell.seed);
    const ComposeResult res = run_compose(net, rc);

    const fs::path dir = out_dir / cell_dir_name(cfg, cell);
    fs::create_directories(dir);
    {
        std::ostringstream os;
        write_trace_csv(os, res.trace);
        write_text(dir / "trace.csv", os.str());
    }
    write_text(dir / "mac_report.json", mac_report_json(res.report));
    write_text(dir / "plan.json", plan_json(rc.plan()));
    {
        std::ostringstream os;
        write_f64(os, res.final_latent.data);
        write_bytes(dir / "latent.f64", os.str());
    }
    {
        std::ostringstream os;
        write_pgm(os, channel_mean(res.final_latent));
        write_bytes(dir / "latent.pgm", os.str());
    }
    if (res.partition) write_text(dir / "partition.json", partition_json(*res.partition));
    if (!res.weight_rows.empty()) {
        std::ostringstream os;
        write_weights_csv(os, res.weight_rows);
        write_text(dir / "weights.csv", os.str());
    }
    if (res.similarity) {
        std::ostringstream os;
        write_similarity_csv(os, *res.similarity);
        write_text(dir / "similarity.csv", os.str());
    }
    return {method_tag(cell.method), cell.count, res.report.strategy, res.report.total};
}

}  // namespace

bool check_summary_relations(const std::vector<SummaryRow>& rows) {
    bool ok = true;
    const auto fail = [&ok](const std::string& msg) {
        std::cerr << "check failed: " << msg << "\n";
        ok = false;
    };

    std::map<std::string, std::map<int, std::map<std::string, std::uint64_t>>> grid;
    for (const auto& row : rows) {
        auto& slot = grid[row.method][row.branch_count];
        const auto it = slot.find(row.strategy);
        if (it == slot.end()) slot.emplace(row.strategy, row.total);
        else if (it->second != row.total)
            fail(row.method + " n" + std::to_string(row.branch_count) + " " + row.strategy +
                 ": totals differ across seeds");
    }

    for (const auto& [method, by_count] : grid)
        for (const auto& [n, by_strategy] : by_count) {
            const auto none = by_strategy.find("none");
            if (none == by_strategy.end()) continue;
            // A lone dominant adapter runs full every step, so caching can
            // only break even there; everywhere else it must win outright.
            const bool always_full = method == "cmlora" && n < 2;
            for (const auto& [strategy, total] : by_strategy) {
                if (strategy == "none") continue;
                if (always_full ? total != none->second : total >= none->second)
                    fail(method + " n" + std::to_string(n) + " " + strategy +
                         " not cheaper than running uncached");
            }
        }

    if (const auto composite = grid.find("composite"); composite != grid.end()) {
        const auto single = composite->second.find(1);
        if (single != composite->second.end())
            for (const auto& [n, by_strategy] : composite->second)
                for (const auto& [strategy, total] : by_strategy) {
                    const auto base = single->second.find(strategy);
                    if (base != single->second.end() &&
                        total != static_cast<std::uint64_t>(n) * base->second)
                        fail("composite " + strategy + " total not proportional to branch count");
                }
    }

    // Uncached rotation costs one full branch per step no matter how many
    // branches rotate. Cached totals drift with the branch count because
    // every first activation is forced full.
    if (const auto sw = grid.find("switch"); sw != grid.end()) {
        std::optional<std::uint64_t> uncached;
        for (const auto& [n, by_strategy] : sw->second) {
            const auto it = by_strategy.find("none");
            if (it == by_strategy.end()) continue;
            if (!uncached) uncached = it->second;
            else if (*uncached != it->second)
                fail("switch none total varies with branch count");
        }
    }

    if (grid.count("cmlora") && grid.count("composite"))
        for (const auto& [n, by_strategy] : grid.at("cmlora")) {
            if (n < 2) continue;
            const auto& composite = grid.at("composite");
            const auto peer = composite.find(n);
            if (peer == composite.end()) continue;
            const auto none = peer->second.find("none");
            if (none == peer->second.end()) continue;
            for (const auto& [strategy, total] : by_strategy)
                if (strategy != "none" && total >= none->second)
                    fail("cmlora n" + std::to_string(n) + " " + strategy +
                         " not cheaper than uncached composite");
        }

    return ok;
}

namespace {

int cmd_compose(const std::string& config_path, const std::string& out_override,
                const std::optional<std::uint64_t>& seed, int jobs, bool check, bool measure) {
    if (jobs < 1) throw ParameterError("--jobs must be positive");
    ExperimentConfig cfg = load_experiment(config_path);
    if (seed) cfg.seeds = {*seed};
    if (measure) cfg.base.measure_similarity = true;

    const fs::path out_dir = out_override.empty() ? cfg.output_dir : out_override;
    fs::create_directories(out_dir);
    const DenoiserNet net = init_net(cfg.net);
    const std::vector<RunCell> cells = expand_matrix(cfg);

    std::vector<SummaryRow> rows(cells.size());
    std::atomic<std::size_t> cursor{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto worker = [&]() {
        for (;;) {
            const std::size_t i = cursor.fetch_add(1);
            if (i >= cells.size()) return;
            try {
                rows[i] = execute_cell(net, cfg, cells[i], out_dir);
            } catch (...) {
                const std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    const int workers = std::min<int>(jobs, static_cast<int>(cells.size()));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::ostringstream os;
    write_summary_csv(os, rows);
    write_text(out_dir / "summary.csv", os.str());
    std::cout << os.str();

    if (check && !check_summary_relations(rows)) return 2;
    return 0;
}

// ------------------------------------------------------------------- plan

int cmd_plan(int total_steps, const std::optional<int>& uniform_stride,
             const std::vector<int>& dynamic_strides) {
    if (uniform_stride && !dynamic_strides.empty())
        throw ParameterError("choose one of --uniform and --dynamic");
    CachePlan plan = no_cache_plan(total_steps);
    if (uniform_stride) plan = uniform_plan(total_steps, *uniform_stride);
    else if (!dynamic_strides.empty())
        plan = dynamic_plan(total_steps, dynamic_strides[0], dynamic_strides[1]);
    std::cout << plan_json(plan);
    return 0;
}

// ------------------------------------------------------------------- macs

// Cost preview without running the denoiser. Totals depend only on which
// steps run full, never on which adapter dominates, so a structural
// stand-in partition prices a cmlora cell exactly.
ScheduleTrace analytic_trace(const RunConfig& rc, const CachePlan& plan) {
    std::vector<std::string> ids;
    ids.reserve(rc.adapters.size());
    for (const auto& a : rc.adapters) ids.push_back(a.id);
    switch (rc.method) {
        case Method::kNaive:
            return single_branch_trace(rc.method, "base", plan, rc.skip_index);
        case Method::kMerge:
        case Method::kMergeElementwise:
        case Method::kMergeGradient:
            return single_branch_trace(rc.method, "merged", plan, rc.skip_index);
        case Method::kSwitch:
        case Method::kSwitchA:
            return switch_trace(rc.method, ids, rc.tau, plan, rc.skip_index);
        case Method::kComposite:
            return composite_trace(ids, plan, rc.skip_index);
        case Method::kCmlora: {
            Partition part;
            part.ordering = ids;
            if (ids.size() == 1) {
                part.high_set = ids;
            } else {
                part.high_set.assign(ids.begin(), ids.end() - 1);
                part.low_set.push_back(ids.back());
            }
            return cmlora_schedule(part, plan, rc.skip_index, rc.decay, rc.w_dom_init);
        }
    }
    throw ParameterError("unknown method");
}

int cmd_macs(const std::string& config_path) {
    const ExperimentConfig cfg = load_experiment(config_path);
    std::vector<SummaryRow> rows;
    for (const auto& cell : expand_matrix(cfg)) {
        const RunConfig rc = cfg.make_run(cell.method, cell.count, cell.strategy, cell.seed);
        rc.validate();
        const CachePlan plan = rc.plan();
        const MacReport report = count_macs(cfg.net, analytic_trace(rc, plan), plan);
        rows.push_back({method_tag(cell.method), cell.count, report.strategy, report.total});
    }
    std::ostringstream os;
    write_summary_csv(os, rows);
    std::cout << os.str();
    return 0;
}

// ----------------------------------------------------------------- report

// Roster size as encoded in a run directory name ("..._n3_...").
std::optional<int> count_from_name(const std::string& name) {
    std::size_t pos = name.find("_n");
    while (pos != std::string::npos) {
        std::size_t end = pos + 2;
        while (end < name.size() && std::isdigit(static_cast<unsigned char>(name[end]))) ++end;
        if (end > pos + 2 && end < name.size() && name[end] == '_')
            return std::stoi(name.substr(pos + 2, end - pos - 2));
        pos = name.find("_n", pos + 1);
    }
    return std::nullopt;
}

int cmd_report(const std::string& dir, const std::string& out_file) {
    if (!fs::is_directory(dir)) throw IoError(dir + ": not a directory");
    std::vector<fs::path> run_dirs;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_directory() && fs::exists(entry.path() / "mac_report.json"))
            run_dirs.push_back(entry.path());
    if (run_dirs.empty()) throw IoError(dir + ": no run directories with mac_report.json");
    std::sort(run_dirs.begin(), run_dirs.end());

    // One row per (method, roster size, strategy); seeds collapse because
    // cost counting never looks at the seed.
    std::map<std::tuple<std::string, int, std::string>, std::pair<std::uint64_t, std::uint64_t>>
        groups;
    for (const auto& run_dir : run_dirs) {
        const fs::path path = run_dir / "mac_report.json";
        const std::vector<unsigned char> bytes = read_file_bytes(path.string());
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(bytes.begin(), bytes.end());
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path.string() + ": " + e.what());
        }
        try {
            const std::string method = j.at("method").get<std::string>();
            const std::string strategy = j.at("strategy").get<std::string>();
            const auto total = j.at("totals").at("macs").get<std::uint64_t>();
            const int count =
                count_from_name(run_dir.filename().string()).value_or(j.at("branches").get<int>());
            auto& slot = groups[{method, count, strategy}];
            slot.first += total;
            slot.second += 1;
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path.string() + ": " + e.what());
        }
    }

    std::vector<SummaryRow> rows;
    rows.reserve(groups.size());
    for (const auto& [key, sum_count] : groups)
        rows.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key),
                        sum_count.first / sum_count.second});
    std::ostringstream os;
    write_summary_csv(os, rows);
    std::cout << os.str();
    if (!out_file.empty()) write_text(out_file, os.str());
    return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Frequency-profiled multi-adapter composition runner"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string report_dir;
    std::string report_out;
    std::uint64_t seed = 0;
    int jobs = 1;
    int total_steps = 0;
    int uniform_stride = 0;
    std::vector<int> dynamic_strides;
    bool check = false;
    bool measure = false;

    CLI::App* profile = app.add_subcommand("profile", "Profile the roster and write the partition");
    profile->add_option("--config", config_path, "experiment config file")->required();
    profile->add_option("--out", out_dir, "output directory override");
    CLI::Option* profile_seed = profile->add_option("--seed", seed, "profiling seed override");

    CLI::App* compose = app.add_subcommand("compose", "Execute the run matrix");
    compose->add_option("--config", config_path, "experiment config file")->required();
    compose->add_option("--out", out_dir, "output directory override");
    CLI::Option* compose_seed = compose->add_option("--seed", seed, "run seed override");
    compose->add_option("--jobs", jobs, "parallel run bound");
    compose->add_flag("--check", check, "verify cost-ordering relations, exit 2 on violation");
    compose->add_flag("--measure", measure, "record cached-feature similarity");

    CLI::App* plan = app.add_subcommand("plan", "Print a cache plan as JSON");
    plan->add_option("--t", total_steps, "run length")->required();
    CLI::Option* plan_uniform = plan->add_option("--uniform", uniform_stride, "uniform stride");
    plan->add_option("--dynamic", dynamic_strides, "head and middle strides")->expected(2);

    CLI::App* macs = app.add_subcommand("macs", "Print analytic costs for the run matrix");
    macs->add_option("--config", config_path, "experiment config file")->required();

    CLI::App* report = app.add_subcommand("report", "Aggregate run directories into one table");
    report->add_option("--dir", report_dir, "directory holding run outputs")->required();
    report->add_option("--out", report_out, "also write the table to this file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (profile->parsed())
            return cmd_profile(config_path, out_dir,
                               profile_seed->count() ? std::optional<std::uint64_t>(seed)
                                                     : std::nullopt);
        if (compose->parsed())
            return cmd_compose(config_path, out_dir,
                               compose_seed->count() ? std::optional<std::uint64_t>(seed)
                                                     : std::nullopt,
                               jobs, check, measure);
        if (plan->parsed())
            return cmd_plan(total_steps,
                            plan_uniform->count() ? std::optional<int>(uniform_stride)
                                                  : std::nullopt,
                            dynamic_strides);
        if (macs->parsed()) return cmd_macs(config_path);
        if (report->parsed()) return cmd_report(report_dir, report_out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace lorafuse
