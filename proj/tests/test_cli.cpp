#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lorafuse/cachesys.hpp"
#include "lorafuse/cli.hpp"
#include "lorafuse/config.hpp"
#include "lorafuse/io.hpp"

using namespace lorafuse;

namespace {

namespace fs = std::filesystem;

struct Invocation {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string read_text(const fs::path& path) {
    const auto bytes = read_file_bytes(path.string());
    return std::string(bytes.begin(), bytes.end());
}

fs::path scratch_dir(const std::string& tag) {
    const auto dir =
        fs::temp_directory_path() / ("lorafuse_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Spawn the installed binary with shell redirection; stdout and stderr come
// back as strings.
Invocation run_tool(const std::string& args) {
    static int counter = 0;
    const fs::path dir =
        fs::temp_directory_path() / ("lorafuse_cli_io_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const fs::path out = dir / ("out" + std::to_string(counter) + ".txt");
    const fs::path err = dir / ("err" + std::to_string(counter) + ".txt");
    ++counter;
    const std::string cmd = std::string("\"") + LORAFUSE_CLI_PATH + "\" " + args + " > \"" +
                            out.string() + "\" 2> \"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Invocation r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_text(out);
    r.err = read_text(err);
    return r;
}

// Checksum of every regular file under root, keyed by relative path.
std::map<std::string, std::uint64_t> tree_digest(const fs::path& root) {
    std::map<std::string, std::uint64_t> digest;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file()) {
            const auto bytes = read_file_bytes(entry.path().string());
            digest[fs::relative(entry.path(), root).string()] = fnv1a(bytes.data(), bytes.size());
        }
    return digest;
}

std::string experiment_text(const std::string& out_dir, const std::string& methods,
                            const std::string& strategies, const std::string& counts,
                            const std::string& seeds) {
    std::ostringstream os;
    os << "[net]\n"
          "depth = 3\n"
          "base_channels = 4\n"
          "latent_channels = 2\n"
          "height = 16\n"
          "width = 16\n"
          "embed_dim = 4\n"
          "seed = 9\n\n"
          "[adapters]\n"
          "count = 3\n"
          "rank = 2\n"
          "seed = 50\n\n"
          "[run]\n"
          "steps = 10\n"
          "guidance = 7.5\n"
          "methods = " << methods << "\n"
          "strategies = " << strategies << "\n"
          "counts = " << counts << "\n"
          "seeds = " << seeds << "\n\n"
          "[profile]\n"
          "steps = 10\n"
          "seed = 3\n\n"
          "[output]\n"
          "dir = \"" << out_dir << "\"\n";
    return os.str();
}

fs::path write_config(const fs::path& dir, const std::string& text) {
    const fs::path path = dir / "exp.toml";
    write_file_text(path.string(), text);
    return path;
}

int line_count(const std::string& text) {
    int lines = 0;
    for (char c : text)
        if (c == '\n') ++lines;
    return lines;
}

}  // namespace

TEST_CASE("plan prints the library JSON byte for byte") {
    const CachePlan dynamic = dynamic_plan(200, 2, 3);
    REQUIRE(dynamic.full_steps.size() == 84);
    Invocation r = run_tool("plan --t 200 --dynamic 2 3");
    CHECK(r.exit_code == 0);
    CHECK(r.out == plan_json(dynamic));

    r = run_tool("plan --t 10 --uniform 3");
    CHECK(r.exit_code == 0);
    CHECK(r.out == plan_json(uniform_plan(10, 3)));
    const auto parsed = nlohmann::json::parse(r.out);
    CHECK(parsed.at("full_steps") == nlohmann::json({0, 3, 6, 9}));

    r = run_tool("plan --t 6");
    CHECK(r.exit_code == 0);
    CHECK(r.out == plan_json(no_cache_plan(6)));
}

TEST_CASE("usage mistakes exit with code 1 and a message") {
    for (const std::string args :
         {"plan --t 10 --uniform 0", "plan --t 0", "plan --t 40 --uniform 2 --dynamic 2 3",
          "plan --uniform 2", "plan --t 9 --dynamic 3 2", "plan", "compose", "resolve",
          ""}) {
        const Invocation r = run_tool(args);
        CHECK_MESSAGE(r.exit_code == 1, "args: ", args);
        CHECK_MESSAGE(!r.err.empty(), "args: ", args);
    }
    const Invocation help = run_tool("--help");
    CHECK(help.exit_code == 0);
    CHECK(help.out.find("profile") != std::string::npos);
}

TEST_CASE("missing or broken configs exit 1 with the cause on stderr") {
    const auto dir = scratch_dir("badcfg");
    for (const std::string sub : {"compose", "profile", "macs"}) {
        const Invocation r = run_tool(sub + " --config " + (dir / "nope.toml").string());
        CHECK(r.exit_code == 1);
        CHECK(r.err.find("nope.toml") != std::string::npos);
    }
    const auto bad = write_config(
        dir, experiment_text((dir / "out").string(), "[\"blend\"]", "[\"none\"]", "[2]", "[5]"));
    const Invocation r = run_tool("compose --config " + bad.string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("blend") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("compose executes the matrix and matches the analytic preview") {
    const auto dir = scratch_dir("compose");
    const auto out = dir / "out";
    const auto cfg = write_config(
        dir, experiment_text(out.string(), "[\"composite\", \"switch\", \"cmlora\", \"naive\"]",
                             "[\"none\", \"uniform\"]", "[2]", "[5]"));

    const Invocation composed = run_tool("compose --config " + cfg.string() + " --check");
    CHECK(composed.exit_code == 0);
    CHECK(composed.out == read_text(out / "summary.csv"));
    CHECK(line_count(composed.out) == 9);  // header + 4 methods x 2 strategies

    // The executed totals must equal the trace-only preview.
    const Invocation previewed = run_tool("macs --config " + cfg.string());
    CHECK(previewed.exit_code == 0);
    CHECK(previewed.out == composed.out);

    for (const std::string name : {"composite_n2_none_s5", "composite_n2_uniform2_s5",
                                   "switch_n2_none_s5", "switch_n2_uniform2_s5",
                                   "cmlora_n2_none_s5", "cmlora_n2_uniform2_s5",
                                   "naive_n0_none_s5", "naive_n0_uniform2_s5"}) {
        const fs::path run = out / name;
        CHECK_MESSAGE(fs::exists(run / "trace.csv"), name);
        CHECK_MESSAGE(fs::exists(run / "mac_report.json"), name);
        CHECK_MESSAGE(fs::exists(run / "plan.json"), name);
        CHECK_MESSAGE(fs::exists(run / "latent.f64"), name);
        CHECK_MESSAGE(fs::exists(run / "latent.pgm"), name);
    }
    // Two latent channels of 16x16 doubles.
    CHECK(fs::file_size(out / "composite_n2_none_s5" / "latent.f64") == 2 * 16 * 16 * 8);
    CHECK(read_text(out / "composite_n2_none_s5" / "latent.pgm").substr(0, 2) == "P5");

    // Dominance scheduling leaves its extra artifacts only where it ran.
    CHECK(fs::exists(out / "cmlora_n2_none_s5" / "weights.csv"));
    CHECK(fs::exists(out / "cmlora_n2_none_s5" / "partition.json"));
    CHECK_FALSE(fs::exists(out / "composite_n2_none_s5" / "weights.csv"));
    fs::remove_all(dir);
}

TEST_CASE("compose artifacts are byte-identical across reruns and job counts") {
    const auto dir = scratch_dir("determinism");
    const auto out = dir / "out";
    const auto cfg = write_config(
        dir, experiment_text(out.string(), "[\"composite\", \"cmlora\"]",
                             "[\"none\", \"dynamic\"]", "[3]", "[5]"));

    REQUIRE(run_tool("compose --config " + cfg.string()).exit_code == 0);
    const auto first = tree_digest(out);
    fs::remove_all(out);
    REQUIRE(run_tool("compose --config " + cfg.string() + " --jobs 4").exit_code == 0);
    const auto second = tree_digest(out);
    CHECK(first == second);
    CHECK(first.size() > 4);
    fs::remove_all(dir);
}

TEST_CASE("seed flag replaces the configured seed axis") {
    const auto dir = scratch_dir("seedflag");
    const auto out = dir / "out";
    const auto cfg = write_config(dir, experiment_text(out.string(), "[\"composite\"]",
                                                       "[\"none\"]", "[2]", "[5, 6]"));
    const Invocation a = run_tool("compose --config " + cfg.string() + " --seed 9");
    CHECK(a.exit_code == 0);
    CHECK(fs::exists(out / "composite_n2_none_s9"));
    CHECK_FALSE(fs::exists(out / "composite_n2_none_s5"));
    const Invocation b = run_tool("compose --config " + cfg.string() + " --seed 9");
    CHECK(a.out == b.out);

    const Invocation bad = run_tool("compose --config " + cfg.string() + " --jobs 0");
    CHECK(bad.exit_code == 1);
    fs::remove_all(dir);
}

TEST_CASE("check relations accept coherent tables and flag fabricated violations") {
    const auto good = std::vector<SummaryRow>{
        {"composite", 1, "none", 100},          {"composite", 1, "uniform(2)", 60},
        {"composite", 3, "none", 300},          {"composite", 3, "uniform(2)", 180},
        {"switch", 1, "none", 100},             {"switch", 3, "none", 100},
        {"cmlora", 3, "uniform(2)", 250},       {"cmlora", 1, "none", 100},
        {"cmlora", 1, "uniform(2)", 100},
    };
    CHECK(check_summary_relations(good));

    auto rows = good;
    rows.push_back({"composite", 1, "none", 101});  // same cell, different total
    CHECK_FALSE(check_summary_relations(rows));

    rows = good;
    rows[1].total = 100;  // cached no longer cheaper
    CHECK_FALSE(check_summary_relations(rows));

    rows = good;
    rows[2].total = 299;  // breaks the exact branch-count scaling
    CHECK_FALSE(check_summary_relations(rows));

    rows = good;
    rows[5].total = 120;  // uncached rotation must not vary with branches
    CHECK_FALSE(check_summary_relations(rows));

    rows = good;
    rows[6].total = 300;  // cached cmlora must undercut uncached composite
    CHECK_FALSE(check_summary_relations(rows));

    rows = good;
    rows[8].total = 90;  // a lone dominant cannot save anything
    CHECK_FALSE(check_summary_relations(rows));

    CHECK(check_summary_relations({}));
}

TEST_CASE("profile emits the partition and per-adapter series deterministically") {
    const auto dir = scratch_dir("profile");
    const auto out = dir / "out";
    const auto cfg = write_config(dir, experiment_text(out.string(), "[\"cmlora\"]", "[\"none\"]",
                                                       "[3]", "[5]"));
    const Invocation r = run_tool("profile --config " + cfg.string());
    CHECK(r.exit_code == 0);
    const fs::path pdir = out / "profile";
    CHECK(r.out == read_text(pdir / "partition.json"));
    const auto parsed = nlohmann::json::parse(r.out);
    CHECK(parsed.contains("H"));
    CHECK(parsed.contains("L"));
    CHECK(parsed.at("ordering").size() == 3);
    for (const std::string name :
         {"series.csv", "series_a0.csv", "series_a1.csv", "series_a2.csv", "ordering.csv"})
        CHECK_MESSAGE(fs::exists(pdir / name), name);
    CHECK(read_text(pdir / "ordering.csv").rfind("label,early_mean\n", 0) == 0);

    const auto first = tree_digest(pdir);
    fs::remove_all(out);
    REQUIRE(run_tool("profile --config " + cfg.string()).exit_code == 0);
    CHECK(tree_digest(pdir) == first);
    fs::remove_all(dir);
}

TEST_CASE("report collapses seeds into one row per cell") {
    const auto dir = scratch_dir("report");
    const auto out = dir / "out";
    const auto cfg = write_config(dir, experiment_text(out.string(), "[\"composite\"]",
                                                       "[\"none\", \"uniform\"]", "[2]",
                                                       "[5, 6]"));
    REQUIRE(run_tool("compose --config " + cfg.string()).exit_code == 0);

    const fs::path table = dir / "table.csv";
    const Invocation r = run_tool("report --dir " + out.string() + " --out " + table.string());
    CHECK(r.exit_code == 0);
    CHECK(r.out == read_text(table));
    CHECK(line_count(r.out) == 3);  // header + 2 cells, both seeds folded
    CHECK(r.out.rfind("method,branches,strategy,total_macs\n", 0) == 0);

    // The folded totals are the per-run totals: counting ignores the seed.
    const std::string summary = read_text(out / "summary.csv");
    std::istringstream rows(summary);
    std::string line;
    std::getline(rows, line);  // header
    std::getline(rows, line);
    CHECK(r.out.find(line) != std::string::npos);

    const Invocation missing = run_tool("report --dir " + (dir / "nothing").string());
    CHECK(missing.exit_code == 1);
    CHECK_FALSE(missing.err.empty());

    const auto empty = dir / "empty";
    fs::create_directories(empty);
    CHECK(run_tool("report --dir " + empty.string()).exit_code == 1);
    fs::remove_all(dir);
}
