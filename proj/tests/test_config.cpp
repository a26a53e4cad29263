#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "lorafuse/adapters.hpp"
#include "lorafuse/config.hpp"
#include "lorafuse/errors.hpp"
#include "lorafuse/io.hpp"

using namespace lorafuse;

namespace {

// Minimal but complete experiment text shared by the loader tests.
const char* kBaseText = R"(
[net]
depth = 3
base_channels = 4
latent_channels = 2
height = 16
width = 16
embed_dim = 4
seed = 9

[adapters]
count = 3
rank = 2
seed = 50

[run]
steps = 12
methods = ["composite", "cmlora"]
seeds = [7, 8]
)";

bool same_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

bool same_adapter(const LoraAdapter& a, const LoraAdapter& b) {
    if (a.id != b.id || a.rank != b.rank || a.scale != b.scale || a.layers.size() != b.layers.size())
        return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i)
        if (a.layers[i].target != b.layers[i].target ||
            !same_matrix(a.layers[i].a, b.layers[i].a) || !same_matrix(a.layers[i].b, b.layers[i].b))
            return false;
    return true;
}

// Unique scratch directory per test process.
std::filesystem::path scratch_dir(const std::string& tag) {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("lorafuse_config_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("table parses scalars, arrays, and comments") {
    const ConfigTable t = ConfigTable::parse(R"(
# leading comment
[alpha]
count = 4            # trailing comment
ratio = -2.5
label = "a # not a comment"
armed = true
empty = []
mixed_spacing=7

[beta]
names = ["x", "y"]
values = [1, 2, 3]
reals = [0.5, 2]
)");
    CHECK(t.get_int("alpha", "count", 0) == 4);
    CHECK(t.get_real("alpha", "ratio", 0.0) == -2.5);
    CHECK(t.get_string("alpha", "label", "") == "a # not a comment");
    CHECK(t.get_bool("alpha", "armed", false));
    CHECK(t.get_int("alpha", "mixed_spacing", 0) == 7);
    CHECK(t.get_string_list("alpha", "empty").empty());
    CHECK(t.get_string_list("beta", "names") == std::vector<std::string>{"x", "y"});
    CHECK(t.get_int_list("beta", "values") == std::vector<long long>{1, 2, 3});
    CHECK(t.get_real_list("beta", "reals") == std::vector<double>{0.5, 2.0});
    CHECK(t.has("alpha", "count"));
    CHECK_FALSE(t.has("alpha", "missing"));
    CHECK_FALSE(t.has("gamma", "count"));
}

TEST_CASE("table falls back on missing keys and promotes ints to reals") {
    const ConfigTable t = ConfigTable::parse("[s]\nwhole = 3\n");
    CHECK(t.get_int("s", "absent", 42) == 42);
    CHECK(t.get_real("s", "absent", 1.5) == 1.5);
    CHECK(t.get_bool("s", "absent", true));
    CHECK(t.get_string("s", "absent", "d") == "d");
    CHECK(t.get_real("s", "whole", 0.0) == 3.0);
}

TEST_CASE("table rejects malformed text") {
    CHECK_THROWS_AS(ConfigTable::parse("[s]\nx = 1\nx = 2\n"), ParameterError);
    CHECK_THROWS_AS(ConfigTable::parse("x = 1\n"), ParameterError);       // key before section
    CHECK_THROWS_AS(ConfigTable::parse("[s\nx = 1\n"), ParameterError);   // unterminated header
    CHECK_THROWS_AS(ConfigTable::parse("[s!]\n"), ParameterError);        // bad section name
    CHECK_THROWS_AS(ConfigTable::parse("[s]\nbad key = 1\n"), ParameterError);
    CHECK_THROWS_AS(ConfigTable::parse("[s]\njust a line\n"), ParameterError);
    CHECK_THROWS_AS(ConfigTable::parse("[s]\nx =\n"), ParameterError);    // empty value
    CHECK_THROWS_AS(ConfigTable::parse("[s]\nx = \"open\n"), ParameterError);
    CHECK_THROWS_AS(ConfigTable::parse("[s]\nx = \"a\"b\"\n"), ParameterError);
    CHECK_THROWS_AS(ConfigTable::parse("[s]\nx = [1, 2\n"), ParameterError);
    CHECK_THROWS_AS(ConfigTable::parse("[s]\nx = 99999999999999999999\n"), ParameterError);
    CHECK_THROWS_AS(ConfigTable::parse("[s]\nx = 1.2.3\n"), ParameterError);
    CHECK_THROWS_AS(ConfigTable::parse("[s]\nx = maybe\n"), ParameterError);
}

TEST_CASE("table rejects kind mismatches with the key in the message") {
    const ConfigTable t = ConfigTable::parse("[s]\nword = \"w\"\nnum = 1\nlist = [1]\n");
    CHECK_THROWS_WITH_AS(t.get_int("s", "word", 0), "[s] word must be an integer", ParameterError);
    CHECK_THROWS_AS(t.get_real("s", "word", 0.0), ParameterError);
    CHECK_THROWS_AS(t.get_bool("s", "num", false), ParameterError);
    CHECK_THROWS_AS(t.get_string("s", "num", ""), ParameterError);
    CHECK_THROWS_AS(t.get_int_list("s", "num"), ParameterError);
    CHECK_THROWS_AS(t.get_string_list("s", "list"), ParameterError);
    CHECK(t.get_int_list("s", "list") == std::vector<long long>{1});
}

TEST_CASE("experiment text resolves defaults") {
    const ExperimentConfig cfg = experiment_from_text(kBaseText);
    CHECK(cfg.net.height == 16);
    CHECK(cfg.roster.size() == 3);
    CHECK(cfg.methods == std::vector<Method>{Method::kComposite, Method::kCmlora});
    CHECK(cfg.strategies == std::vector<std::string>{"none"});
    CHECK(cfg.counts == std::vector<int>{3});
    CHECK(cfg.seeds == std::vector<std::uint64_t>{7, 8});
    CHECK(cfg.base.total_steps == 12);
    CHECK(cfg.base.guidance_scale == 10.0);
    CHECK(cfg.base.adapter_weight == 1.0);
    CHECK(cfg.base.skip_index == 1);
    CHECK(cfg.base.tau == 5);
    CHECK(cfg.base.decay);
    CHECK(cfg.base.w_dom_init == -1.0);
    CHECK(cfg.base.stride1 == 2);
    CHECK(cfg.base.stride2 == 3);
    CHECK(cfg.base.cutoff_fraction == 0.2);
    CHECK(cfg.base.interval == 0);
    CHECK(cfg.base.profile_steps == 0);
    CHECK_FALSE(cfg.base.measure_similarity);
    CHECK(cfg.profile_seed == 0);
    CHECK(cfg.output_dir == "out");
}

TEST_CASE("synthetic roster reproduces the generator spread") {
    const ExperimentConfig cfg = experiment_from_text(R"(
[net]
height = 16
width = 16
base_channels = 4
latent_channels = 2
embed_dim = 4

[adapters]
count = 5
rank = 2
scale = 1.1
seed = 50

[run]
methods = ["composite"]
seeds = [1]
)");
    REQUIRE(cfg.roster.size() == 5);
    const auto targets = attention_targets(cfg.net);
    // Five adapters spread evenly: biases 0.1, 0.3, 0.5, 0.7, 0.9.
    for (int i = 0; i < 5; ++i) {
        const LoraAdapter expect = synth_adapter("a" + std::to_string(i), 0.1 + 0.2 * i, 50 + i,
                                                 targets, 2, 1.1);
        CHECK(same_adapter(cfg.roster[i], expect));
    }
}

TEST_CASE("roster honours explicit ids and biases") {
    const ExperimentConfig cfg = experiment_from_text(R"(
[net]
height = 16
width = 16
base_channels = 4
latent_channels = 2
embed_dim = 4

[adapters]
count = 2
rank = 1
seed = 5
ids = ["style", "subject"]
biases = [0.25, 0.75]

[run]
methods = ["switch"]
seeds = [1]
)");
    REQUIRE(cfg.roster.size() == 2);
    CHECK(cfg.roster[0].id == "style");
    CHECK(cfg.roster[1].id == "subject");
    const auto targets = attention_targets(cfg.net);
    CHECK(same_adapter(cfg.roster[0], synth_adapter("style", 0.25, 5, targets, 1, 1.4)));
    CHECK(same_adapter(cfg.roster[1], synth_adapter("subject", 0.75, 6, targets, 1, 1.4)));
}

TEST_CASE("roster loads from container files") {
    const auto dir = scratch_dir("files");
    const auto targets = attention_targets(DenoiserSpec{3, 4, 2, 16, 16, 4, {}, 0});
    const LoraAdapter one = synth_adapter("one", 0.2, 11, targets, 2, 1.4);
    const LoraAdapter two = synth_adapter("two", 0.8, 12, targets, 2, 1.4);
    save_adapter_file(one, (dir / "one.lfad").string());
    save_adapter_file(two, (dir / "two.lfad").string());

    const std::string text = std::string(R"(
[net]
height = 16
width = 16
base_channels = 4
latent_channels = 2
embed_dim = 4

[adapters]
files = [")") + (dir / "one.lfad").string() + "\", \"" + (dir / "two.lfad").string() + R"("]

[run]
methods = ["composite"]
seeds = [1]
)";
    const ExperimentConfig cfg = experiment_from_text(text);
    REQUIRE(cfg.roster.size() == 2);
    CHECK(same_adapter(cfg.roster[0], one));
    CHECK(same_adapter(cfg.roster[1], two));
    CHECK(cfg.counts == std::vector<int>{2});
    std::filesystem::remove_all(dir);
}

TEST_CASE("experiment text rejects inconsistent declarations") {
    const auto reject = [](const std::string& patch) {
        CHECK_THROWS_AS(experiment_from_text(patch), Error);
    };
    reject("[run]\nmethods = [\"composite\"]\nseeds = [1]\n");  // roster missing
    CHECK_NOTHROW(experiment_from_text(std::string(kBaseText) + "[extra]\n"));  // idle section
    reject(R"(
[adapters]
count = 2
files = ["x.lfad"]

[run]
methods = ["composite"]
seeds = [1]
)");
    reject(R"(
[adapters]
count = 2
biases = [0.5]

[run]
methods = ["composite"]
seeds = [1]
)");
    reject(R"(
[adapters]
count = 2
ids = ["same", "same"]

[run]
methods = ["composite"]
seeds = [1]
)");
    reject(R"(
[adapters]
count = 0

[run]
methods = ["composite"]
seeds = [1]
)");
    reject(R"(
[adapters]
count = 2
seed = -4

[run]
methods = ["composite"]
seeds = [1]
)");
    reject(R"(
[adapters]
count = 2

[run]
methods = ["blend"]
seeds = [1]
)");
    reject(R"(
[adapters]
count = 2

[run]
methods = ["composite"]
strategies = ["adaptive"]
seeds = [1]
)");
    reject(R"(
[adapters]
count = 2

[run]
methods = ["composite"]
counts = [3]
seeds = [1]
)");
    reject(R"(
[adapters]
count = 2

[run]
methods = ["composite"]
seeds = []
)");
    reject(R"(
[adapters]
count = 2

[run]
methods = []
seeds = [1]
)");
    reject(R"(
[adapters]
count = 2

[run]
methods = ["composite"]
seeds = [-1]
)");
}

TEST_CASE("baseline-only experiments need no roster") {
    const ExperimentConfig cfg = experiment_from_text(R"(
[run]
methods = ["naive"]
seeds = [3]
)");
    CHECK(cfg.roster.empty());
    CHECK(cfg.counts.empty());
    const RunConfig run = cfg.make_run(Method::kNaive, 0, "none", 3);
    CHECK(run.adapters.empty());
    CHECK_NOTHROW(run.validate());
}

TEST_CASE("make_run stamps one matrix cell") {
    const ExperimentConfig cfg = experiment_from_text(kBaseText);
    const RunConfig run = cfg.make_run(Method::kCmlora, 2, "dynamic", 8);
    CHECK(run.method == Method::kCmlora);
    CHECK(run.cache_strategy == "dynamic");
    CHECK(run.seed == 8);
    REQUIRE(run.adapters.size() == 2);
    CHECK(run.adapters[0].id == "a0");
    CHECK(run.adapters[1].id == "a1");
    CHECK_FALSE(run.partition.has_value());
    CHECK(run.total_steps == 12);
    CHECK_THROWS_AS(cfg.make_run(Method::kComposite, 4, "none", 1), ParameterError);
    CHECK_THROWS_AS(cfg.make_run(Method::kComposite, 0, "none", 1), ParameterError);
}

TEST_CASE("load_experiment reads files and decorates errors with the path") {
    const auto dir = scratch_dir("load");
    const auto path = (dir / "exp.toml").string();
    write_file_text(path, kBaseText);
    const ExperimentConfig cfg = load_experiment(path);
    CHECK(cfg.roster.size() == 3);

    write_file_text(path, "[run]\nmethods = [\"composite\"]\nseeds = [1]\n");
    try {
        load_experiment(path);
        FAIL("expected a config error");
    } catch (const ParameterError& e) {
        CHECK(std::string(e.what()).find(path) != std::string::npos);
    }
    CHECK_THROWS_AS(load_experiment((dir / "missing.toml").string()), IoError);
    std::filesystem::remove_all(dir);
}
