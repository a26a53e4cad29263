#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lorafuse/composer.hpp"

namespace lorafuse {

// One parsed config value. Integers and floats are kept apart so that
// seed-sized integers survive untruncated; as_real promotes integers.
struct ConfigValue {
    enum class Kind { kString, kInt, kFloat, kBool, kArray };

    Kind kind = Kind::kString;
    std::string text;
    long long integer = 0;
    double real = 0.0;
    bool flag = false;
    std::vector<ConfigValue> items;
};

// Structured key/value text: [section] headers, key = value lines, '#'
// comments outside quotes. Values are quoted strings, integers, floats,
// booleans, or flat arrays of those. Duplicate keys within a section are
// rejected; reopening a section merges into it.
class ConfigTable {
public:
    static ConfigTable parse(const std::string& text);

    bool has(const std::string& section, const std::string& key) const;

    // Scalar lookups fall back when the key is absent and throw
    // ParameterError when the stored kind does not match.
    long long get_int(const std::string& section, const std::string& key,
                      long long fallback) const;
    double get_real(const std::string& section, const std::string& key, double fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;

    // Array lookups return empty when the key is absent.
    std::vector<long long> get_int_list(const std::string& section, const std::string& key) const;
    std::vector<double> get_real_list(const std::string& section, const std::string& key) const;
    std::vector<std::string> get_string_list(const std::string& section,
                                             const std::string& key) const;

private:
    const ConfigValue* find(const std::string& section, const std::string& key) const;

    std::map<std::string, std::map<std::string, ConfigValue>> sections_;
};

// A resolved experiment: the denoiser, the adapter roster, and the run
// matrix (methods x roster prefixes x cache strategies x seeds). The base
// run carries every shared knob; make_run stamps one matrix cell onto it.
struct ExperimentConfig {
    DenoiserSpec net;
    std::vector<LoraAdapter> roster;

    std::vector<Method> methods;
    std::vector<std::string> strategies;  // "none" | "uniform" | "dynamic"
    std::vector<int> counts;              // leading-roster sizes to compose
    std::vector<std::uint64_t> seeds;

    RunConfig base;                 // adapters left empty; filled per cell
    std::uint64_t profile_seed = 0; // seed for the standalone profile pass
    std::string output_dir = "out";

    void validate() const;
    RunConfig make_run(Method method, int count, const std::string& strategy,
                       std::uint64_t seed) const;
};

ExperimentConfig experiment_from_text(const std::string& text);
ExperimentConfig load_experiment(const std::string& path);

}  // namespace lorafuse
