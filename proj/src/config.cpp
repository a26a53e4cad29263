#include "lorafuse/config.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

#include "lorafuse/errors.hpp"
#include "lorafuse/io.hpp"

namespace lorafuse {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// Cut an unquoted '#' and everything after it.
std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        else if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    return true;
}

bool integer_shaped(const std::string& s) {
    std::size_t i = (s[0] == '+' || s[0] == '-') ? 1 : 0;
    if (i == s.size()) return false;
    for (; i < s.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
}

ConfigValue parse_scalar(const std::string& token, const std::string& where) {
    ConfigValue v;
    if (token.empty()) throw ParameterError(where + ": empty value");
    if (token.front() == '"') {
        if (token.size() < 2 || token.back() != '"')
            throw ParameterError(where + ": unterminated string");
        const std::string body = token.substr(1, token.size() - 2);
        if (body.find('"') != std::string::npos)
            throw ParameterError(where + ": stray quote inside string");
        v.kind = ConfigValue::Kind::kString;
        v.text = body;
        return v;
    }
    if (token == "true" || token == "false") {
        v.kind = ConfigValue::Kind::kBool;
        v.flag = token == "true";
        return v;
    }
    if (integer_shaped(token)) {
        v.kind = ConfigValue::Kind::kInt;
        try {
            v.integer = std::stoll(token);
        } catch (const std::out_of_range&) {
            throw ParameterError(where + ": integer out of range");
        }
        return v;
    }
    std::size_t used = 0;
    try {
        v.real = std::stod(token, &used);
    } catch (const std::exception&) {
        throw ParameterError(where + ": bad value '" + token + "'");
    }
    if (used != token.size()) throw ParameterError(where + ": bad value '" + token + "'");
    v.kind = ConfigValue::Kind::kFloat;
    return v;
}

// Split "[a, b, c]" on unquoted commas; no nesting.
ConfigValue parse_array(const std::string& token, const std::string& where) {
    if (token.size() < 2 || token.back() != ']')
        throw ParameterError(where + ": unterminated array");
    ConfigValue v;
    v.kind = ConfigValue::Kind::kArray;
    const std::string body = token.substr(1, token.size() - 2);
    if (trim(body).empty()) return v;
    std::string piece;
    bool quoted = false;
    for (char c : body) {
        if (c == '"') quoted = !quoted;
        if (c == ',' && !quoted) {
            v.items.push_back(parse_scalar(trim(piece), where));
            piece.clear();
        } else {
            piece += c;
        }
    }
    if (quoted) throw ParameterError(where + ": unterminated string");
    v.items.push_back(parse_scalar(trim(piece), where));
    return v;
}

std::string spot(const std::string& section, const std::string& key) {
    return "[" + section + "] " + key;
}

}  // namespace

ConfigTable ConfigTable::parse(const std::string& text) {
    ConfigTable table;
    std::string section;
    std::size_t pos = 0;
    int line_no = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string line = text.substr(pos, nl == std::string::npos ? nl : nl - pos);
        pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        const std::string where = "config line " + std::to_string(line_no);
        if (line.front() == '[') {
            if (line.back() != ']') throw ParameterError(where + ": unterminated section");
            section = trim(line.substr(1, line.size() - 2));
            if (!valid_name(section)) throw ParameterError(where + ": bad section name");
            table.sections_[section];
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw ParameterError(where + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (!valid_name(key)) throw ParameterError(where + ": bad key name");
        if (section.empty()) throw ParameterError(where + ": key before any [section]");
        const std::string value = trim(line.substr(eq + 1));
        ConfigValue parsed = value.empty() || value.front() != '['
                                 ? parse_scalar(value, where)
                                 : parse_array(value, where);
        if (!table.sections_[section].emplace(key, std::move(parsed)).second)
            throw ParameterError(where + ": duplicate key " + spot(section, key));
    }
    return table;
}

const ConfigValue* ConfigTable::find(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    const auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
}

bool ConfigTable::has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
}

long long ConfigTable::get_int(const std::string& section, const std::string& key,
                               long long fallback) const {
    const ConfigValue* v = find(section, key);
    if (!v) return fallback;
    if (v->kind != ConfigValue::Kind::kInt)
        throw ParameterError(spot(section, key) + " must be an integer");
    return v->integer;
}

double ConfigTable::get_real(const std::string& section, const std::string& key,
                             double fallback) const {
    const ConfigValue* v = find(section, key);
    if (!v) return fallback;
    if (v->kind == ConfigValue::Kind::kInt) return static_cast<double>(v->integer);
    if (v->kind != ConfigValue::Kind::kFloat)
        throw ParameterError(spot(section, key) + " must be a number");
    return v->real;
}

bool ConfigTable::get_bool(const std::string& section, const std::string& key,
                           bool fallback) const {
    const ConfigValue* v = find(section, key);
    if (!v) return fallback;
    if (v->kind != ConfigValue::Kind::kBool)
        throw ParameterError(spot(section, key) + " must be true or false");
    return v->flag;
}

std::string ConfigTable::get_string(const std::string& section, const std::string& key,
                                    const std::string& fallback) const {
    const ConfigValue* v = find(section, key);
    if (!v) return fallback;
    if (v->kind != ConfigValue::Kind::kString)
        throw ParameterError(spot(section, key) + " must be a quoted string");
    return v->text;
}

std::vector<long long> ConfigTable::get_int_list(const std::string& section,
                                                 const std::string& key) const {
    const ConfigValue* v = find(section, key);
    std::vector<long long> out;
    if (!v) return out;
    if (v->kind != ConfigValue::Kind::kArray)
        throw ParameterError(spot(section, key) + " must be an array");
    for (const auto& item : v->items) {
        if (item.kind != ConfigValue::Kind::kInt)
            throw ParameterError(spot(section, key) + " must hold integers");
        out.push_back(item.integer);
    }
    return out;
}

std::vector<double> ConfigTable::get_real_list(const std::string& section,
                                               const std::string& key) const {
    const ConfigValue* v = find(section, key);
    std::vector<double> out;
    if (!v) return out;
    if (v->kind != ConfigValue::Kind::kArray)
        throw ParameterError(spot(section, key) + " must be an array");
    for (const auto& item : v->items) {
        if (item.kind == ConfigValue::Kind::kInt) out.push_back(static_cast<double>(item.integer));
        else if (item.kind == ConfigValue::Kind::kFloat) out.push_back(item.real);
        else throw ParameterError(spot(section, key) + " must hold numbers");
    }
    return out;
}

std::vector<std::string> ConfigTable::get_string_list(const std::string& section,
                                                      const std::string& key) const {
    const ConfigValue* v = find(section, key);
    std::vector<std::string> out;
    if (!v) return out;
    if (v->kind != ConfigValue::Kind::kArray)
        throw ParameterError(spot(section, key) + " must be an array");
    for (const auto& item : v->items) {
        if (item.kind != ConfigValue::Kind::kString)
            throw ParameterError(spot(section, key) + " must hold quoted strings");
        out.push_back(item.text);
    }
    return out;
}

namespace {

std::uint64_t to_seed(long long v, const std::string& where) {
    if (v < 0) throw ParameterError(where + " must be non-negative");
    return static_cast<std::uint64_t>(v);
}

// Even spread over [0.1, 0.9]; five adapters land on 0.1, 0.3, ..., 0.9.
std::vector<double> default_biases(int count) {
    std::vector<double> biases(count);
    for (int i = 0; i < count; ++i)
        biases[i] = count == 1 ? 0.5 : 0.1 + 0.8 * i / (count - 1);
    return biases;
}

std::vector<LoraAdapter> build_roster(const ConfigTable& t, const DenoiserSpec& spec) {
    std::vector<LoraAdapter> roster;
    const std::vector<std::string> files = t.get_string_list("adapters", "files");
    if (!files.empty()) {
        if (t.has("adapters", "count"))
            throw ParameterError("[adapters] give either files or count, not both");
        for (const auto& f : files) roster.push_back(load_adapter_file(f));
        return roster;
    }
    if (!t.has("adapters", "count")) return roster;
    const int count = static_cast<int>(t.get_int("adapters", "count", 0));
    if (count < 1) throw ParameterError("[adapters] count must be positive");
    const int rank = static_cast<int>(t.get_int("adapters", "rank", 2));
    const double scale = t.get_real("adapters", "scale", 1.4);
    const std::uint64_t seed = to_seed(t.get_int("adapters", "seed", 1), "[adapters] seed");
    std::vector<double> biases = t.get_real_list("adapters", "biases");
    if (biases.empty()) biases = default_biases(count);
    if (static_cast<int>(biases.size()) != count)
        throw ParameterError("[adapters] biases must list one value per adapter");
    std::vector<std::string> ids = t.get_string_list("adapters", "ids");
    if (ids.empty())
        for (int i = 0; i < count; ++i) ids.push_back("a" + std::to_string(i));
    if (static_cast<int>(ids.size()) != count)
        throw ParameterError("[adapters] ids must list one name per adapter");
    const auto targets = attention_targets(spec);
    for (int i = 0; i < count; ++i)
        roster.push_back(synth_adapter(ids[i], biases[i], seed + i, targets, rank, scale));
    return roster;
}

}  // namespace

void ExperimentConfig::validate() const {
    net.validate();
    if (methods.empty()) throw ParameterError("[run] methods must be non-empty");
    if (seeds.empty()) throw ParameterError("[run] seeds must be non-empty");
    if (strategies.empty()) throw ParameterError("[run] strategies must be non-empty");
    for (const auto& s : strategies)
        if (s != "none" && s != "uniform" && s != "dynamic")
            throw ParameterError("unknown cache strategy '" + s + "'");
    std::set<std::string> ids;
    for (const auto& a : roster) {
        a.validate();
        if (!ids.insert(a.id).second) throw ParameterError("duplicate adapter id " + a.id);
    }
    const bool all_naive =
        std::all_of(methods.begin(), methods.end(), [](Method m) { return m == Method::kNaive; });
    if (all_naive) return;
    if (roster.empty()) throw ParameterError("composition methods need an adapter roster");
    if (counts.empty()) throw ParameterError("[run] counts must be non-empty");
    for (int c : counts)
        if (c < 1 || c > static_cast<int>(roster.size()))
            throw ParameterError("[run] counts entries must lie in [1, roster size]");
}

RunConfig ExperimentConfig::make_run(Method method, int count, const std::string& strategy,
                                     std::uint64_t seed) const {
    RunConfig run = base;
    run.method = method;
    run.cache_strategy = strategy;
    run.seed = seed;
    run.partition.reset();
    if (method != Method::kNaive) {
        if (count < 1 || count > static_cast<int>(roster.size()))
            throw ParameterError("adapter count out of range");
        run.adapters.assign(roster.begin(), roster.begin() + count);
    }
    return run;
}

ExperimentConfig experiment_from_text(const std::string& text) {
    const ConfigTable t = ConfigTable::parse(text);
    ExperimentConfig cfg;

    cfg.net.depth = static_cast<int>(t.get_int("net", "depth", cfg.net.depth));
    cfg.net.base_channels = static_cast<int>(t.get_int("net", "base_channels", cfg.net.base_channels));
    cfg.net.latent_channels =
        static_cast<int>(t.get_int("net", "latent_channels", cfg.net.latent_channels));
    cfg.net.height = static_cast<int>(t.get_int("net", "height", cfg.net.height));
    cfg.net.width = static_cast<int>(t.get_int("net", "width", cfg.net.width));
    cfg.net.embed_dim = static_cast<int>(t.get_int("net", "embed_dim", cfg.net.embed_dim));
    cfg.net.seed = to_seed(t.get_int("net", "seed", 0), "[net] seed");

    cfg.roster = build_roster(t, cfg.net);

    cfg.base.total_steps = static_cast<int>(t.get_int("run", "steps", 200));
    cfg.base.guidance_scale = t.get_real("run", "guidance", 10.0);
    cfg.base.adapter_weight = t.get_real("run", "weight", 1.0);
    cfg.base.skip_index = static_cast<int>(t.get_int("run", "skip_index", 1));
    cfg.base.tau = static_cast<int>(t.get_int("run", "tau", 5));
    cfg.base.decay = t.get_bool("run", "decay", true);
    cfg.base.w_dom_init = t.get_real("run", "w_dom", -1.0);
    cfg.base.stride1 = static_cast<int>(t.get_int("run", "stride1", 2));
    cfg.base.stride2 = static_cast<int>(t.get_int("run", "stride2", 3));
    cfg.base.measure_similarity = t.get_bool("run", "measure_similarity", false);

    cfg.base.profile_steps = static_cast<int>(t.get_int("profile", "steps", 0));
    cfg.base.cutoff_fraction = t.get_real("profile", "cutoff", 0.2);
    cfg.base.interval = static_cast<int>(t.get_int("profile", "interval", 0));
    cfg.profile_seed = to_seed(t.get_int("profile", "seed", 0), "[profile] seed");

    for (const auto& m : t.get_string_list("run", "methods")) cfg.methods.push_back(parse_method(m));
    cfg.strategies = t.get_string_list("run", "strategies");
    if (cfg.strategies.empty()) cfg.strategies.push_back("none");
    for (long long c : t.get_int_list("run", "counts")) cfg.counts.push_back(static_cast<int>(c));
    if (cfg.counts.empty() && !cfg.roster.empty())
        cfg.counts.push_back(static_cast<int>(cfg.roster.size()));
    for (long long s : t.get_int_list("run", "seeds"))
        cfg.seeds.push_back(to_seed(s, "[run] seeds"));

    cfg.output_dir = t.get_string("output", "dir", "out");

    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment(const std::string& path) {
    const std::vector<unsigned char> bytes = read_file_bytes(path);
    try {
        return experiment_from_text(std::string(bytes.begin(), bytes.end()));
    } catch (const Error& e) {
        throw ParameterError(path + ": " + e.what());
    }
}

}  // namespace lorafuse
