#include "dipstop/cli.hpp"

#include <glob.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "dipstop/diagnostics.hpp"
#include "dipstop/errors.hpp"
#include "dipstop/image_io.hpp"
#include "dipstop/metrics.hpp"
#include "dipstop/phantom.hpp"
#include "dipstop/rng.hpp"

namespace dipstop::cli {

namespace {

std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(std::string_view s)
{
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto comma = s.find(',', start);
        out.emplace_back(trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

double parse_real(std::string_view s)
{
    s = trim(s);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
        throw ConfigError("'" + std::string(s) + "' is not a finite number");
    return v;
}

template <class T>
T parse_int(std::string_view s)
{
    s = trim(s);
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
        throw ConfigError("'" + std::string(s) + "' is not a valid integer");
    return v;
}

// FNV-1a, for stable per-image seed derivation.
std::uint64_t fnv1a(std::string_view s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string format_double(double v)
{
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

nlohmann::json json_number(double v)
{
    if (!std::isfinite(v)) return format_double(v);
    return v;
}

std::string csv_escape(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

const std::vector<std::string> kObjectives{"dip", "dip_sure", "ste", "pure"};

const std::vector<std::string> kRunKeys{"eps",      "lr",           "max_iters",  "ema_beta", "stop_window", "b",
                                        "baseline_input", "channels", "skip_channels", "activation", "upsample", "norm"};
const std::vector<std::string> kDenoiseKeys{"input", "output", "gt", "trace", "noise", "sigma", "zeta", "objective", "seed"};
const std::vector<std::string> kBenchKeys{"corpus", "phantom_kinds", "phantom_size", "phantom_channels", "sigmas", "zetas",
                                          "methods", "seeds", "report", "traces", "threads"};

std::vector<std::string> concat(const std::vector<std::string>& a, const std::vector<std::string>& b)
{
    std::vector<std::string> out = a;
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

void check_choice(const KeyInfo& info, const std::string& v)
{
    if (info.choices.empty() || std::find(info.choices.begin(), info.choices.end(), v) != info.choices.end()) return;
    std::string all;
    for (const auto& c : info.choices) all += (all.empty() ? "" : ", ") + c;
    throw ConfigError(info.key + ": '" + v + "' is not one of " + all);
}

void check_value(const KeyInfo& info, const std::string& v)
{
    try {
        switch (info.type) {
        case ValueType::text: check_choice(info, v); break;
        case ValueType::path: break;
        case ValueType::integer: parse_int<long long>(v); break;
        case ValueType::unsigned_integer: parse_int<std::uint64_t>(v); break;
        case ValueType::real: parse_real(v); break;
        case ValueType::level: parse_level(v); break;
        case ValueType::level_list:
            for (const auto& item : split_list(v)) parse_level(item);
            break;
        case ValueType::int_list:
            for (const auto& item : split_list(v)) parse_int<int>(item);
            break;
        case ValueType::uint_list:
            for (const auto& item : split_list(v)) parse_int<std::uint64_t>(item);
            break;
        case ValueType::word_list:
            for (const auto& item : split_list(v)) check_choice(info, item);
            break;
        }
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        if (msg.rfind(info.key + ":", 0) == 0) throw;
        throw ConfigError(info.key + ": " + msg);
    }
}

std::string type_name(ValueType t)
{
    switch (t) {
    case ValueType::text: return "word";
    case ValueType::path: return "path";
    case ValueType::integer: return "int";
    case ValueType::unsigned_integer: return "uint";
    case ValueType::real: return "float";
    case ValueType::level: return "level";
    case ValueType::level_list: return "level list";
    case ValueType::int_list: return "int list";
    case ValueType::uint_list: return "uint list";
    case ValueType::word_list: return "word list";
    }
    return "?";
}

/// Error-to-exit-code mapping shared by every subcommand.
template <class F>
int guarded(std::ostream& err, F&& body)
{
    try {
        return body();
    } catch (const NonFiniteError& e) {
        err << "error: " << e.what() << '\n';
        return kExitNonFinite;
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ArgumentError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DomainError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ShapeError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const SizeError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const CapabilityError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

/// Parses `args` with `app`; returns an exit code when parsing ends the command.
std::optional<int> parse_args(CLI::App& app, const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return kExitOk;
        }
        err << "error: " << e.what() << "\nRun with --help for usage.\n";
        return kExitUsage;
    }
    return std::nullopt;
}

/// One option per key, named after the key; values override the config file.
class KeyFlags {
public:
    KeyFlags(CLI::App& app, const std::vector<std::string>& keys)
    {
        app.add_option("--config", config_, "Config file of `key = value` lines");
        for (const auto& key : keys) {
            const KeyInfo& info = key_info(key);
            std::string help = info.help;
            if (!info.default_value.empty()) help += " [default: " + info.default_value + "]";
            options_.emplace_back(key, app.add_option(flag_name(key), values_[key], help));
        }
    }

    Settings resolve() const
    {
        Settings s = Settings::defaults();
        if (!config_.empty()) s.merge_file(config_);
        for (const auto& [key, opt] : options_)
            if (opt->count() > 0) s.set(key, values_.at(key));
        return s;
    }

private:
    std::string config_;
    std::map<std::string, std::string> values_;
    std::vector<std::pair<std::string, CLI::Option*>> options_;
};

}  // namespace

double parse_level(std::string_view text)
{
    const std::string_view s = trim(text);
    const auto slash = s.find('/');
    double v = 0.0;
    if (slash == std::string_view::npos) {
        v = parse_real(s);
    } else {
        const double num = parse_real(s.substr(0, slash));
        const double den = parse_real(s.substr(slash + 1));
        if (!(den > 0.0)) throw ConfigError("'" + std::string(s) + "': denominator must be > 0");
        v = num / den;
    }
    if (!(v >= 0.0)) throw ConfigError("'" + std::string(s) + "': level must be >= 0");
    return v;
}

const std::vector<KeyInfo>& config_schema()
{
    static const std::vector<KeyInfo> schema{
        {"input", ValueType::path, "", "Noisy input image (PNG or PNM)", {}},
        {"output", ValueType::path, "", "Denoised output image", {}},
        {"gt", ValueType::path, "", "Clean reference image; enables PSNR and df_gt logging", {}},
        {"trace", ValueType::path, "", "Trace file (.csv, .ndjson or .jsonl)", {}},
        {"noise", ValueType::text, "gaussian", "Noise model", {"gaussian", "poisson"}},
        {"sigma", ValueType::level, "", "Gaussian noise level on the [0,1] scale, or N/255", {}},
        {"zeta", ValueType::real, "", "Poisson noise scale", {}},
        {"objective", ValueType::text, "ste", "Training objective", kObjectives},
        {"seed", ValueType::unsigned_integer, "0", "Seed for network init and per-iteration randomness", {}},
        {"eps", ValueType::real, "0.001", "Finite-difference step of the Poisson objective", {}},
        {"lr", ValueType::real, "0.1", "Learning rate", {}},
        {"max_iters", ValueType::integer, "5000", "Iteration cap", {}},
        {"ema_beta", ValueType::real, "0.99", "Output averaging factor", {}},
        {"stop_window", ValueType::integer, "1", "Losses averaged by the zero-crossing test", {}},
        {"b", ValueType::level, "", "Upper bound of the perturbation level; defaults to sigma", {}},
        {"baseline_input", ValueType::text, "fixed_noise", "Network input of the dip objective",
         {"fixed_noise", "noisy_image"}},
        {"channels", ValueType::int_list, "32,64,64,128", "Feature channels per level", {}},
        {"skip_channels", ValueType::int_list, "", "Skip channels per level; defaults to 4 at every level", {}},
        {"activation", ValueType::text, "leaky_relu", "Activation", {"leaky_relu", "softplus"}},
        {"upsample", ValueType::text, "bilinear", "Upsampling", {"bilinear", "nearest"}},
        {"norm", ValueType::text, "batch", "Normalization", {"batch", "none"}},
        {"corpus", ValueType::text, "phantoms", "phantoms, or dir:PATH for a directory of clean images", {}},
        {"phantom_kinds", ValueType::word_list, "disks", "Phantoms in the corpus",
         {"gradient", "checkerboard", "disks", "text-like"}},
        {"phantom_size", ValueType::integer, "64", "Phantom side length", {}},
        {"phantom_channels", ValueType::integer, "1", "Phantom channels (1 or 3)", {}},
        {"sigmas", ValueType::level_list, "25/255", "Gaussian levels of the grid", {}},
        {"zetas", ValueType::level_list, "", "Poisson scales of the grid", {}},
        {"methods", ValueType::word_list, "ste", "Objectives of the grid", kObjectives},
        {"seeds", ValueType::uint_list, "0", "Seeds of the grid", {}},
        {"report", ValueType::path, "", "Report path; .csv and .json files are written next to it", {}},
        {"traces", ValueType::path, "", "Directory for per-cell trace files", {}},
        {"threads", ValueType::integer, "0", "Worker count, 0 for one per hardware thread", {}},
    };
    return schema;
}

const KeyInfo& key_info(std::string_view key)
{
    for (const auto& info : config_schema())
        if (info.key == key) return info;
    throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string flag_name(std::string_view key)
{
    std::string f = "--" + std::string(key);
    std::replace(f.begin(), f.end(), '_', '-');
    return f;
}

Settings Settings::defaults()
{
    Settings s;
    for (const auto& info : config_schema())
        if (!info.default_value.empty()) s.values_[info.key] = info.default_value;
    return s;
}

void Settings::set(std::string_view key, std::string value)
{
    const KeyInfo& info = key_info(key);
    value = std::string(trim(value));
    if (value.empty()) {
        values_.erase(info.key);
        return;
    }
    check_value(info, value);
    values_[info.key] = std::move(value);
}

void Settings::merge_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    std::string line;
    std::set<std::string> seen;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        std::string_view l = line;
        if (const auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
        l = trim(l);
        if (l.empty()) continue;
        const auto where = path.string() + ":" + std::to_string(lineno) + ": ";
        const auto eq = l.find('=');
        if (eq == std::string_view::npos) throw ConfigError(where + "expected `key = value`");
        const std::string key(trim(l.substr(0, eq)));
        if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
        try {
            set(key, std::string(l.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
}

bool Settings::has(std::string_view key) const { return values_.find(key) != values_.end(); }

const std::string& Settings::text(std::string_view key) const
{
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(std::string(key) + " is required (" + flag_name(key) + ")");
    return it->second;
}

std::optional<std::string> Settings::optional_text(std::string_view key) const
{
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

double Settings::real(std::string_view key) const
{
    return key_info(key).type == ValueType::level ? parse_level(text(key)) : parse_real(text(key));
}

std::optional<double> Settings::optional_real(std::string_view key) const
{
    if (!has(key)) return std::nullopt;
    return real(key);
}

long long Settings::integer(std::string_view key) const { return parse_int<long long>(text(key)); }

std::uint64_t Settings::unsigned_integer(std::string_view key) const { return parse_int<std::uint64_t>(text(key)); }

std::vector<double> Settings::levels(std::string_view key) const
{
    std::vector<double> out;
    if (const auto t = optional_text(key))
        for (const auto& item : split_list(*t)) out.push_back(parse_level(item));
    return out;
}

std::vector<int> Settings::ints(std::string_view key) const
{
    std::vector<int> out;
    if (const auto t = optional_text(key))
        for (const auto& item : split_list(*t)) out.push_back(parse_int<int>(item));
    return out;
}

std::vector<std::uint64_t> Settings::uints(std::string_view key) const
{
    std::vector<std::uint64_t> out;
    if (const auto t = optional_text(key))
        for (const auto& item : split_list(*t)) out.push_back(parse_int<std::uint64_t>(item));
    return out;
}

std::vector<std::string> Settings::words(std::string_view key) const
{
    if (const auto t = optional_text(key)) return split_list(*t);
    return {};
}

std::map<std::string, std::string> Settings::entries(const std::vector<std::string>& keys) const
{
    std::map<std::string, std::string> out;
    for (const auto& key : keys)
        if (const auto v = optional_text(key)) out[key] = *v;
    return out;
}

std::string Settings::echo(const std::vector<std::string>& keys) const
{
    std::ostringstream os;
    for (const auto& info : config_schema()) {
        if (std::find(keys.begin(), keys.end(), info.key) == keys.end()) continue;
        if (const auto v = optional_text(info.key)) os << info.key << " = " << *v << '\n';
    }
    return os.str();
}

ArchSpec arch_from(const Settings& s)
{
    ArchSpec spec;
    spec.channels = s.ints("channels");
    spec.depth = static_cast<int>(spec.channels.size());
    spec.skip_channels = s.has("skip_channels") ? s.ints("skip_channels") : std::vector<int>(spec.channels.size(), 4);
    spec.activation = parse_activation(s.text("activation"));
    spec.upsample = parse_upsample(s.text("upsample"));
    spec.norm = parse_norm(s.text("norm"));
    spec.validate();
    return spec;
}

RunConfig run_config_from(const Settings& s)
{
    RunConfig cfg;
    cfg.eps = s.real("eps");
    cfg.lr = s.real("lr");
    const long long iters = s.integer("max_iters");
    const long long window = s.integer("stop_window");
    if (iters < 1 || iters > 100'000'000) throw ConfigError("max_iters out of range");
    if (window < 1 || window > 1'000'000) throw ConfigError("stop_window out of range");
    cfg.max_iters = static_cast<int>(iters);
    cfg.stop_window = static_cast<int>(window);
    cfg.ema_beta = s.real("ema_beta");
    cfg.b = s.optional_real("b");
    cfg.baseline_input = parse_baseline_input(s.text("baseline_input"));
    return cfg;
}

unsigned pool_width(long long requested)
{
    if (requested < 0) throw ConfigError("threads must be >= 0");
    unsigned width = requested > 0 ? static_cast<unsigned>(std::min<long long>(requested, 1024))
                                   : std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("DIPSTOP_THREADS"); env && *env) {
        long long cap = 0;
        try {
            cap = parse_int<long long>(env);
        } catch (const ConfigError&) {
            throw ConfigError(std::string("DIPSTOP_THREADS: '") + env + "' is not an integer");
        }
        if (cap < 1) throw ConfigError("DIPSTOP_THREADS must be >= 1");
        width = std::min<unsigned>(width, static_cast<unsigned>(std::min<long long>(cap, 1024)));
    }
    return width;
}

// ------------------------------------------------------------------ bench

namespace {

struct BenchImage {
    std::string id;
    std::optional<PhantomKind> phantom;
    Image clean;  // directory corpus only
};

struct BenchCell {
    std::size_t image;
    NoiseKind noise;
    double level;
    Objective method;
    std::uint64_t seed;
};

std::vector<BenchImage> load_corpus(const Settings& s)
{
    std::vector<BenchImage> images;
    const std::string& corpus = s.text("corpus");
    if (corpus == "phantoms") {
        for (const auto& k : s.words("phantom_kinds")) images.push_back({k, parse_phantom_kind(k), {}});
    } else if (corpus.rfind("dir:", 0) == 0) {
        const std::filesystem::path dir = corpus.substr(4);
        std::error_code ec;
        if (!std::filesystem::is_directory(dir, ec)) throw IoError("corpus directory '" + dir.string() + "' not found");
        std::vector<std::filesystem::path> files;
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            std::string ext = entry.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
            if (entry.is_regular_file() && (ext == ".png" || ext == ".pgm" || ext == ".ppm" || ext == ".pnm"))
                files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) images.push_back({f.filename().string(), std::nullopt, read_image(f)});
    } else {
        throw ConfigError("corpus must be 'phantoms' or 'dir:PATH'");
    }
    if (images.empty()) throw ConfigError("the corpus is empty");
    return images;
}

bool compatible(Objective m, NoiseKind k)
{
    if (m == Objective::dip) return true;
    if (m == Objective::pure) return k == NoiseKind::poisson;
    return k == NoiseKind::gaussian;
}

void parallel_for(std::size_t n, unsigned width, const std::function<void(std::size_t)>& fn)
{
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
    };
    if (width <= 1 || n <= 1) {
        worker();
        return;
    }
    std::vector<std::jthread> pool;
    for (unsigned k = 0; k < std::min<std::size_t>(width, n); ++k) pool.emplace_back(worker);
}

std::string trace_name(const BenchRow& r)
{
    char level[32];
    std::snprintf(level, sizeof level, "%.6g", r.noise == NoiseKind::gaussian ? r.level * 255.0 : r.level);
    std::string stem = std::filesystem::path(r.image_id).stem().string();
    return stem + "_" + to_string(r.noise) + level + "_" + to_string(r.method) + "_s" + std::to_string(r.seed) + ".csv";
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<BenchAggregate> aggregate(const std::vector<BenchRow>& rows)
{
    std::vector<BenchAggregate> out;
    std::vector<Objective> order;
    for (const auto& r : rows)
        if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
    for (Objective m : order) {
        std::vector<double> p, q;
        for (const auto& r : rows)
            if (r.method == m && r.ok) {
                p.push_back(r.psnr);
                q.push_back(r.ssim);
            }
        BenchAggregate a;
        a.method = m;
        a.count = static_cast<int>(p.size());
        if (!p.empty()) {
            a.mean_psnr = std::accumulate(p.begin(), p.end(), 0.0) / p.size();
            a.mean_ssim = std::accumulate(q.begin(), q.end(), 0.0) / q.size();
            a.median_psnr = median(p);
            a.median_ssim = median(q);
        }
        out.push_back(a);
    }
    return out;
}

BenchReport run_bench(const Settings& s)
{
    BenchReport report;
    report.config = s.entries(concat(kBenchKeys, kRunKeys));

    const std::vector<BenchImage> images = load_corpus(s);
    const ArchSpec arch = arch_from(s);
    const RunConfig base = run_config_from(s);
    const long long size = s.integer("phantom_size");
    const long long channels = s.integer("phantom_channels");
    if (size < Image::kMinSide || size > 4096) throw ConfigError("phantom_size out of range");
    if (channels != 1 && channels != 3) throw ConfigError("phantom_channels must be 1 or 3");

    std::vector<Objective> methods;
    for (const auto& m : s.words("methods")) methods.push_back(parse_objective(m));
    const auto seeds = s.uints("seeds");
    std::vector<std::pair<NoiseKind, double>> levels;
    for (double v : s.levels("sigmas")) levels.emplace_back(NoiseKind::gaussian, v);
    for (double v : s.levels("zetas")) {
        if (!(v > 0.0)) throw ConfigError("zetas must be > 0");
        levels.emplace_back(NoiseKind::poisson, v);
    }
    if (methods.empty() || seeds.empty() || levels.empty()) throw ConfigError("the grid is empty");
    for (Objective m : methods)
        if (std::none_of(levels.begin(), levels.end(), [&](const auto& l) { return compatible(m, l.first); }))
            throw ConfigError(to_string(m) + " has no matching noise level in the grid");

    std::vector<BenchCell> cells;
    for (std::size_t i = 0; i < images.size(); ++i)
        for (const auto& [kind, level] : levels)
            for (Objective m : methods)
                if (compatible(m, kind))
                    for (auto seed : seeds) cells.push_back({i, kind, level, m, seed});

    const std::optional<std::string> trace_dir = s.optional_text("traces");
    if (trace_dir) std::filesystem::create_directories(*trace_dir);

    report.rows.resize(cells.size());
    parallel_for(cells.size(), pool_width(s.integer("threads")), [&](std::size_t idx) {
        const BenchCell& cell = cells[idx];
        const BenchImage& img = images[cell.image];
        BenchRow& row = report.rows[idx];
        row.image_id = img.id;
        row.noise = cell.noise;
        row.level = cell.level;
        row.method = cell.method;
        row.seed = cell.seed;
        row.noise_seed = derive_seed(cell.seed, stream::kObservation,
                                     fnv1a(img.id) ^ std::bit_cast<std::uint64_t>(cell.level));
        if (img.phantom) row.phantom_seed = cell.seed;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const Image x = img.phantom ? generate_phantom(*img.phantom, static_cast<int>(size), static_cast<int>(size),
                                                           static_cast<int>(channels), cell.seed)
                                        : img.clean;
            const Image y = cell.noise == NoiseKind::gaussian ? add_gaussian_noise(x, cell.level, row.noise_seed)
                                                              : add_poisson_noise(x, cell.level, row.noise_seed);
            RunConfig cfg = base;
            cfg.objective = cell.method;
            cfg.seed = cell.seed;
            if (cell.noise == NoiseKind::gaussian)
                cfg.sigma = cell.level;
            else
                cfg.zeta = cell.level;
            cfg.validate();
            HourglassNet net = HourglassNet::init(arch, x.channels(), cell.seed);
            DenoiseResult r = cell.method == Objective::dip ? run_baseline_dip(net, y, cfg, &x) : optimize(net, y, cfg, &x);
            const QualityReport q = quality(r.reported(), x);
            row.psnr = q.psnr_db;
            row.ssim = q.ssim;
            row.psnr_last = psnr(r.output_last, x);
            row.psnr_ema = psnr(r.output_ema, x);
            row.peak_psnr = psnr(*r.output_peak, x);
            row.peak_iter = *r.peak_iter;
            row.stop_iter = r.trace.stop_iter;
            row.stop_reason = r.trace.stop_reason;
            row.df_gt_final = r.trace.records.back().df_gt;
            if (trace_dir) {
                r.trace.label = to_string(cell.method);
                save_trace(std::filesystem::path(*trace_dir) / trace_name(row), r.trace);
            }
            row.ok = true;
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
        row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    });
    report.aggregates = aggregate(report.rows);
    return report;
}

void write_bench_report(const std::filesystem::path& path, const BenchReport& report)
{
    std::filesystem::path base = path;
    if (base.extension() == ".csv" || base.extension() == ".json") base.replace_extension();
    if (base.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(base.parent_path(), ec);
    }
    auto open = [](const std::filesystem::path& p) {
        std::ofstream f(p, std::ios::binary);
        if (!f) throw IoError("cannot write '" + p.string() + "'");
        return f;
    };
    auto header = [&](std::ostream& os) {
        os << "# schema=" << kBenchSchema << '\n';
        for (const auto& [k, v] : report.config) os << "# config." << k << '=' << v << '\n';
    };

    {
        std::ofstream f = open(base.string() + ".csv");
        header(f);
        f << "image_id,noise,level,method,seed,noise_seed,phantom_seed,status,psnr,ssim,psnr_last,psnr_ema,"
             "peak_psnr,peak_iter,stop_iter,stop_reason,df_gt_final,wall_time_s,error\n";
        for (const auto& r : report.rows) {
            f << csv_escape(r.image_id) << ',' << to_string(r.noise) << ',' << format_double(r.level) << ','
              << to_string(r.method) << ',' << r.seed << ',' << r.noise_seed << ','
              << (r.phantom_seed ? std::to_string(*r.phantom_seed) : "") << ',' << (r.ok ? "ok" : "failed");
            if (r.ok) {
                f << ',' << format_double(r.psnr) << ',' << format_double(r.ssim) << ',' << format_double(r.psnr_last)
                  << ',' << format_double(r.psnr_ema) << ',' << format_double(r.peak_psnr) << ',' << r.peak_iter << ','
                  << r.stop_iter << ',' << to_string(r.stop_reason) << ','
                  << (r.df_gt_final ? format_double(*r.df_gt_final) : "");
            } else {
                f << ",,,,,,,,,";
            }
            f << ',' << format_double(r.wall_time_s) << ',' << csv_escape(r.error) << '\n';
        }
        if (!f) throw IoError("failed writing the csv report");
    }
    {
        std::ofstream f = open(base.string() + ".aggregate.csv");
        header(f);
        f << "method,count,mean_psnr,median_psnr,mean_ssim,median_ssim\n";
        for (const auto& a : report.aggregates)
            f << to_string(a.method) << ',' << a.count << ',' << format_double(a.mean_psnr) << ','
              << format_double(a.median_psnr) << ',' << format_double(a.mean_ssim) << ','
              << format_double(a.median_ssim) << '\n';
        if (!f) throw IoError("failed writing the aggregate report");
    }
    {
        using nlohmann::json;
        json j;
        j["schema"] = kBenchSchema;
        j["config"] = report.config;
        j["rows"] = json::array();
        for (const auto& r : report.rows) {
            json row{{"image_id", r.image_id},
                     {"noise", to_string(r.noise)},
                     {"level", r.level},
                     {"method", to_string(r.method)},
                     {"seed", r.seed},
                     {"noise_seed", r.noise_seed},
                     {"status", r.ok ? "ok" : "failed"},
                     {"wall_time_s", r.wall_time_s}};
            if (r.phantom_seed) row["phantom_seed"] = *r.phantom_seed;
            if (r.ok) {
                row["psnr"] = json_number(r.psnr);
                row["ssim"] = r.ssim;
                row["psnr_last"] = json_number(r.psnr_last);
                row["psnr_ema"] = json_number(r.psnr_ema);
                row["peak_psnr"] = json_number(r.peak_psnr);
                row["peak_iter"] = r.peak_iter;
                row["stop_iter"] = r.stop_iter;
                row["stop_reason"] = to_string(r.stop_reason);
                if (r.df_gt_final) row["df_gt_final"] = *r.df_gt_final;
            } else {
                row["error"] = r.error;
            }
            j["rows"].push_back(std::move(row));
        }
        j["aggregates"] = json::array();
        for (const auto& a : report.aggregates)
            j["aggregates"].push_back({{"method", to_string(a.method)},
                                       {"count", a.count},
                                       {"mean_psnr", json_number(a.mean_psnr)},
                                       {"median_psnr", json_number(a.median_psnr)},
                                       {"mean_ssim", a.mean_ssim},
                                       {"median_ssim", a.median_ssim}});
        std::ofstream f = open(base.string() + ".json");
        f << j.dump(2) << '\n';
        if (!f) throw IoError("failed writing the json report");
    }
}

// --------------------------------------------------------------- commands

int cmd_denoise(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Denoise one image by per-image network optimization", "dipstop denoise"};
    KeyFlags flags(app, concat(kDenoiseKeys, kRunKeys));
    if (auto code = parse_args(app, args, out, err)) return *code;

    return guarded(err, [&] {
        const Settings s = flags.resolve();
        const std::string input = s.text("input");
        const std::string output = s.text("output");

        RunConfig cfg = run_config_from(s);
        cfg.objective = parse_objective(s.text("objective"));
        cfg.seed = s.unsigned_integer("seed");
        const NoiseKind kind = parse_noise_kind(s.text("noise"));
        if (kind == NoiseKind::gaussian) {
            if (s.has("zeta")) throw ConfigError("--zeta applies to poisson noise only");
            cfg.sigma = s.real("sigma");
        } else {
            if (s.has("sigma")) throw ConfigError("--sigma applies to gaussian noise only");
            cfg.zeta = s.real("zeta");
            if (!(cfg.zeta > 0.0)) throw ConfigError("zeta must be > 0");
        }
        cfg.validate();
        const ArchSpec arch = arch_from(s);

        const Image y = read_image(input);
        std::optional<Image> gt;
        if (const auto p = s.optional_text("gt")) {
            gt = read_image(*p);
            require_same_shape(*gt, y, "denoise: --gt");
        }
        const auto trace_path = s.optional_text("trace");

        HourglassNet net = HourglassNet::init(arch, y.channels(), cfg.seed);
        DenoiseResult r;
        try {
            r = optimize(net, y, cfg, gt ? &*gt : nullptr);
        } catch (const NonFiniteError& e) {
            if (trace_path) {
                RunTrace partial = e.trace();
                partial.label = to_string(cfg.objective);
                save_trace(*trace_path, partial);
            }
            throw;
        }
        r.trace.label = to_string(cfg.objective);
        write_image(output, r.output_ema);
        if (trace_path) save_trace(*trace_path, r.trace);

        out << "objective=" << to_string(cfg.objective) << " stop_iter=" << r.trace.stop_iter
            << " stop_reason=" << to_string(r.trace.stop_reason);
        if (gt) out << " psnr_ema=" << format_double(psnr(r.output_ema, *gt))
                    << " psnr_last=" << format_double(psnr(r.output_last, *gt));
        out << '\n';
        return static_cast<int>(kExitOk);
    });
}

int cmd_bench(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Run a method x image x noise level x seed benchmark grid", "dipstop bench"};
    KeyFlags flags(app, concat(kBenchKeys, kRunKeys));
    if (auto code = parse_args(app, args, out, err)) return *code;

    return guarded(err, [&] {
        const Settings s = flags.resolve();
        const std::string report_path = s.text("report");
        out << s.echo(concat(kBenchKeys, kRunKeys));
        const BenchReport report = run_bench(s);
        write_bench_report(report_path, report);

        int failed = 0;
        for (const auto& r : report.rows) {
            if (r.ok) continue;
            ++failed;
            err << "failed: " << r.image_id << ' ' << to_string(r.method) << " seed " << r.seed << ": " << r.error << '\n';
        }
        char line[160];
        for (const auto& a : report.aggregates) {
            std::snprintf(line, sizeof line, "%-9s n=%-3d mean_psnr=%.3f median_psnr=%.3f mean_ssim=%.4f\n",
                          to_string(a.method).c_str(), a.count, a.mean_psnr, a.median_psnr, a.mean_ssim);
            out << line;
        }
        return static_cast<int>(failed ? kExitPartial : kExitOk);
    });
}

int cmd_curves(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Export aligned trajectories of saved traces", "dipstop curves"};
    std::string pattern, out_path, format = "csv";
    app.add_option("--traces", pattern, "Glob of trace files")->required();
    app.add_option("--out", out_path, "Output file")->required();
    app.add_option("--format", format, "csv or svg-plot")->capture_default_str();
    if (auto code = parse_args(app, args, out, err)) return *code;

    return guarded(err, [&] {
        const CurveFormat fmt = parse_curve_format(format);
        glob_t g{};
        std::vector<std::string> files;
        if (::glob(pattern.c_str(), 0, nullptr, &g) == 0)
            for (std::size_t i = 0; i < g.gl_pathc; ++i) files.emplace_back(g.gl_pathv[i]);
        ::globfree(&g);
        if (files.empty()) throw ArgumentError("no trace files match '" + pattern + "'");

        std::vector<RunTrace> traces;
        for (const auto& f : files) {
            RunTrace t = load_trace(f);
            if (t.label.empty()) t.label = std::filesystem::path(f).stem().string();
            traces.push_back(std::move(t));
        }
        const TrajectoryBundle bundle = build_bundle(traces);
        export_curves(bundle, out_path, fmt);
        out << "runs=" << bundle.runs.size() << " grid=" << bundle.grid.size() << " out=" << out_path << '\n';
        try {
            const CrossingReport rep = crossing_report(bundle);
            out << "dip_peak_iter=" << rep.dip_peak_iter << " intersection_iter="
                << (rep.intersection_iter ? format_double(*rep.intersection_iter) : "none") << '\n';
        } catch (const CapabilityError&) {
        }
        return static_cast<int>(kExitOk);
    });
}

int cmd_config(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Inspect and create config files", "dipstop config"};
    app.require_subcommand(1);
    std::vector<std::string> all;
    for (const auto& info : config_schema()) all.push_back(info.key);

    CLI::App* show = app.add_subcommand("show", "Print the effective config after the file and flag overrides");
    KeyFlags flags(*show, all);
    CLI::App* init = app.add_subcommand("init", "Write a config file with every key and its default");
    std::string init_path;
    bool force = false;
    init->add_option("path", init_path, "Config file to create")->required();
    init->add_flag("--force", force, "Overwrite an existing file");
    app.add_subcommand("schema", "List the keys with their types and defaults");
    if (auto code = parse_args(app, args, out, err)) return *code;

    return guarded(err, [&] {
        if (show->parsed()) {
            out << flags.resolve().echo(all);
        } else if (init->parsed()) {
            if (!force && std::filesystem::exists(init_path))
                throw IoError("'" + init_path + "' exists; pass --force to overwrite");
            std::ofstream f(init_path);
            if (!f) throw IoError("cannot write '" + init_path + "'");
            for (const auto& info : config_schema()) {
                f << "# " << info.help << " (" << type_name(info.type) << ")\n";
                f << (info.default_value.empty() ? "# " : "") << info.key << " = " << info.default_value << "\n\n";
            }
            if (!f) throw IoError("failed writing '" + init_path + "'");
        } else {
            for (const auto& info : config_schema()) {
                out << info.key << '\t' << type_name(info.type) << '\t'
                    << (info.default_value.empty() ? "-" : info.default_value) << '\t' << info.help << '\n';
            }
        }
        return static_cast<int>(kExitOk);
    });
}

int cmd_phantom(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Write a synthetic test image, optionally with a noisy copy", "dipstop phantom"};
    std::string kind = "disks", out_path, noisy_path, sigma, zeta;
    int size = 64, channels = 1;
    std::uint64_t seed = 0, noise_seed = 0;
    app.add_option("--kind", kind, "gradient, checkerboard, disks or text-like")->capture_default_str();
    app.add_option("--size", size, "Side length")->capture_default_str();
    app.add_option("--channels", channels, "1 or 3")->capture_default_str();
    app.add_option("--seed", seed, "Phantom seed")->capture_default_str();
    app.add_option("--out", out_path, "Clean image path")->required();
    app.add_option("--noisy", noisy_path, "Also write a noisy copy (clipped and quantized by the file format)");
    auto* sigma_opt = app.add_option("--sigma", sigma, "Gaussian level, number or N/255");
    auto* zeta_opt = app.add_option("--zeta", zeta, "Poisson scale");
    sigma_opt->excludes(zeta_opt);
    app.add_option("--noise-seed", noise_seed, "Noise seed")->capture_default_str();
    if (auto code = parse_args(app, args, out, err)) return *code;

    return guarded(err, [&] {
        const Image x = generate_phantom(parse_phantom_kind(kind), size, size, channels, seed);
        write_image(out_path, x);
        if (!noisy_path.empty()) {
            if (sigma.empty() && zeta.empty()) throw ConfigError("--noisy needs --sigma or --zeta");
            const Image y = sigma.empty() ? add_poisson_noise(x, parse_level(zeta), noise_seed)
                                          : add_gaussian_noise(x, parse_level(sigma), noise_seed);
            write_image(noisy_path, y);
        }
        return static_cast<int>(kExitOk);
    });
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    static const char* usage =
        "usage: dipstop <command> [options]\n"
        "\n"
        "commands:\n"
        "  denoise   denoise one image\n"
        "  bench     run a benchmark grid and write a report\n"
        "  curves    export trajectories of saved traces\n"
        "  config    show, create or describe config files\n"
        "  phantom   write a synthetic test image\n"
        "\n"
        "Run `dipstop <command> --help` for the options of a command.\n";
    if (args.empty()) {
        err << usage;
        return kExitUsage;
    }
    const std::string& cmd = args.front();
    const std::vector<std::string> rest(args.begin() + 1, args.end());
    if (cmd == "denoise") return cmd_denoise(rest, out, err);
    if (cmd == "bench") return cmd_bench(rest, out, err);
    if (cmd == "curves") return cmd_curves(rest, out, err);
    if (cmd == "config") return cmd_config(rest, out, err);
    if (cmd == "phantom") return cmd_phantom(rest, out, err);
    if (cmd == "-h" || cmd == "--help" || cmd == "help") {
        out << usage;
        return kExitOk;
    }
    err << "unknown command '" << cmd << "'\n" << usage;
    return kExitUsage;
}

}  // namespace dipstop::cli
