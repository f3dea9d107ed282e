#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dipstop/network.hpp"
#include "dipstop/noise.hpp"
#include "dipstop/optimizer.hpp"

namespace dipstop::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitUsage = 2,
    kExitIo = 3,
    kExitNonFinite = 4,
    kExitPartial = 5,
};

/// A noise level given as a plain number ("0.1") or a fraction ("25/255").
/// Throws ConfigError.
double parse_level(std::string_view text);

enum class ValueType { text, path, integer, unsigned_integer, real, level, level_list, int_list, uint_list, word_list };

struct KeyInfo {
    std::string key;
    ValueType type;
    /// Empty means unset by default.
    std::string default_value;
    std::string help;
    /// Allowed values for text keys (or list items); empty allows any.
    std::vector<std::string> choices;
};

/// Every key a config file may contain, in echo order.
const std::vector<KeyInfo>& config_schema();
const KeyInfo& key_info(std::string_view key);

/// Flag spelling of a key: max_iters -> --max-iters.
std::string flag_name(std::string_view key);

/// Flat key-value configuration. Values are stored as text and checked
/// against the schema type on assignment.
class Settings {
public:
    static Settings defaults();

    /// Throws ConfigError for unknown keys or malformed values.
    void set(std::string_view key, std::string value);
    /// `key = value` lines; '#' starts a comment. Throws IoError or ConfigError.
    void merge_file(const std::filesystem::path& path);

    bool has(std::string_view key) const;
    const std::string& text(std::string_view key) const;
    std::optional<std::string> optional_text(std::string_view key) const;
    double real(std::string_view key) const;
    std::optional<double> optional_real(std::string_view key) const;
    long long integer(std::string_view key) const;
    std::uint64_t unsigned_integer(std::string_view key) const;
    std::vector<double> levels(std::string_view key) const;
    std::vector<int> ints(std::string_view key) const;
    std::vector<std::uint64_t> uints(std::string_view key) const;
    std::vector<std::string> words(std::string_view key) const;

    /// `key = value` for the given keys that are set, in schema order.
    std::string echo(const std::vector<std::string>& keys) const;
    std::map<std::string, std::string> entries(const std::vector<std::string>& keys) const;

private:
    std::map<std::string, std::string, std::less<>> values_;
};

ArchSpec arch_from(const Settings& s);
/// Run settings shared by every command, without noise level or objective.
RunConfig run_config_from(const Settings& s);

/// Worker count: `requested` (0 means one per hardware thread), capped by
/// DIPSTOP_THREADS when set. Throws ConfigError for a malformed variable.
unsigned pool_width(long long requested);

struct BenchRow {
    std::string image_id;
    NoiseKind noise = NoiseKind::gaussian;
    double level = 0.0;
    Objective method = Objective::ste;
    std::uint64_t seed = 0;
    std::uint64_t noise_seed = 0;
    std::optional<std::uint64_t> phantom_seed;
    bool ok = false;
    std::string error;
    double psnr = 0.0;
    double ssim = 0.0;
    double psnr_last = 0.0;
    double psnr_ema = 0.0;
    double peak_psnr = 0.0;
    int peak_iter = 0;
    int stop_iter = 0;
    StopReason stop_reason = StopReason::max_iters;
    std::optional<double> df_gt_final;
    double wall_time_s = 0.0;
};

struct BenchAggregate {
    Objective method = Objective::ste;
    int count = 0;
    double mean_psnr = 0.0;
    double median_psnr = 0.0;
    double mean_ssim = 0.0;
    double median_ssim = 0.0;
};

struct BenchReport {
    std::map<std::string, std::string> config;
    std::vector<BenchRow> rows;
    std::vector<BenchAggregate> aggregates;
};

inline constexpr const char* kBenchSchema = "dipstop.bench/1";

/// Runs the method x image x level x seed grid described by the bench keys.
/// Gaussian levels pair with dip, dip_sure and ste; Poisson levels with dip
/// and pure. Cell failures are recorded in their row. When `traces` is set
/// every cell also writes its trace there.
BenchReport run_bench(const Settings& s);
std::vector<BenchAggregate> aggregate(const std::vector<BenchRow>& rows);
/// Writes <base>.csv, <base>.aggregate.csv and <base>.json, where base is
/// `path` without a .csv or .json extension.
void write_bench_report(const std::filesystem::path& path, const BenchReport& report);

/// Subcommands take their arguments without the program and command names.
int cmd_denoise(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cmd_bench(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cmd_curves(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cmd_config(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cmd_phantom(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Dispatches on the first argument.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dipstop::cli
