#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dipstop/errors.hpp"
#include "dipstop/image.hpp"
#include "dipstop/network.hpp"

namespace dipstop {

enum class Objective { dip, dip_sure, ste, pure };
enum class BaselineInput { noisy_image, fixed_noise };
enum class StopReason { zero_crossing, max_iters };

std::string to_string(Objective o);
std::string to_string(BaselineInput b);
std::string to_string(StopReason r);
/// These throw ConfigError on unknown names.
Objective parse_objective(std::string_view s);
BaselineInput parse_baseline_input(std::string_view s);
StopReason parse_stop_reason(std::string_view s);

struct RunConfig {
    Objective objective = Objective::ste;
    double sigma = 0.0;
    /// Width of the uniform perturbation level; unset means b = sigma.
    std::optional<double> b;
    double zeta = 0.0;
    double eps = 1e-3;
    double lr = 0.1;
    int max_iters = 5000;
    double ema_beta = 0.99;
    int stop_window = 1;
    std::uint64_t seed = 0;
    BaselineInput baseline_input = BaselineInput::fixed_noise;

    double effective_b() const { return b.value_or(sigma); }
    /// Throws ConfigError for out-of-range fields or fields missing for the objective.
    void validate() const;
};

struct TraceRecord {
    int iter = 0;
    double total_loss = 0.0;
    double data_fidelity = 0.0;
    double divergence_term = 0.0;
    std::optional<double> df_mc;
    double psnr_to_y = 0.0;
    std::optional<double> psnr_to_x;
    std::optional<double> psnr_ema_to_x;
    std::optional<double> df_gt;
};

struct RunTrace {
    std::string label;
    Objective objective = Objective::ste;
    std::vector<TraceRecord> records;
    int stop_iter = 0;
    StopReason stop_reason = StopReason::max_iters;

    bool has_ground_truth() const { return !records.empty() && records.front().psnr_to_x.has_value(); }
};

struct DenoiseResult {
    Image output_last;
    Image output_ema;
    RunTrace trace;
    /// Iterate with the highest PSNR to x, when ground truth was supplied.
    std::optional<Image> output_peak;
    std::optional<int> peak_iter;

    /// The image a method reports: the EMA for ste and pure, the last
    /// iterate for dip and dip_sure.
    const Image& reported() const;
};

/// Thrown when the loss or its gradient becomes non-finite. Carries the
/// trace up to the last finite record.
class NonFiniteError : public Error {
public:
    NonFiniteError(const std::string& what, RunTrace trace) : Error(what), trace_(std::move(trace)) {}
    const RunTrace& trace() const { return trace_; }

private:
    RunTrace trace_;
};

/// beta * prev + (1 - beta) * next; an empty prev returns next.
/// Throws DomainError unless 0 <= beta < 1.
Image ema_update(const Image& prev, const Image& next, double beta);

/// First index whose trailing mean over `window` losses is <= 0.
/// Windows shorter than `window` (at the start) are not considered.
/// Throws DomainError for window < 1.
std::optional<int> zero_crossing_index(std::span<const double> losses, int window);

/// Rectified Adam in the form used by common deep learning libraries.
class RAdam {
public:
    explicit RAdam(std::size_t n, double lr = 0.1, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(std::span<double> params, std::span<const double> grad);
    int steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<double> m_, v_;
};

/// Per-image optimization of `net` on observation y. Iterations are 0-based;
/// iteration i evaluates the objective at the current parameters, records it,
/// then takes one step unless the run stops at i. With `x` every record also
/// carries PSNR to x and (for Gaussian objectives) df_gt.
DenoiseResult optimize(HourglassNet& net, const Image& y, const RunConfig& cfg, const Image* x = nullptr);

/// Vanilla fit of mse(h(input), y) for cfg.max_iters iterations with oracle
/// peak tracking. Throws ConfigError when x is missing.
DenoiseResult run_baseline_dip(HourglassNet& net, const Image& y, RunConfig cfg, const Image* x);

/// Newline-delimited JSON: one header line, then one line per record.
void write_trace_ndjson(std::ostream& out, const RunTrace& trace);
RunTrace read_trace_ndjson(std::istream& in);
void save_trace(const std::filesystem::path& path, const RunTrace& trace);
/// Reads .ndjson/.jsonl or .csv by extension. Throws IoError.
RunTrace load_trace(const std::filesystem::path& path);

/// CSV with a `# key=value` header block and fixed columns
/// iter,total_loss,data_fidelity,divergence_term,df_mc,psnr_to_y,psnr_to_x,psnr_ema_to_x,df_gt.
/// Absent optional values are empty cells.
void write_trace_csv(std::ostream& out, const RunTrace& trace);
RunTrace read_trace_csv(std::istream& in);

}  // namespace dipstop
