#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dipstop/optimizer.hpp"

namespace dipstop {

enum class SeriesKind { total_loss, df_mc, psnr_to_y, psnr_to_x, psnr_ema_to_x, df_gt };
inline constexpr std::size_t kSeriesCount = 6;
inline constexpr std::array<SeriesKind, kSeriesCount> kAllSeries{SeriesKind::total_loss, SeriesKind::df_mc,
                                                                  SeriesKind::psnr_to_y,  SeriesKind::psnr_to_x,
                                                                  SeriesKind::psnr_ema_to_x, SeriesKind::df_gt};

std::string to_string(SeriesKind s);
/// Throws ArgumentError on unknown names.
SeriesKind parse_series_kind(std::string_view s);

/// Values of one series on the bundle grid; empty cells lie outside the run.
using Series = std::vector<std::optional<double>>;

struct BundleRun {
    std::string name;
    Objective objective = Objective::ste;
    int stop_iter = 0;
    StopReason stop_reason = StopReason::max_iters;
    /// Last logged iteration; the run is marked ended after it.
    int end_iter = 0;
    /// Indexed by SeriesKind. A series the trace never logged is absent (nullopt).
    std::array<std::optional<Series>, kSeriesCount> series;

    const std::optional<Series>& get(SeriesKind s) const { return series[static_cast<std::size_t>(s)]; }
    friend bool operator==(const BundleRun&, const BundleRun&) = default;
};

struct TrajectoryBundle {
    /// Sorted union of the logged iterations of all runs.
    std::vector<int> grid;
    std::vector<BundleRun> runs;

    friend bool operator==(const TrajectoryBundle&, const TrajectoryBundle&) = default;
};

/// Aligns traces on a common grid. Duplicate labels get "#2", "#3", ... in
/// input order. Throws ArgumentError for an empty list.
TrajectoryBundle build_bundle(const std::vector<RunTrace>& traces);

struct CrossingReport {
    std::string dip_run;
    std::string ste_run;
    /// Last upward crossing of the dip df_gt curve over the ste curve, after
    /// which dip stays above (linear interpolation between grid points); ste
    /// is held at its last value after it stops. Empty if dip ends below ste.
    std::optional<double> intersection_iter;
    int dip_peak_iter = 0;
    double dip_peak_psnr = 0.0;
    /// |intersection - peak| and that gap relative to the peak iteration.
    std::optional<double> gap;
    std::optional<double> relative_gap;
};

/// Needs exactly one dip and one ste run, both with df_gt and psnr_to_x
/// series. Throws CapabilityError otherwise.
CrossingReport crossing_report(const TrajectoryBundle& bundle);

enum class CurveFormat { csv, svg };
/// Accepts "csv", "svg" and "svg-plot". Throws ArgumentError otherwise.
CurveFormat parse_curve_format(std::string_view s);

/// CSV: `# run=` header lines with run metadata, an optional `# crossing=`
/// line, then the column row `iter,<run>:<series>,...` (absent series are
/// omitted) and one row per grid point, numbers at 17 significant digits.
/// SVG: one panel per series, one polyline per run, one stop marker per run.
/// Throws IoError when the file cannot be written.
void export_curves(const TrajectoryBundle& bundle, const std::filesystem::path& path, CurveFormat format);

/// Reads a CSV written by export_curves. Throws IoError.
TrajectoryBundle import_curves_csv(const std::filesystem::path& path);

}  // namespace dipstop
